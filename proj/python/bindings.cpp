#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "nhfm/cli.hpp"
#include "nhfm/error.hpp"
#include "nhfm/explain.hpp"
#include "nhfm/metrics.hpp"
#include "nhfm/training.hpp"

namespace py = pybind11;
using namespace nhfm;

namespace {

ScoredSet scored(std::vector<double> scores, std::vector<int> labels) {
  return ScoredSet{std::move(scores), std::move(labels)};
}

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

/// A preprocessed dataset directory plus one of its splits.
struct LoadedSplit {
  cli::LoadedData data;
  SplitTag tag;
  const Dataset& dataset() const { return data.split(tag); }
};

py::dict evaluation_dict(const Evaluation& e) {
  py::dict d;
  d["count"] = e.count;
  d["positives"] = e.positives;
  d["auc"] = e.auc ? py::cast(*e.auc) : py::none();
  d["spauc"] = e.spauc ? py::cast(*e.spauc) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Neural hierarchical factorization machine: training, evaluation and reports";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  // Metrics.
  m.def("auc", [](std::vector<double> s, std::vector<int> l) { return auc(scored(std::move(s), std::move(l))); },
        py::arg("scores"), py::arg("labels"), "Mann-Whitney ROC AUC.");
  m.def("spauc",
        [](std::vector<double> s, std::vector<int> l, double c) {
          return spauc(scored(std::move(s), std::move(l)), c);
        },
        py::arg("scores"), py::arg("labels"), py::arg("fpr_ceiling") = 0.01,
        "McClish-standardized partial AUC over FPR <= fpr_ceiling.");
  m.def("mean_ci",
        [](std::vector<double> values, double level) {
          const RunSummary r = mean_ci(values, level);
          return py::make_tuple(r.mean, r.halfwidth, r.format());
        },
        py::arg("values"), py::arg("level") = 0.95,
        "Mean, t-based CI halfwidth and the formatted \"mean±halfwidth\".");
  m.def("ttest_ind", [](std::vector<double> a, std::vector<double> b) { return ttest_ind(a, b); },
        py::arg("a"), py::arg("b"), "Two-sided Welch t-test p-value.");

  // Checkpoints.
  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("variant", [](const Checkpoint& c) { return std::string(to_string(c.model.variant)); })
      .def_property_readonly("model_config", [](const Checkpoint& c) { return c.model.to_json().dump(); })
      .def_property_readonly("epoch", [](const Checkpoint& c) { return c.metadata.epoch; })
      .def_property_readonly("seed", [](const Checkpoint& c) { return c.metadata.seed; })
      .def_property_readonly("best_valid_auc", [](const Checkpoint& c) { return c.metadata.best_valid_auc; })
      .def_property_readonly("parameter_names",
                             [](const Checkpoint& c) {
                               std::vector<std::string> names;
                               for (std::size_t i = 0; i < c.params.size(); ++i) names.push_back(c.params.name(i));
                               return names;
                             })
      .def("parameter",
           [](const Checkpoint& c, const std::string& name) {
             const auto id = c.params.find(name);
             if (!id) throw py::key_error(name);
             return to_numpy(c.params[*id]);
           },
           py::arg("name"))
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(p, c); });
  m.def("load_checkpoint", py::overload_cast<const std::filesystem::path&>(&load_checkpoint), py::arg("path"));

  // Preprocessed data.
  py::class_<LoadedSplit>(m, "Dataset")
      .def("__len__", [](const LoadedSplit& s) { return s.dataset().size(); })
      .def_property_readonly("split", [](const LoadedSplit& s) { return std::string(to_string(s.tag)); })
      .def_property_readonly("n_features", [](const LoadedSplit& s) { return s.data.schema->n(); })
      .def_property_readonly("labels",
                             [](const LoadedSplit& s) {
                               std::vector<int> labels;
                               for (const auto& seq : s.dataset().sequences) labels.push_back(seq.label);
                               return labels;
                             })
      .def_property_readonly("users", [](const LoadedSplit& s) {
        std::vector<std::string> users;
        for (const auto& seq : s.dataset().sequences) users.push_back(seq.user);
        return users;
      });
  m.def("load_dataset",
        [](const std::filesystem::path& dir, const std::string& split) {
          return LoadedSplit{cli::load_preprocessed(dir), split_tag_from_string(split)};
        },
        py::arg("directory"), py::arg("split") = "test");

  m.def("predict",
        [](const Checkpoint& c, const LoadedSplit& s, std::size_t workers) {
          std::vector<double> p;
          {
            py::gil_scoped_release release;
            p = predict_dataset(c.params, c.model, s.dataset(), workers);
          }
          return py::array_t<double>(static_cast<py::ssize_t>(p.size()), p.data());
        },
        py::arg("checkpoint"), py::arg("dataset"), py::arg("workers") = 1,
        "Predicted probabilities in dataset order.");
  m.def("evaluate",
        [](const Checkpoint& c, const LoadedSplit& s, double fpr_ceiling, std::size_t workers) {
          if (c.schema_hash != s.data.schema->hash()) {
            throw DataError("checkpoint was trained on a different feature schema");
          }
          Evaluation e;
          {
            py::gil_scoped_release release;
            e = evaluate(c.params, c.model, s.dataset(), fpr_ceiling, workers);
          }
          return evaluation_dict(e);
        },
        py::arg("checkpoint"), py::arg("dataset"), py::arg("fpr_ceiling") = 0.01, py::arg("workers") = 1);

  m.def("top_wide_features",
        [](const Checkpoint& c, const LoadedSplit& s, std::size_t count, const std::string& direction) {
          const FeatureRanking r = top_wide_features(c, *s.data.schema, count, direction_from_string(direction));
          py::list out;
          for (const auto& e : r.entries) {
            py::dict d;
            d["index"] = e.index;
            d["field"] = e.field;
            d["token"] = e.token;
            d["kind"] = std::string(to_string(e.kind));
            d["weight"] = e.weight;
            out.append(d);
          }
          return out;
        },
        py::arg("checkpoint"), py::arg("dataset"), py::arg("count") = 10, py::arg("direction") = "high",
        "Wide-part weights ranked by raw value.");

  m.def("run",
        [](std::vector<std::string> args) {
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = cli::run(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command line; returns (exit code, stdout, stderr).");
}
