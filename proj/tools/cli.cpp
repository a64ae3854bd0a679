#include "nhfm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "nhfm/error.hpp"
#include "nhfm/explain.hpp"
#include "nhfm/metrics.hpp"

namespace nhfm::cli {
namespace {

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(what + ": " + e.what());
  }
}

SourceKind source_from_string(const std::string& s) {
  if (s == "movielens") return SourceKind::kMovieLens;
  if (s == "generic") return SourceKind::kGeneric;
  if (s == "synthetic") return SourceKind::kSynthetic;
  throw UsageError("unknown data kind '" + s + "' (expected movielens, generic or synthetic)");
}

std::vector<Variant> parse_variants(const nlohmann::json& j) {
  std::vector<Variant> out;
  auto add = [&](const std::string& name) {
    const Variant v = variant_from_string(name);
    if (std::find(out.begin(), out.end(), v) != out.end()) {
      throw UsageError("variant '" + name + "' listed twice");
    }
    out.push_back(v);
  };
  if (j.is_string()) {
    std::stringstream ss(j.get<std::string>());
    for (std::string item; std::getline(ss, item, ',');) add(item);
  } else {
    for (const auto& item : j) add(item.get<std::string>());
  }
  if (out.empty()) throw UsageError("no model variant selected");
  return out;
}

std::string fmt(double v, int decimals = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string abbreviate(std::size_t n) {
  char buf[32];
  if (n >= 1000000) {
    std::snprintf(buf, sizeof buf, "%.2gM", n / 1e6);
  } else if (n >= 1000) {
    std::snprintf(buf, sizeof buf, "%.0fK", n / 1e3);
  } else {
    std::snprintf(buf, sizeof buf, "%zu", n);
  }
  return buf;
}

// Left-aligns to `width` display columns; "±" is two bytes but one column.
std::string pad(std::string s, std::size_t width) {
  const auto columns = static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
  if (columns < width) s.append(width - columns, ' ');
  return s;
}

std::string summary_cell(const std::vector<double>& values) {
  if (values.empty()) return "n/a";
  if (values.size() == 1) return fmt(values.front()) + " (CI needs >= 2 seeds)";
  return mean_ci(values).format();
}

fs::path variant_dir(const fs::path& out, Variant v, std::size_t variant_count) {
  return variant_count == 1 ? out : out / std::string(to_string(v));
}

fs::path seed_dir(const fs::path& base, std::uint64_t seed) {
  return base / ("seed-" + std::to_string(seed));
}

std::vector<fs::path> checkpoints_in(const fs::path& run_dir) {
  std::vector<std::pair<std::uint64_t, fs::path>> found;
  if (!fs::is_directory(run_dir)) throw DataError("run directory " + run_dir.string() + " not found");
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("seed-", 0) == 0 &&
        fs::exists(entry.path() / "checkpoint.nhfm")) {
      found.emplace_back(std::stoull(name.substr(5)), entry.path() / "checkpoint.nhfm");
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [seed, path] : found) out.push_back(path);
  if (out.empty()) throw DataError("no seed-*/checkpoint.nhfm under " + run_dir.string());
  return out;
}

}  // namespace

// --- configuration ---------------------------------------------------------

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  std::string pointer;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw UsageError("override key '" + key + "' has an empty component");
    pointer += "/" + part;
  }
  try {
    j[nlohmann::json::json_pointer(pointer)] = value;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("cannot apply override '" + assignment + "': " + e.what());
  }
}

RunConfig RunConfig::parse(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  RunConfig c;
  c.json = j;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.kind = source_from_string(d.value("kind", std::string("synthetic")));
      c.data.path = d.value("path", std::string());
      c.data.t_max = d.value("t_max", c.data.t_max);
      if (d.contains("ratios")) {
        auto r = d.at("ratios").get<std::vector<double>>();
        if (r.size() != 3) throw UsageError("data.ratios needs three values");
        c.data.ratios = {r[0], r[1], r[2]};
      }
      if (d.contains("fields")) {
        for (const auto& f : d.at("fields")) {
          c.data.fields.push_back(
              {f.at("name").get<std::string>(),
               field_kind_from_string(f.value("kind", std::string("categorical")))});
        }
      }
      if (d.contains("synthetic")) c.data.synthetic = SyntheticSpec::from_json(d.at("synthetic"));
      c.data.synthetic.t_max = d.contains("synthetic") && d.at("synthetic").contains("t_max")
                                   ? c.data.synthetic.t_max
                                   : c.data.t_max;
      if (!(d.contains("synthetic") && d.at("synthetic").contains("max_history"))) {
        c.data.synthetic.max_history = c.data.synthetic.t_max - 1;
      }
      c.data.synthetic.ratios = c.data.ratios;
      c.data.synthetic_seed = d.value("seed", c.data.synthetic_seed);
    }
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("variants")) {
      c.variants = parse_variants(j.at("variants"));
    } else {
      c.variants = {c.model.variant};
    }
    c.fpr_ceiling = j.value("fpr_ceiling", c.fpr_ceiling);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  if (c.seeds.empty()) throw UsageError("config: seeds must not be empty");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    throw UsageError("config: seeds must be distinct");
  }
  if (!(c.fpr_ceiling > 0.0 && c.fpr_ceiling <= 1.0)) {
    throw UsageError("config: fpr_ceiling must lie in (0, 1]");
  }
  c.train.validate();
  return c;
}

RunConfig load_run_config(const std::optional<fs::path>& path,
                          const std::vector<std::string>& overrides) {
  std::string text;
  nlohmann::json j = nlohmann::json::object();
  if (path) {
    if (!fs::is_regular_file(*path)) throw UsageError("config file " + path->string() + " not found");
    text = read_text(*path);
    j = parse_json(text, "config " + path->string());
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = RunConfig::parse(j);
  c.text = text.empty() ? j.dump(2) + "\n" : text;
  return c;
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) {
        throw UsageError("output directory " + dir.string() + " is not empty (pass --force)");
      }
      for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(dir);
}

// --- preprocess ------------------------------------------------------------

nlohmann::json PreprocessStats::to_json() const {
  auto split_json = [](const SplitStats& s) {
    return nlohmann::json{{"sequences", s.sequences}, {"positives", s.positives}, {"negatives", s.negatives}};
  };
  return {{"train", split_json(train)}, {"valid", split_json(valid)}, {"test", split_json(test)},
          {"fields", fields},           {"features", features},       {"events", events},
          {"positives", train.positives + valid.positives + test.positives},
          {"negatives", train.negatives + valid.negatives + test.negatives}};
}

std::string PreprocessStats::table() const {
  const std::size_t pos = train.positives + valid.positives + test.positives;
  const std::size_t neg = train.negatives + valid.negatives + test.negatives;
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-8s %10s %10s %8s %10s\n", "", "#pos", "#neg", "#fields", "#events");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-8s %10s %10s %8zu %10s\n", "dataset", abbreviate(pos).c_str(),
                abbreviate(neg).c_str(), fields, abbreviate(events).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-8s %10zu %10zu %8zu %10zu\n", "exact", pos, neg, fields, events);
  out += buf;
  for (const auto& [name, s] : {std::pair<const char*, const SplitStats&>{"train", train},
                                {"valid", valid},
                                {"test", test}}) {
    std::snprintf(buf, sizeof buf, "%-8s %10zu %10zu %8s %10zu sequences\n", name, s.positives,
                  s.negatives, "", s.sequences);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "feature dictionary size n = %zu\n", features);
  out += buf;
  return out;
}

PreprocessStats cmd_preprocess(const RunConfig& config, const fs::path& out, bool force,
                               std::ostream& log) {
  const DataSource& src = config.data;
  DatasetSplits splits;
  std::size_t events = 0;
  std::size_t field_count = 0;
  std::optional<SyntheticData> synth;
  switch (src.kind) {
    case SourceKind::kMovieLens: {
      if (src.path.empty()) throw UsageError("data.path must name the MovieLens directory");
      IngestStats ingest;
      const RecordTable table = ingest_movielens(MovieLensFiles::in_directory(src.path), &ingest);
      if (ingest.malformed > 0) log << "skipped " << ingest.malformed << " malformed lines\n";
      const auto fields = movielens_fields();
      splits = build_datasets(table, fields, src.t_max, src.ratios, 0);
      events = table.rows.size();
      field_count = fields.size();
      break;
    }
    case SourceKind::kGeneric: {
      if (src.path.empty()) throw UsageError("data.path must name a JSONL file");
      if (src.fields.empty()) throw UsageError("data.fields must list the generic fields");
      const RecordTable table = read_jsonl(src.path);
      splits = build_datasets(table, src.fields, src.t_max, src.ratios, 0);
      events = table.rows.size();
      field_count = src.fields.size();
      break;
    }
    case SourceKind::kSynthetic: {
      synth = synth_generate(src.synthetic, src.synthetic_seed);
      splits = synth->splits;
      events = synth->records.rows.size();
      field_count = splits.train.schema->fields().size();
      break;
    }
  }

  prepare_output_dir(out, force);
  write_text(out / "config.json", config.text);
  splits.train.schema->save(out / "schema.json");
  write_dataset(out / "train.nhfm", splits.train);
  write_dataset(out / "valid.nhfm", splits.valid);
  write_dataset(out / "test.nhfm", splits.test);
  if (synth) {
    auto truth_json = [](const SyntheticTruth& t) {
      return nlohmann::json{{"rule_fires", t.rule_fires}, {"trigger_slot", t.trigger_slot}};
    };
    write_json(out / "truth.json", {{"train", truth_json(synth->train_truth)},
                                    {"valid", truth_json(synth->valid_truth)},
                                    {"test", truth_json(synth->test_truth)}});
  }

  PreprocessStats stats;
  auto fill = [](const Dataset& d) { return SplitStats{d.size(), d.positives(), d.negatives()}; };
  stats.train = fill(splits.train);
  stats.valid = fill(splits.valid);
  stats.test = fill(splits.test);
  stats.fields = field_count;
  stats.features = splits.train.schema->n();
  stats.events = events;
  write_json(out / "stats.json", stats.to_json());
  log << stats.table();
  return stats;
}

const Dataset& LoadedData::split(SplitTag tag) const {
  switch (tag) {
    case SplitTag::kTrain: return train;
    case SplitTag::kValid: return valid;
    case SplitTag::kTest: return test;
  }
  throw UsageError("unknown split");
}

LoadedData load_preprocessed(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw DataError("preprocessed dataset directory " + dir.string() + " not found");
  }
  LoadedData d;
  d.schema = std::make_shared<const FeatureSchema>(FeatureSchema::load(dir / "schema.json"));
  d.train = read_dataset(dir / "train.nhfm", d.schema);
  d.valid = read_dataset(dir / "valid.nhfm", d.schema);
  d.test = read_dataset(dir / "test.nhfm", d.schema);
  return d;
}

// --- train -----------------------------------------------------------------

void cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out, bool force,
               std::ostream& log) {
  const LoadedData data = load_preprocessed(data_dir);
  prepare_output_dir(out, force);
  write_text(out / "config.json", config.text);
  nlohmann::json run = {{"dataset", fs::absolute(data_dir).lexically_normal().string()},
                        {"schema_hash", hash_hex(data.schema->hash())},
                        {"config", config.json}};
  write_json(out / "run.json", run);

  nlohmann::json summary = nlohmann::json::array();
  std::string table;
  table += pad("model", 12) + pad("AUC", 35) + "spAUC(FPR<=" + fmt(config.fpr_ceiling, 3) + ")\n";

  for (Variant variant : config.variants) {
    const fs::path vdir = variant_dir(out, variant, config.variants.size());
    fs::create_directories(vdir);
    ModelConfig model = config.model;
    model.variant = variant;
    std::vector<double> aucs, spaucs;
    for (std::uint64_t seed : config.seeds) {
      const fs::path sdir = seed_dir(vdir, seed);
      fs::create_directories(sdir);
      TrainConfig tc = config.train;
      tc.seed = seed;
      std::ofstream epoch_log(sdir / "log.jsonl");
      log << "[" << to_string(variant) << " seed " << seed << "] training on "
          << data.train.size() << " sequences\n";
      auto on_epoch = [&](const EpochRecord& r) {
        nlohmann::json rec = {{"epoch", r.epoch},
                              {"train_nll", r.train_nll},
                              {"valid_auc", r.valid_auc ? nlohmann::json(*r.valid_auc) : nlohmann::json(nullptr)},
                              {"wall_seconds", r.wall_seconds}};
        epoch_log << rec.dump() << '\n';
        epoch_log.flush();
        log << "  epoch " << r.epoch << " nll " << fmt(r.train_nll, 5);
        if (r.valid_auc) log << " valid_auc " << fmt(*r.valid_auc, 5);
        log << " (" << fmt(r.wall_seconds, 1) << "s)\n";
      };
      TrainResult result;
      try {
        result = train(data.train, &data.valid, model, tc, on_epoch);
      } catch (const DivergenceError& e) {
        save_checkpoint(sdir / "last_good.nhfm", e.last_good());
        throw;
      }
      save_checkpoint(sdir / "checkpoint.nhfm", result.best);
      const Evaluation ev = evaluate(result.best.params, result.best.model, data.test,
                                     config.fpr_ceiling, tc.workers);
      nlohmann::json metrics = {{"seed", seed},
                                {"variant", to_string(variant)},
                                {"epoch", result.best.metadata.epoch},
                                {"early_stopped", result.early_stopped},
                                {"test_count", ev.count},
                                {"fpr_ceiling", config.fpr_ceiling}};
      metrics["best_valid_auc"] = result.best.metadata.best_valid_auc
                                      ? nlohmann::json(*result.best.metadata.best_valid_auc)
                                      : nlohmann::json(nullptr);
      metrics["test_auc"] = ev.auc ? nlohmann::json(*ev.auc) : nlohmann::json(nullptr);
      metrics["test_spauc"] = ev.spauc ? nlohmann::json(*ev.spauc) : nlohmann::json(nullptr);
      write_json(sdir / "metrics.json", metrics);
      if (ev.auc) aucs.push_back(*ev.auc);
      if (ev.spauc) spaucs.push_back(*ev.spauc);
      log << "  test auc " << (ev.auc ? fmt(*ev.auc) : "n/a") << " spauc "
          << (ev.spauc ? fmt(*ev.spauc) : "n/a") << "\n";
    }
    nlohmann::json row = {{"variant", to_string(variant)},
                          {"seeds", config.seeds},
                          {"test_auc", aucs},
                          {"test_spauc", spaucs},
                          {"auc", summary_cell(aucs)},
                          {"spauc", summary_cell(spaucs)}};
    if (aucs.size() < 2) row["note"] = "95% CI omitted: needs at least 2 seeds";
    summary.push_back(row);
    const std::string name = variant == Variant::kFull ? "NHFM" : "NHFM-" + std::string(to_string(variant));
    table += pad(name, 12) + pad(summary_cell(aucs), 35) + summary_cell(spaucs) + "\n";
  }
  write_json(out / "summary.json", summary);
  write_text(out / "summary.txt", table);
  log << table;
}

// --- eval ------------------------------------------------------------------

namespace {

struct RunMetrics {
  std::vector<fs::path> checkpoints;
  std::vector<double> auc, spauc;
};

fs::path dataset_of_run(const fs::path& run_dir) {
  // Variant sweeps nest one level below the run.json that names the data.
  for (fs::path dir = run_dir; !dir.empty(); dir = dir.parent_path()) {
    if (fs::exists(dir / "run.json")) {
      return parse_json(read_text(dir / "run.json"), "run.json").at("dataset").get<std::string>();
    }
    if (dir == dir.parent_path()) break;
  }
  throw DataError("no run.json found for " + run_dir.string() + "; pass --data");
}

RunMetrics evaluate_checkpoints(const std::vector<fs::path>& checkpoints, const LoadedData& data,
                                SplitTag split, double ceiling, std::size_t workers,
                                std::ostream& out) {
  RunMetrics m;
  m.checkpoints = checkpoints;
  const Dataset& ds = data.split(split);
  if (ds.size() == 0) throw DataError("split " + std::string(to_string(split)) + " is empty");
  for (const auto& path : checkpoints) {
    const Checkpoint ck = load_checkpoint(path, *data.schema);
    const Evaluation ev = evaluate(ck.params, ck.model, ds, ceiling, workers);
    if (!ev.auc) throw DataError("split " + std::string(to_string(split)) + " has a single class");
    m.auc.push_back(*ev.auc);
    m.spauc.push_back(*ev.spauc);
    out << path.string() << "  auc " << fmt(*ev.auc, 6) << "  spauc " << fmt(*ev.spauc, 6) << "\n";
  }
  return m;
}

}  // namespace

// --- entry point -----------------------------------------------------------

namespace {

struct Common {
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::vector<std::string> sets;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string variant;
  std::optional<double> fpr_ceiling;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run config");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--set", c.sets, "override a config value, e.g. --set model.k=32");
  cmd->add_flag("--force", c.force, "replace the contents of a non-empty output directory");
  cmd->add_option("--seed", c.seed, "single seed");
  cmd->add_option("--seeds", c.seeds, "comma-separated seeds");
  cmd->add_option("--variant", c.variant, "alpha, beta, full, or a comma-separated sweep");
  cmd->add_option("--fpr-ceiling", c.fpr_ceiling, "FPR ceiling for spAUC");
  cmd->allow_extras();
}

RunConfig resolve(const Common& c, const std::vector<std::string>& extras) {
  std::vector<std::string> overrides = c.sets;
  for (const auto& e : extras) {
    if (e.rfind("--", 0) != 0 || e.find('=') == std::string::npos) {
      throw UsageError("unrecognized argument '" + e + "'");
    }
    overrides.push_back(e.substr(2));
  }
  if (!c.seeds.empty()) {
    std::string list = "[" + c.seeds + "]";
    overrides.push_back("seeds=" + list);
  }
  if (c.seed) overrides.push_back("seeds=[" + std::to_string(*c.seed) + "]");
  if (!c.variant.empty()) {
    nlohmann::json names = nlohmann::json::array();
    std::stringstream ss(c.variant);
    for (std::string v; std::getline(ss, v, ',');) names.push_back(v);
    overrides.push_back("variants=" + names.dump());
    if (names.size() == 1) overrides.push_back("model.variant=" + names[0].dump());
  }
  if (c.fpr_ceiling) overrides.push_back("fpr_ceiling=" + std::to_string(*c.fpr_ceiling));
  std::optional<fs::path> path;
  if (c.config) path = *c.config;
  return load_run_config(path, overrides);
}

fs::path require_out(const Common& c, const RunConfig& config) {
  if (c.out) return *c.out;
  if (config.out) return *config.out;
  throw UsageError("no output directory: pass --out or set \"out\" in the config");
}

int gradcheck(const RunConfig& config, bool inject_fault, std::uint64_t seed, std::ostream& out) {
  SyntheticSpec spec;
  spec.num_sequences = 40;
  spec.t_max = 4;
  spec.max_history = 3;
  spec.vocab_sizes = {4, 4, 3};
  spec.numerical_fields = 1;
  spec.ratios = {1.0, 0.0, 0.0};
  const SyntheticData synth = synth_generate(spec, seed);
  const Dataset& ds = synth.splits.train;

  std::vector<EventSequence> batch;
  for (const auto& s : ds.sequences) {
    if (s.history_count() > 0 && batch.size() < 3) batch.push_back(s);
  }
  const EventSequence& donor = ds.sequences.front();
  const EventPtr current = donor.events.back();
  batch.push_back(make_sequence(std::span<const EventPtr>(&current, 1), donor.label, "zero-history",
                                spec.t_max));

  ModelConfig model;
  model.variant = config.model.variant;
  model.k = 4;
  model.h = 4;
  model.mlp = {8, 1};
  model.t_max = spec.t_max;
  model.n_features = ds.schema->n();
  const Parameters params = Parameters::uniform(model, seed);
  const GradCheckReport report =
      grad_check_mode(params, model, batch, 1e-5, 1e-4,
                      inject_fault ? Fault::kHadamardBackward : Fault::kNone);
  out << "variant " << to_string(model.variant) << ", " << batch.size() << " sequences ("
      << "one with empty history), " << params.scalar_count() << " scalars\n";
  out << report.describe();
  const GroupCheck& worst = report.worst();
  char buf[200];
  std::snprintf(buf, sizeof buf, "worst: %s[%zu] analytic %.10g numeric %.10g rel %.3e\n",
                worst.worst_param.c_str(), worst.worst_index, worst.analytic, worst.numeric,
                worst.max_rel_error);
  out << buf << (report.passed() ? "PASS" : "FAIL") << "\n";
  return report.passed() ? 0 : 3;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural hierarchical factorization machine toolkit"};
  app.require_subcommand(1);

  Common pre, tr, ev, gc, ex;
  auto* c_pre = app.add_subcommand("preprocess", "encode raw data into train/valid/test files");
  add_common(c_pre, pre);

  auto* c_train = app.add_subcommand("train", "train one model per seed and summarize");
  add_common(c_train, tr);
  std::optional<std::string> train_data;
  c_train->add_option("--data", train_data, "preprocessed dataset directory");

  auto* c_eval = app.add_subcommand("eval", "evaluate checkpoints on a split");
  add_common(c_eval, ev);
  std::optional<std::string> eval_run, eval_ckpt, eval_data, eval_baseline;
  std::string eval_split = "test";
  c_eval->add_option("--run", eval_run, "run directory with seed-*/checkpoint.nhfm");
  c_eval->add_option("--checkpoint", eval_ckpt, "single checkpoint file");
  c_eval->add_option("--data", eval_data, "preprocessed dataset directory");
  c_eval->add_option("--split", eval_split, "train, valid or test");
  c_eval->add_option("--baseline", eval_baseline, "run directory to t-test against");

  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(c_grad, gc);
  bool inject_fault = false;
  c_grad->add_flag("--inject-fault", inject_fault, "corrupt the Hadamard backward pass");

  auto* c_explain = app.add_subcommand("explain", "wide-weight rankings and attention reports");
  add_common(c_explain, ex);
  std::optional<std::string> ex_ckpt, ex_data;
  std::string ex_split = "test";
  std::size_t ex_count = 10, ex_sequences = 3;
  c_explain->add_option("--checkpoint", ex_ckpt, "checkpoint file")->required();
  c_explain->add_option("--data", ex_data, "preprocessed dataset directory");
  c_explain->add_option("--split", ex_split, "split to draw sequences from");
  c_explain->add_option("--count", ex_count, "features per ranking");
  c_explain->add_option("--sequences", ex_sequences, "attention reports to print");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (c_pre->parsed()) {
      const RunConfig config = resolve(pre, c_pre->remaining());
      fs::path dir = pre.out ? fs::path(*pre.out)
                             : config.dataset ? *config.dataset
                                              : throw UsageError("preprocess needs --out or \"dataset\"");
      cmd_preprocess(config, dir, pre.force, out);
      return 0;
    }
    if (c_train->parsed()) {
      const RunConfig config = resolve(tr, c_train->remaining());
      fs::path data = train_data ? fs::path(*train_data)
                                 : config.dataset ? *config.dataset
                                                  : throw UsageError("train needs --data or \"dataset\"");
      cmd_train(config, data, require_out(tr, config), tr.force, out);
      return 0;
    }
    if (c_eval->parsed()) {
      const RunConfig config = resolve(ev, c_eval->remaining());
      const SplitTag split = split_tag_from_string(eval_split);
      if (!eval_run && !eval_ckpt) throw UsageError("eval needs --run or --checkpoint");
      fs::path data_dir;
      if (eval_data) {
        data_dir = *eval_data;
      } else if (eval_run) {
        data_dir = dataset_of_run(*eval_run);
      } else if (config.dataset) {
        data_dir = *config.dataset;
      } else {
        throw UsageError("eval --checkpoint needs --data");
      }
      const LoadedData data = load_preprocessed(data_dir);
      const auto checkpoints =
          eval_ckpt ? std::vector<fs::path>{*eval_ckpt} : checkpoints_in(*eval_run);
      const RunMetrics m = evaluate_checkpoints(checkpoints, data, split, config.fpr_ceiling,
                                                config.train.workers, out);
      nlohmann::json report = {{"split", to_string(split)},
                               {"fpr_ceiling", config.fpr_ceiling},
                               {"auc", m.auc},
                               {"spauc", m.spauc},
                               {"auc_summary", summary_cell(m.auc)},
                               {"spauc_summary", summary_cell(m.spauc)}};
      out << "AUC   " << summary_cell(m.auc) << "\nspAUC " << summary_cell(m.spauc) << "\n";
      if (eval_baseline) {
        out << "baseline " << *eval_baseline << "\n";
        const RunMetrics b = evaluate_checkpoints(checkpoints_in(*eval_baseline), data, split,
                                                  config.fpr_ceiling, config.train.workers, out);
        nlohmann::json tests;
        for (const auto& [name, ours, theirs] :
             {std::tuple<const char*, const std::vector<double>&, const std::vector<double>&>{
                  "auc", m.auc, b.auc},
              {"spauc", m.spauc, b.spauc}}) {
          if (ours.size() < 2 || theirs.size() < 2) {
            out << name << " t-test skipped: needs at least 2 runs on each side\n";
            tests[name] = nullptr;
            continue;
          }
          const double p = ttest_ind(ours, theirs);
          tests[name] = {{"p_value", p}, {"baseline", summary_cell(theirs)}};
          out << name << " baseline " << summary_cell(theirs) << "  Welch p = " << fmt(p, 6) << "\n";
        }
        report["ttest"] = tests;
      }
      if (ev.out) {
        fs::create_directories(*ev.out);
        write_json(fs::path(*ev.out) / "eval.json", report);
      }
      return 0;
    }
    if (c_grad->parsed()) {
      const RunConfig config = resolve(gc, c_grad->remaining());
      return gradcheck(config, inject_fault, config.seeds.front(), out);
    }
    if (c_explain->parsed()) {
      const RunConfig config = resolve(ex, c_explain->remaining());
      fs::path data_dir;
      if (ex_data) {
        data_dir = *ex_data;
      } else if (config.dataset) {
        data_dir = *config.dataset;
      } else {
        data_dir = dataset_of_run(fs::path(*ex_ckpt).parent_path());
      }
      const LoadedData data = load_preprocessed(data_dir);
      const Checkpoint ck = load_checkpoint(*ex_ckpt, *data.schema);
      const FeatureRanking high = top_wide_features(ck, *data.schema, ex_count, RankDirection::kHighRisk);
      const FeatureRanking low = top_wide_features(ck, *data.schema, ex_count, RankDirection::kLowRisk);
      out << high.table() << "\n" << low.table();
      nlohmann::json report = {{"high_risk", high.to_json()}, {"low_risk", low.to_json()}};

      if (ck.model.has_beta()) {
        const Dataset& ds = data.split(split_tag_from_string(ex_split));
        const auto probs = predict_dataset(ck.params, ck.model, ds, config.train.workers);
        std::vector<std::size_t> order;
        for (std::size_t i = 0; i < ds.size(); ++i) {
          if (ds.sequences[i].label == 1 && ds.sequences[i].history_count() > 0) order.push_back(i);
        }
        std::stable_sort(order.begin(), order.end(),
                         [&](auto a, auto b) { return probs[a] > probs[b]; });
        order.resize(std::min(order.size(), ex_sequences));
        nlohmann::json events = nlohmann::json::array();
        for (std::size_t i : order) {
          const EventImportanceReport r = attention_report(ck, ds.sequences[i], *data.schema);
          out << "\n" << r.table();
          events.push_back(r.to_json());
        }
        report["attention"] = events;
      } else {
        out << "\nvariant alpha has no self-importance attention; event reports skipped\n";
      }
      if (ex.out) {
        prepare_output_dir(*ex.out, ex.force);
        write_json(fs::path(*ex.out) / "explain.json", report);
      }
      return 0;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace nhfm::cli
