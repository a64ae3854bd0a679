#include "nhfm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "nhfm/error.hpp"
#include "nhfm/metrics.hpp"
#include "nhfm/parallel.hpp"

namespace nhfm {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw UsageError("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw UsageError("train config: batch_size must be at least 1");
  if (patience < 1) throw UsageError("train config: patience must be at least 1");
  if (!(learning_rate > 0.0)) throw UsageError("train config: learning rate must be positive");
  if (max_epochs < 1) throw UsageError("train config: max_epochs must be at least 1");
  if (eval_every < 1) throw UsageError("train config: eval_every must be at least 1");
  if (workers < 1) throw UsageError("train config: workers must be at least 1");
  if (!(positive_weight > 0.0)) throw UsageError("train config: positive_weight must be positive");
  if (grad_clip && !(*grad_clip > 0.0)) throw UsageError("train config: grad_clip must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"optimizer", to_string(optimizer)},
                      {"lr", learning_rate},
                      {"beta1", beta1},
                      {"beta2", beta2},
                      {"epsilon", epsilon},
                      {"batch_size", batch_size},
                      {"max_epochs", max_epochs},
                      {"patience", patience},
                      {"seed", seed},
                      {"eval_every", eval_every},
                      {"workers", workers},
                      {"positive_weight", positive_weight}};
  j["grad_clip"] = grad_clip ? nlohmann::json(*grad_clip) : nlohmann::json(nullptr);
  j["stop_below_train_nll"] =
      stop_below_train_nll ? nlohmann::json(*stop_below_train_nll) : nlohmann::json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.optimizer = optimizer_from_string(j.value("optimizer", std::string("adam")));
    c.learning_rate = j.value("lr", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.workers = j.value("workers", c.workers);
    c.positive_weight = j.value("positive_weight", c.positive_weight);
    if (j.contains("grad_clip") && !j["grad_clip"].is_null()) c.grad_clip = j["grad_clip"].get<double>();
    if (j.contains("stop_below_train_nll") && !j["stop_below_train_nll"].is_null()) {
      c.stop_below_train_nll = j["stop_below_train_nll"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid train config: ") + e.what());
  }
  return c;
}

double nll_loss(double logit, int label) noexcept {
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

OptimizerState OptimizerState::for_parameters(const Parameters& params, OptimizerKind kind) {
  OptimizerState s;
  if (kind == OptimizerKind::kAdam) {
    for (const auto& t : params.tensors()) {
      s.first_moment.push_back(Tensor::zeros_like(t));
      s.second_moment.push_back(Tensor::zeros_like(t));
    }
  }
  return s;
}

void optimizer_step(Parameters& params, std::span<Tensor> grads, OptimizerState& state,
                    const TrainConfig& config) {
  if (grads.size() != params.size()) {
    throw UsageError("optimizer_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (ParamId id = 0; id < params.size(); ++id) {
    if (grads[id].shape() != params[id].shape()) {
      throw DimensionError("optimizer_step: gradient for " + params.name(id) + " has shape " +
                           shape_string(grads[id].shape()));
    }
    if (!grads[id].all_finite()) {
      throw NumericalError("optimizer_step: non-finite gradient for parameter '" +
                           params.name(id) + "'");
    }
  }
  if (config.grad_clip) {
    double sq = 0.0;
    for (const auto& g : grads)
      for (double v : g.data()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > *config.grad_clip) {
      const double factor = *config.grad_clip / norm;
      for (auto& g : grads)
        for (double& v : g.data()) v *= factor;
    }
  }

  ++state.step;
  const double lr = config.learning_rate;
  if (config.optimizer == OptimizerKind::kSgd) {
    for (ParamId id = 0; id < params.size(); ++id) {
      auto p = params[id].data();
      auto g = grads[id].data();
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
    }
    return;
  }

  if (state.first_moment.size() != params.size()) {
    state = OptimizerState::for_parameters(params, OptimizerKind::kAdam);
    state.step = 1;
  }
  const double b1 = config.beta1, b2 = config.beta2;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (ParamId id = 0; id < params.size(); ++id) {
    auto p = params[id].data();
    auto g = grads[id].data();
    auto m = state.first_moment[id].data();
    auto v = state.second_moment[id].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

bool operator==(const TrainingMetadata& a, const TrainingMetadata& b) {
  if (a.epoch != b.epoch || a.seed != b.seed || a.best_valid_auc != b.best_valid_auc ||
      a.history.size() != b.history.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    if (a.history[i].epoch != b.history[i].epoch ||
        a.history[i].train_nll != b.history[i].train_nll ||
        a.history[i].valid_auc != b.history[i].valid_auc) {
      return false;
    }
  }
  return true;
}

namespace {

struct ExampleResult {
  double loss = 0.0;
  Gradients grads;
};

ExampleResult example_gradient(const Parameters& params, const ModelConfig& config,
                               const EventSequence& seq, double positive_weight) {
  Tape tape;
  ModelVars vars = bind_parameters(tape, params);
  ForwardResult fwd = forward(tape, vars, params, config, seq);
  const double weight = seq.label == 1 ? positive_weight : 1.0;
  Var loss = ad::bce_with_logits(fwd.logit, seq.label, weight);
  ExampleResult out;
  out.loss = loss.value().item();
  out.grads = tape.backward(loss);
  return out;
}

std::optional<double> try_auc(const std::vector<double>& scores, const Dataset& ds,
                              double ceiling, bool partial) {
  ScoredSet set;
  set.scores = scores;
  set.labels.reserve(ds.size());
  for (const auto& s : ds.sequences) set.labels.push_back(s.label);
  const std::size_t pos = ds.positives();
  if (pos == 0 || pos == ds.size()) return std::nullopt;
  return partial ? spauc(set, ceiling) : auc(set);
}

}  // namespace

std::vector<double> predict_dataset(const Parameters& params, const ModelConfig& config,
                                    const Dataset& dataset, std::size_t workers) {
  std::vector<double> out(dataset.size());
  WorkerPool pool(std::max<std::size_t>(workers, 1));
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (dataset.size() + kChunk - 1) / kChunk;
  pool.parallel_for(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(dataset.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      out[i] = predict(params, config, dataset.sequences[i]).probability;
    }
  });
  return out;
}

double dataset_nll(const Parameters& params, const ModelConfig& config, const Dataset& dataset,
                   std::size_t workers) {
  if (dataset.size() == 0) throw DataError("dataset_nll: empty dataset");
  std::vector<double> losses(dataset.size());
  WorkerPool pool(std::max<std::size_t>(workers, 1));
  pool.parallel_for(dataset.size(), [&](std::size_t i) {
    losses[i] = nll_loss(predict(params, config, dataset.sequences[i]).logit,
                         dataset.sequences[i].label);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

Evaluation evaluate(const Parameters& params, const ModelConfig& config, const Dataset& dataset,
                    double fpr_ceiling, std::size_t workers) {
  Evaluation ev;
  ev.count = dataset.size();
  ev.positives = dataset.positives();
  if (dataset.size() == 0) return ev;
  const auto scores = predict_dataset(params, config, dataset, workers);
  ev.auc = try_auc(scores, dataset, fpr_ceiling, false);
  ev.spauc = try_auc(scores, dataset, fpr_ceiling, true);
  return ev;
}

TrainResult train(const Dataset& train_set, const Dataset* valid, ModelConfig model,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() == 0) throw DataError("train: empty training set");
  if (!train_set.schema) throw DataError("train: training set has no schema");
  if (valid && valid->schema && valid->schema->hash() != train_set.schema->hash()) {
    throw DataError("train: train and valid sets use different schemas");
  }
  model.n_features = train_set.schema->n();
  if (!train_set.sequences.empty()) model.t_max = train_set.sequences.front().t_max();
  model.validate();

  Checkpoint current;
  current.model = model;
  current.schema_hash = train_set.schema->hash();
  current.params = Parameters::initialize(model, config.seed);
  current.optimizer = config.optimizer;
  current.optimizer_state = OptimizerState::for_parameters(current.params, config.optimizer);
  current.metadata.seed = config.seed;

  const bool can_validate =
      valid && valid->size() > 0 && valid->positives() > 0 && valid->positives() < valid->size();

  TrainResult result;
  Checkpoint best = current;
  std::optional<double> best_auc;
  std::size_t stale_evals = 0;

  WorkerPool pool(config.workers);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<Tensor> batch_grads;
  for (const auto& t : current.params.tensors()) batch_grads.push_back(Tensor::zeros_like(t));
  // Per-example gradients are reduced in ascending batch position; a wave
  // bounds how many are alive at once.
  const std::size_t wave = std::max<std::size_t>(config.workers * 4, 1);
  std::vector<ExampleResult> slots(wave);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const Checkpoint epoch_start = current;
    double loss_sum = 0.0;

    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      for (auto& g : batch_grads) std::fill(g.data().begin(), g.data().end(), 0.0);
      for (std::size_t w = begin; w < end; w += wave) {
        const std::size_t count = std::min(wave, end - w);
        pool.parallel_for(count, [&](std::size_t i) {
          slots[i] = example_gradient(current.params, model, train_set.sequences[order[w + i]],
                                      config.positive_weight);
        });
        for (std::size_t i = 0; i < count; ++i) {
          loss_sum += slots[i].loss;
          slots[i].grads.accumulate_into(batch_grads);
          slots[i].grads = {};
        }
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (auto& g : batch_grads)
        for (double& v : g.data()) v *= inv;
      try {
        optimizer_step(current.params, batch_grads, current.optimizer_state, config);
      } catch (const NumericalError& e) {
        throw DivergenceError(e.what(), epoch_start);
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_nll = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(record.train_nll)) {
      throw DivergenceError("training loss became non-finite in epoch " + std::to_string(epoch),
                            epoch_start);
    }

    const bool eval_now = can_validate && (epoch % config.eval_every == 0);
    if (eval_now) {
      record.valid_auc = evaluate(current.params, model, *valid, 0.01, config.workers).auc;
    }
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(record);
    EpochRecord logged = record;
    logged.wall_seconds = 0.0;
    current.metadata.history.push_back(logged);
    current.metadata.epoch = epoch;
    if (on_epoch) on_epoch(record);

    bool stop = false;
    if (eval_now) {
      if (!best_auc || *record.valid_auc > *best_auc) {
        best_auc = record.valid_auc;
        current.metadata.best_valid_auc = best_auc;
        best = current;
        stale_evals = 0;
      } else if (++stale_evals >= config.patience) {
        result.early_stopped = true;
        stop = true;
      }
    }
    if (config.stop_below_train_nll && record.train_nll < *config.stop_below_train_nll) stop = true;
    if (stop) break;
  }

  if (!best_auc) {
    best = current;
  } else {
    best.metadata.history = current.metadata.history;
  }
  result.best = std::move(best);
  return result;
}

// --- gradient check -----------------------------------------------------------

double GradCheckReport::max_rel_error() const noexcept {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.max_rel_error);
  return m;
}

const GroupCheck& GradCheckReport::worst() const {
  if (groups.empty()) throw UsageError("gradient check report is empty");
  return *std::max_element(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
    return a.max_rel_error < b.max_rel_error;
  });
}

std::vector<ParamGroup> GradCheckReport::failing_groups() const {
  std::vector<ParamGroup> out;
  for (const auto& g : groups) {
    if (!(g.max_rel_error < tolerance)) out.push_back(g.group);
  }
  return out;
}

std::string GradCheckReport::describe() const {
  std::string out;
  char buf[256];
  for (const auto& g : groups) {
    std::snprintf(buf, sizeof buf, "%-10s scalars=%-6zu max_rel_err=%.3e worst=%s[%zu] (%s)\n",
                  std::string(to_string(g.group)).c_str(), g.scalars, g.max_rel_error,
                  g.worst_param.c_str(), g.worst_index,
                  g.max_rel_error < tolerance ? "ok" : "FAIL");
    out += buf;
  }
  return out;
}

GradCheckReport grad_check_mode(const Parameters& params, const ModelConfig& config,
                                std::span<const EventSequence> batch, double eps,
                                double tolerance, Fault fault) {
  if (batch.empty()) throw UsageError("grad_check_mode: empty batch");
  LossBuilder loss = [&](Tape& tape, std::span<const Var> leaves) {
    ModelVars vars{std::vector<Var>(leaves.begin(), leaves.end())};
    std::vector<Var> losses;
    for (const auto& seq : batch) {
      ForwardResult fwd = forward(tape, vars, params, config, seq);
      losses.push_back(ad::bce_with_logits(fwd.logit, seq.label));
    }
    return ad::sum(ad::concat(losses));
  };
  std::vector<Tensor> values(params.tensors().begin(), params.tensors().end());
  FiniteDiffReport fd = finite_diff_check(loss, values, eps, TapeOptions{fault});

  GradCheckReport report;
  report.tolerance = tolerance;
  for (ParamId id = 0; id < params.size(); ++id) {
    const ParamGroup g = params.group(id);
    auto it = std::find_if(report.groups.begin(), report.groups.end(),
                           [&](const GroupCheck& c) { return c.group == g; });
    if (it == report.groups.end()) {
      GroupCheck fresh;
      fresh.group = g;
      report.groups.push_back(fresh);
      it = std::prev(report.groups.end());
    }
    it->scalars += params[id].size();
    const ScalarMismatch& m = fd.per_param[id];
    if (it->worst_param.empty() || m.rel_error > it->max_rel_error) {
      it->max_rel_error = m.rel_error;
      it->worst_param = params.name(id);
      it->worst_index = m.index;
      it->analytic = m.analytic;
      it->numeric = m.numeric;
    }
  }
  return report;
}

}  // namespace nhfm
