#include "nhfm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "nhfm/error.hpp"

namespace nhfm {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kAlpha:
      return "alpha";
    case Variant::kBeta:
      return "beta";
    case Variant::kFull:
      return "full";
  }
  return "unknown";
}

Variant variant_from_string(std::string_view name) {
  if (name == "alpha") return Variant::kAlpha;
  if (name == "beta") return Variant::kBeta;
  if (name == "full") return Variant::kFull;
  throw UsageError("unknown variant '" + std::string(name) + "' (expected alpha, beta or full)");
}

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEmbedding:
      return "embedding";
    case ParamGroup::kWide:
      return "wide";
    case ParamGroup::kAttention:
      return "attention";
    case ParamGroup::kLstm:
      return "lstm";
    case ParamGroup::kMlp:
      return "mlp";
  }
  return "unknown";
}

std::size_t ModelConfig::mlp_input_width() const noexcept {
  std::size_t w = k;  // e_T
  if (has_alpha()) w += k;
  if (has_beta()) w += k + h;
  return w;
}

void ModelConfig::validate() const {
  if (n_features == 0) throw UsageError("model config: n_features must be positive");
  if (k < 1 || h < 1) throw UsageError("model config: k and h must be at least 1");
  if (t_max < 1) throw UsageError("model config: t_max must be at least 1");
  if (mlp.empty() || mlp.back() != 1) {
    throw UsageError("model config: final MLP width must be 1");
  }
  for (auto w : mlp) {
    if (w == 0) throw UsageError("model config: MLP widths must be positive");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"variant", to_string(variant)}, {"n_features", n_features}, {"k", k},
          {"h", h},                        {"mlp", mlp},               {"t_max", t_max}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.variant = variant_from_string(j.value("variant", std::string(to_string(c.variant))));
    c.n_features = j.value("n_features", c.n_features);
    c.k = j.value("k", c.k);
    c.h = j.value("h", c.h);
    c.mlp = j.value("mlp", c.mlp);
    c.t_max = j.value("t_max", c.t_max);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid model config: ") + e.what());
  }
  return c;
}

ParamId Parameters::add(std::string name, ParamGroup group, Shape shape) {
  tensors_.emplace_back(std::move(shape));
  names_.push_back(std::move(name));
  groups_.push_back(group);
  return tensors_.size() - 1;
}

Parameters Parameters::zeros(const ModelConfig& config) {
  config.validate();
  Parameters p;
  const std::size_t n = config.n_features, k = config.k, h = config.h;
  ParamLayout& L = p.layout_;
  L.embedding = p.add("embedding", ParamGroup::kEmbedding, {n, k});
  L.wide_w = p.add("wide.w", ParamGroup::kWide, {n, 1});
  L.wide_b = p.add("wide.b", ParamGroup::kWide, {});
  if (config.has_beta()) {
    for (int f = 0; f < 3; ++f) {
      const std::string base = "attn.f" + std::to_string(f + 1);
      L.attn_w[f] = p.add(base + ".w", ParamGroup::kAttention, {k, k});
      L.attn_b[f] = p.add(base + ".b", ParamGroup::kAttention, {k});
    }
    for (auto [ids, dir] : {std::pair{&L.lstm_fwd, "fwd"}, std::pair{&L.lstm_bwd, "bwd"}}) {
      const std::string base = std::string("lstm.") + dir;
      ids->wx = p.add(base + ".wx", ParamGroup::kLstm, {k, 4 * h});
      ids->wh = p.add(base + ".wh", ParamGroup::kLstm, {h, 4 * h});
      ids->b = p.add(base + ".b", ParamGroup::kLstm, {4 * h});
    }
  }
  std::size_t in = config.mlp_input_width();
  for (std::size_t l = 0; l < config.mlp.size(); ++l) {
    const std::string base = "mlp." + std::to_string(l);
    L.mlp_w.push_back(p.add(base + ".w", ParamGroup::kMlp, {in, config.mlp[l]}));
    L.mlp_b.push_back(p.add(base + ".b", ParamGroup::kMlp, {config.mlp[l]}));
    in = config.mlp[l];
  }
  return p;
}

Parameters Parameters::initialize(const ModelConfig& config, std::uint64_t seed) {
  Parameters p = zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> embed(0.0, 0.01);
  for (ParamId id = 0; id < p.size(); ++id) {
    Tensor& t = p.tensors_[id];
    if (id == p.layout_.embedding) {
      for (double& v : t.data()) v = embed(rng);
    } else if (t.rank() == 2 && p.groups_[id] != ParamGroup::kWide) {
      const double limit = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      std::uniform_real_distribution<double> unif(-limit, limit);
      for (double& v : t.data()) v = unif(rng);
    }
  }
  for (const LstmIds* ids : {&p.layout_.lstm_fwd, &p.layout_.lstm_bwd}) {
    if (ids->b == kNoParam) continue;
    Tensor& b = p.tensors_[ids->b];
    for (std::size_t i = config.h; i < 2 * config.h; ++i) b[i] = 1.0;
  }
  return p;
}

Parameters Parameters::uniform(const ModelConfig& config, std::uint64_t seed, double bound) {
  Parameters p = zeros(config);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-bound, bound);
  for (auto& t : p.tensors_)
    for (double& v : t.data()) v = unif(rng);
  return p;
}

std::optional<ParamId> Parameters::find(std::string_view name) const {
  for (ParamId id = 0; id < names_.size(); ++id) {
    if (names_[id] == name) return id;
  }
  return std::nullopt;
}

std::size_t Parameters::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::size_t Parameters::scalar_count(ParamGroup g) const noexcept {
  std::size_t n = 0;
  for (ParamId id = 0; id < tensors_.size(); ++id) {
    if (groups_[id] == g) n += tensors_[id].size();
  }
  return n;
}

ModelVars bind_parameters(Tape& tape, const Parameters& params) {
  ModelVars vars;
  vars.leaves.reserve(params.size());
  for (ParamId id = 0; id < params.size(); ++id) vars.leaves.push_back(tape.parameter(params[id], id));
  return vars;
}

namespace {

Var zeros_var(Tape& tape, std::size_t n) { return tape.constant(Tensor({n})); }

// Rows x_i * v_i for a flat list of entries.
Var rescaled_rows(Var table, std::vector<std::size_t> indices, std::span<const double> values) {
  const std::size_t k = table.value().cols();
  const std::size_t m = indices.size();
  Tensor scale_matrix({m, k});
  for (std::size_t i = 0; i < m; ++i) {
    for (double& v : scale_matrix.row(i)) v = values[i];
  }
  Var rows = ad::gather_rows(table, std::move(indices));
  return ad::hadamard(rows, table.tape()->constant(std::move(scale_matrix)));
}

std::vector<std::size_t> real_rows(std::span<const std::uint8_t> mask) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) rows.push_back(i);
  }
  return rows;
}

void check_history(Var history, std::span<const std::uint8_t> mask, const char* op) {
  if (history.value().rank() != 2 || history.value().rows() != mask.size()) {
    throw DimensionError(std::string(op) + ": mask length " + std::to_string(mask.size()) +
                         " does not match history shape " + shape_string(history.shape()));
  }
}

// Single LSTM direction over the given rows of `inputs` (rows x k) in order.
Var lstm_direction(Var inputs, std::span<const std::size_t> order, const LstmVars& p) {
  Tape& tape = *inputs.tape();
  const std::size_t h = p.wh.value().rows();
  Var hidden = zeros_var(tape, h);
  Var cell = zeros_var(tape, h);
  Var projected = ad::matmul(inputs, p.wx);  // rows x 4h
  for (std::size_t row : order) {
    Var z = ad::add(ad::reshape(ad::gather_rows(projected, {row}), {4 * h}),
                    ad::reshape(ad::matmul(ad::reshape(hidden, {1, h}), p.wh), {4 * h}));
    z = ad::add(z, p.b);
    Var in_gate = ad::sigmoid(ad::slice(z, 0, h));
    Var forget_gate = ad::sigmoid(ad::slice(z, h, 2 * h));
    Var candidate = ad::tanh(ad::slice(z, 2 * h, 3 * h));
    Var out_gate = ad::sigmoid(ad::slice(z, 3 * h, 4 * h));
    cell = ad::add(ad::hadamard(forget_gate, cell), ad::hadamard(in_gate, candidate));
    hidden = ad::hadamard(out_gate, ad::tanh(cell));
  }
  return hidden;
}

Var pooled_interactions(Var sum_rows, Var sum_squares) {
  return ad::scale(ad::sub(ad::hadamard(sum_rows, sum_rows), sum_squares), 0.5);
}

}  // namespace

Var embed_event(Var table, const Event& event) {
  std::vector<std::size_t> indices;
  std::vector<double> values;
  indices.reserve(event.entries.size());
  values.reserve(event.entries.size());
  for (const auto& e : event.entries) {
    indices.push_back(e.index);
    values.push_back(e.value);
  }
  return rescaled_rows(table, std::move(indices), values);
}

Var event_fm(Var rescaled) {
  if (rescaled.value().rank() != 2) {
    throw DimensionError("event_fm: expected an m x k matrix, got " +
                         shape_string(rescaled.shape()));
  }
  Var s = ad::sum_axis(rescaled, 0);
  Var q = ad::sum_axis(ad::hadamard(rescaled, rescaled), 0);
  return pooled_interactions(s, q);
}

Var event_fm_segments(Var rescaled, std::vector<std::size_t> lengths) {
  Var s = ad::segment_sum(rescaled, lengths);
  Var q = ad::segment_sum(ad::hadamard(rescaled, rescaled), std::move(lengths));
  return pooled_interactions(s, q);
}

Var sequence_fm(Var history, std::span<const std::uint8_t> mask) {
  check_history(history, mask, "sequence_fm");
  const std::size_t k = history.value().cols();
  Tensor presence({mask.size(), k});
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (double& v : presence.row(i)) v = mask[i] ? 1.0 : 0.0;
  }
  Var masked = ad::hadamard(history, history.tape()->constant(std::move(presence)));
  return event_fm(masked);
}

SelfImportance self_importance(Var history, std::span<const std::uint8_t> mask,
                               const AttentionVars& attn) {
  check_history(history, mask, "self_importance");
  SelfImportance out;
  out.real_rows = real_rows(mask);
  if (out.real_rows.empty()) {
    throw DataError("self_importance: history has no real events");
  }
  const std::size_t k = history.value().cols();
  const std::size_t m = out.real_rows.size();
  Var rows = ad::gather_rows(history, out.real_rows);
  Var query = ad::add_rowwise(ad::matmul(rows, attn.w[0]), attn.b[0]);
  Var key = ad::add_rowwise(ad::matmul(rows, attn.w[1]), attn.b[1]);
  Var value = ad::relu(ad::add_rowwise(ad::matmul(rows, attn.w[2]), attn.b[2]));
  out.logits = ad::scale(ad::sum_axis(ad::hadamard(query, key), 1), 1.0 / std::sqrt(double(k)));
  out.weights = ad::softmax(out.logits);
  out.s_self = ad::reshape(ad::matmul(ad::reshape(out.weights, {1, m}), value), {k});
  return out;
}

Var bilstm(Var history, std::span<const std::uint8_t> mask, const LstmVars& fwd,
           const LstmVars& bwd) {
  check_history(history, mask, "bilstm");
  const std::size_t h = fwd.wh.value().rows();
  auto order = real_rows(mask);
  if (order.empty()) return zeros_var(*history.tape(), h);
  Var forward_state = lstm_direction(history, order, fwd);
  std::vector<std::size_t> reversed(order.rbegin(), order.rend());
  Var backward_state = lstm_direction(history, reversed, bwd);
  return ad::add(forward_state, backward_state);
}

Var wide(Var weights, Var bias, std::span<const EventPtr> events) {
  std::vector<std::size_t> indices;
  std::vector<double> values;
  for (const auto& ev : events) {
    if (!ev) continue;
    for (const auto& e : ev->entries) {
      indices.push_back(e.index);
      values.push_back(e.value);
    }
  }
  Var terms = rescaled_rows(weights, std::move(indices), values);  // m x 1
  return ad::add(ad::sum(terms), bias);
}

std::vector<double> ForwardCache::slot_weights(std::size_t t_max) const {
  std::vector<double> out(t_max, 0.0);
  for (std::size_t i = 0; i < attention_weights.size(); ++i) out[first_real + i] = attention_weights[i];
  return out;
}

void check_sequence(const ModelConfig& config, const EventSequence& seq) {
  if (seq.t_max() != config.t_max || seq.mask.size() != config.t_max) {
    throw DimensionError("sequence length " + std::to_string(seq.t_max()) +
                         " does not match model t_max " + std::to_string(config.t_max));
  }
  const std::size_t first = seq.first_real();
  if (!seq.mask.back() || !seq.events.back()) {
    throw DataError("sequence for user '" + seq.user + "' has no prediction event");
  }
  for (std::size_t t = 0; t < seq.t_max(); ++t) {
    const bool real = t >= first;
    if (bool(seq.mask[t]) != real || bool(seq.events[t]) != real) {
      throw DataError("sequence for user '" + seq.user +
                      "' is not right-aligned or its mask disagrees with its events");
    }
    if (!real) continue;
    for (const auto& e : seq.events[t]->entries) {
      if (e.index >= config.n_features) {
        throw DimensionError("feature index " + std::to_string(e.index) +
                             " out of range for n_features " + std::to_string(config.n_features));
      }
    }
  }
}

ForwardResult forward(Tape& tape, const ModelVars& vars, const Parameters& params,
                      const ModelConfig& config, const EventSequence& seq) {
  check_sequence(config, seq);
  const ParamLayout& L = params.layout();
  const std::size_t k = config.k, h = config.h;
  const std::size_t first = seq.first_real();
  const std::size_t real = seq.t_max() - first;
  const std::size_t history = real - 1;

  ForwardResult out;
  ForwardCache& cache = out.cache;
  cache.first_real = first;

  // Event extractor over all real events in one pass.
  std::vector<std::size_t> indices;
  std::vector<double> values;
  std::vector<std::size_t> lengths;
  for (std::size_t t = first; t < seq.t_max(); ++t) {
    const auto& entries = seq.events[t]->entries;
    lengths.push_back(entries.size());
    for (const auto& e : entries) {
      indices.push_back(e.index);
      values.push_back(e.value);
    }
  }
  Var events = event_fm_segments(rescaled_rows(vars[L.embedding], std::move(indices), values),
                                 std::move(lengths));  // real x k
  cache.event_vectors = events.value();

  Var current = ad::reshape(ad::gather_rows(events, {history}), {k});
  std::vector<std::size_t> history_rows(history);
  for (std::size_t i = 0; i < history; ++i) history_rows[i] = i;
  Var past = history > 0 ? ad::gather_rows(events, history_rows) : Var{};
  const std::vector<std::uint8_t> all_real(history, 1);

  std::vector<Var> parts;
  if (config.has_alpha()) {
    Var s_alpha = history > 0 ? sequence_fm(past, all_real) : zeros_var(tape, k);
    cache.s_alpha = s_alpha.value();
    parts.push_back(s_alpha);
  }
  if (config.has_beta()) {
    Var s_self, s_rnn;
    if (history > 0) {
      AttentionVars attn;
      for (int f = 0; f < 3; ++f) {
        attn.w[f] = vars[L.attn_w[f]];
        attn.b[f] = vars[L.attn_b[f]];
      }
      SelfImportance si = self_importance(past, all_real, attn);
      s_self = si.s_self;
      cache.attention_logits = si.logits.value();
      cache.attention_weights = si.weights.value();
      LstmVars fwd{vars[L.lstm_fwd.wx], vars[L.lstm_fwd.wh], vars[L.lstm_fwd.b]};
      LstmVars bwd{vars[L.lstm_bwd.wx], vars[L.lstm_bwd.wh], vars[L.lstm_bwd.b]};
      s_rnn = bilstm(past, all_real, fwd, bwd);
    } else {
      s_self = zeros_var(tape, k);
      s_rnn = zeros_var(tape, h);
      cache.attention_logits = Tensor({0});
      cache.attention_weights = Tensor({0});
    }
    cache.s_self = s_self.value();
    cache.s_rnn = s_rnn.value();
    const Var beta_parts[] = {s_self, s_rnn};
    Var s_beta = ad::concat(beta_parts);
    cache.s_beta = s_beta.value();
    parts.push_back(s_beta);
  }
  parts.push_back(current);
  Var s = ad::concat(parts);
  cache.s = s.value();

  Var x = ad::reshape(s, {1, s.value().size()});
  for (std::size_t l = 0; l < L.mlp_w.size(); ++l) {
    x = ad::add_rowwise(ad::matmul(x, vars[L.mlp_w[l]]), vars[L.mlp_b[l]]);
    if (l + 1 < L.mlp_w.size()) x = ad::relu(x);
  }
  Var mlp_out = ad::reshape(x, {});
  Var wide_out = wide(vars[L.wide_w], vars[L.wide_b], seq.events);
  out.logit = ad::add(mlp_out, wide_out);

  cache.mlp_output = mlp_out.value().item();
  cache.wide = wide_out.value().item();
  cache.logit = out.logit.value().item();
  // Keep the probability strictly inside (0, 1) even when the logit saturates.
  cache.probability = std::clamp(sigmoid(cache.logit), std::numeric_limits<double>::min(),
                                 std::nextafter(1.0, 0.0));
  return out;
}

ForwardCache predict(const Parameters& params, const ModelConfig& config,
                     const EventSequence& seq) {
  Tape tape;
  ModelVars vars = bind_parameters(tape, params);
  return forward(tape, vars, params, config, seq).cache;
}

}  // namespace nhfm
