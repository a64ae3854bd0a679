#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nhfm/autodiff.hpp"
#include "nhfm/data.hpp"

namespace nhfm {

enum class Variant : std::uint8_t { kAlpha = 0, kBeta = 1, kFull = 2 };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::kFull;
  std::size_t n_features = 0;  // feature dictionary size of the schema
  std::size_t k = 64;          // embedding dimension
  std::size_t h = 64;          // LSTM hidden dimension
  std::vector<std::size_t> mlp = {128, 64, 1};
  std::size_t t_max = 10;

  bool has_alpha() const noexcept { return variant != Variant::kBeta; }
  bool has_beta() const noexcept { return variant != Variant::kAlpha; }
  /// Width of s: [s_alpha; s_beta; e_T] restricted to the active branches.
  std::size_t mlp_input_width() const noexcept;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamGroup : std::uint8_t { kEmbedding, kWide, kAttention, kLstm, kMlp };
std::string_view to_string(ParamGroup g);

inline constexpr ParamId kNoParam = std::numeric_limits<ParamId>::max();

struct LstmIds {
  ParamId wx = kNoParam;  // k x 4h, gate order [input, forget, cell, output]
  ParamId wh = kNoParam;  // h x 4h
  ParamId b = kNoParam;   // 4h
};

struct ParamLayout {
  ParamId embedding = kNoParam;  // n x k
  ParamId wide_w = kNoParam;     // n x 1
  ParamId wide_b = kNoParam;     // scalar
  ParamId attn_w[3] = {kNoParam, kNoParam, kNoParam};  // F1, F2, F3: k x k
  ParamId attn_b[3] = {kNoParam, kNoParam, kNoParam};
  LstmIds lstm_fwd;
  LstmIds lstm_bwd;
  std::vector<ParamId> mlp_w;
  std::vector<ParamId> mlp_b;
};

/// Every learnable tensor, in a fixed order determined by the ModelConfig.
class Parameters {
 public:
  Parameters() = default;

  /// Shapes for `config`, all zero.
  static Parameters zeros(const ModelConfig& config);
  /// Embeddings ~ N(0, 0.01^2); affine weights ~ U(+-sqrt(6/(fan_in+fan_out)));
  /// biases zero except LSTM forget gates (1.0); wide weights zero.
  static Parameters initialize(const ModelConfig& config, std::uint64_t seed);
  /// Every scalar ~ U(-bound, bound). Used for finite-difference checks: the
  /// training init leaves ReLU inputs within eps of the kink.
  static Parameters uniform(const ModelConfig& config, std::uint64_t seed, double bound = 1.0);

  std::size_t size() const noexcept { return tensors_.size(); }
  Tensor& operator[](ParamId id) { return tensors_.at(id); }
  const Tensor& operator[](ParamId id) const { return tensors_.at(id); }
  std::span<Tensor> tensors() noexcept { return tensors_; }
  std::span<const Tensor> tensors() const noexcept { return tensors_; }

  const std::string& name(ParamId id) const { return names_.at(id); }
  ParamGroup group(ParamId id) const { return groups_.at(id); }
  std::optional<ParamId> find(std::string_view name) const;
  const ParamLayout& layout() const noexcept { return layout_; }

  std::size_t scalar_count() const noexcept;
  std::size_t scalar_count(ParamGroup g) const noexcept;

  friend bool operator==(const Parameters& a, const Parameters& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  ParamId add(std::string name, ParamGroup group, Shape shape);

  std::vector<Tensor> tensors_;
  std::vector<std::string> names_;
  std::vector<ParamGroup> groups_;
  ParamLayout layout_;
};

/// Parameter leaves registered on one tape, indexed by ParamId.
struct ModelVars {
  std::vector<Var> leaves;
  const Var& operator[](ParamId id) const { return leaves.at(id); }
};

ModelVars bind_parameters(Tape& tape, const Parameters& params);

// --- building blocks ---------------------------------------------------------

/// Rows x_i * v_i for the event's non-zero features (m x k; m may be 0).
Var embed_event(Var table, const Event& event);

/// Pairwise Hadamard interactions of the rows of `rescaled` (m x k), via
/// 1/2 [(sum u)^2 - sum u^2]. Returns a k-vector; zero for m < 2.
Var event_fm(Var rescaled);

/// event_fm for consecutive row segments at once: result row s pools rows of
/// segment s.
Var event_fm_segments(Var rescaled, std::vector<std::size_t> lengths);

/// Pairwise Hadamard interactions of history event vectors (rows x k), each
/// row scaled by its presence flag. Introduces no parameters.
Var sequence_fm(Var history, std::span<const std::uint8_t> mask);

struct AttentionVars {
  Var w[3];
  Var b[3];
};

struct SelfImportance {
  Var s_self;                          // k
  Var weights;                         // one per real history row
  Var logits;                          // scaled dot products, same length
  std::vector<std::size_t> real_rows;  // history rows that received weight
};

/// Scaled dot-product self-importance over real history rows:
/// logit_t = <F1(e_t), F2(e_t)> / sqrt(k); weights = softmax over real rows;
/// s_self = sum_t a_t F3(e_t). F1, F2 are affine, F3 affine + ReLU.
SelfImportance self_importance(Var history, std::span<const std::uint8_t> mask,
                               const AttentionVars& attn);

struct LstmVars {
  Var wx;
  Var wh;
  Var b;
};

/// Sum of the final hidden states of a forward and a backward LSTM over the
/// real history rows; masked rows are skipped. Zero vector when no row is real.
Var bilstm(Var history, std::span<const std::uint8_t> mask, const LstmVars& fwd,
           const LstmVars& bwd);

/// f(x) = sum over events and features of w_i x_i + w_0. Null events
/// (padding) contribute nothing.
Var wide(Var weights, Var bias, std::span<const EventPtr> events);

// --- full model ----------------------------------------------------------------

struct ForwardCache {
  std::size_t first_real = 0;     // slot of the earliest real event
  Tensor event_vectors;           // real events x k, chronological
  Tensor s_alpha;                 // k (zero-sized for variant beta)
  Tensor attention_logits;        // per real history event
  Tensor attention_weights;       // per real history event
  Tensor s_self;                  // k (zero-sized for variant alpha)
  Tensor s_rnn;                   // h
  Tensor s_beta;                  // k + h
  Tensor s;                       // MLP input
  double mlp_output = 0.0;
  double wide = 0.0;
  double logit = 0.0;
  double probability = 0.5;

  /// Attention weight per slot 0..t_max-1; zero on padding and the current event.
  std::vector<double> slot_weights(std::size_t t_max) const;
};

struct ForwardResult {
  Var logit;
  ForwardCache cache;
};

ForwardResult forward(Tape& tape, const ModelVars& vars, const Parameters& params,
                      const ModelConfig& config, const EventSequence& seq);

/// Tape-backed forward without keeping the tape; pure given its inputs.
ForwardCache predict(const Parameters& params, const ModelConfig& config,
                     const EventSequence& seq);

/// Ensures the sequence is shaped for `config` and its features fit the table.
void check_sequence(const ModelConfig& config, const EventSequence& seq);

}  // namespace nhfm
