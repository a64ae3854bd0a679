#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nhfm/data.hpp"
#include "nhfm/error.hpp"
#include "nhfm/model.hpp"

namespace nhfm {

enum class OptimizerKind : std::uint8_t { kSgd = 0, kAdam = 1 };

std::string_view to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(std::string_view name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;  // evaluations without validation-AUC improvement
  std::uint64_t seed = 1;
  std::optional<double> grad_clip;  // global L2 norm
  std::size_t eval_every = 1;       // epochs between validation evaluations
  std::size_t workers = 1;
  double positive_weight = 1.0;
  /// Ends training once an epoch's mean training NLL drops below this value.
  std::optional<double> stop_below_train_nll;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Binary NLL -[y ln p + (1-y) ln(1-p)] with p = sigmoid(logit), evaluated in
/// the fused form max(z,0) - z y + log1p(exp(-|z|)).
double nll_loss(double logit, int label) noexcept;

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;   // Adam only
  std::vector<Tensor> second_moment;  // Adam only

  static OptimizerState for_parameters(const Parameters& params, OptimizerKind kind);
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Applies one update. Gradients are clipped in place to the configured
/// global norm first. A non-finite gradient aborts with NumericalError
/// naming the parameter, leaving `params` untouched.
void optimizer_step(Parameters& params, std::span<Tensor> grads, OptimizerState& state,
                    const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  std::optional<double> valid_auc;
  double wall_seconds = 0.0;  // reported in logs only, never checkpointed
};

struct TrainingMetadata {
  std::size_t epoch = 0;  // epoch whose parameters the checkpoint holds
  std::uint64_t seed = 0;
  std::optional<double> best_valid_auc;
  std::vector<EpochRecord> history;  // wall_seconds zeroed

  friend bool operator==(const TrainingMetadata& a, const TrainingMetadata& b);
};

struct Checkpoint {
  ModelConfig model;
  SchemaHash schema_hash{};
  Parameters params;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  OptimizerState optimizer_state;
  TrainingMetadata metadata;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Layout (little-endian): magic "NHFMCK1", u16 version, ModelConfig block,
/// 32-byte schema hash, named parameter blobs (length-prefixed name, rank,
/// dims, f64 data), optimizer block, metadata block.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and verifies that the checkpoint was trained against `schema`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const FeatureSchema& schema);

/// Training diverged; carries the last checkpoint whose loss was finite.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, Checkpoint last_good)
      : NumericalError(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const noexcept { return last_good_; }

 private:
  Checkpoint last_good_;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> log;
  bool early_stopped = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch NLL training for one seed. `valid` may be null or single-class,
/// in which case no early stopping happens and the final epoch is returned.
TrainResult train(const Dataset& train_set, const Dataset* valid, ModelConfig model,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Predicted probabilities, in dataset order.
std::vector<double> predict_dataset(const Parameters& params, const ModelConfig& config,
                                    const Dataset& dataset, std::size_t workers = 1);

/// Mean NLL of the dataset under `params`.
double dataset_nll(const Parameters& params, const ModelConfig& config, const Dataset& dataset,
                   std::size_t workers = 1);

struct Evaluation {
  std::size_t count = 0;
  std::size_t positives = 0;
  std::optional<double> auc;
  std::optional<double> spauc;
};

Evaluation evaluate(const Parameters& params, const ModelConfig& config, const Dataset& dataset,
                    double fpr_ceiling = 0.01, std::size_t workers = 1);

// --- gradient verification ------------------------------------------------------

struct GroupCheck {
  ParamGroup group = ParamGroup::kEmbedding;
  std::size_t scalars = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GroupCheck> groups;
  double tolerance = 1e-4;

  double max_rel_error() const noexcept;
  const GroupCheck& worst() const;
  bool passed() const noexcept { return max_rel_error() < tolerance; }
  /// Groups whose error exceeds the tolerance.
  std::vector<ParamGroup> failing_groups() const;
  std::string describe() const;
};

/// Finite-difference check (central, step eps) of the summed NLL over
/// `batch` for every scalar parameter.
GradCheckReport grad_check_mode(const Parameters& params, const ModelConfig& config,
                                std::span<const EventSequence> batch, double eps = 1e-5,
                                double tolerance = 1e-4, Fault fault = Fault::kNone);

}  // namespace nhfm
