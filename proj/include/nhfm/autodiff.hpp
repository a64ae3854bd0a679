#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "nhfm/tensor.hpp"

namespace nhfm {

using NodeId = std::uint32_t;
using ParamId = std::size_t;

/// Test-only corruption of a backward rule, used to prove the gradient
/// checker catches a broken derivative.
enum class Fault : std::uint8_t { kNone, kHadamardBackward };

struct TapeOptions {
  Fault fault = Fault::kNone;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  NodeId id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Parameter gradients produced by Tape::backward. Gradients routed through
/// gather_rows stay sparse (row id + values) until densified or scattered.
class Gradients {
 public:
  struct Entry {
    Shape shape;
    Tensor dense;                      // empty when only sparse rows were reached
    std::vector<std::size_t> row_ids;  // sparse rows, in tape order
    std::vector<double> row_values;    // row_ids.size() * cols
  };

  bool contains(ParamId id) const { return entries_.count(id) != 0; }
  bool reached(ParamId id) const;
  /// Dense gradient; all zeros when the parameter was registered but unreached.
  Tensor dense(ParamId id) const;
  /// Adds every gradient into `sums[id]` in a fixed order (dense part, then
  /// sparse rows in tape order).
  void accumulate_into(std::span<Tensor> sums) const;
  bool all_finite(ParamId* offender = nullptr) const;

  const std::map<ParamId, Entry>& entries() const noexcept { return entries_; }

 private:
  friend class Tape;
  std::map<ParamId, Entry> entries_;
};

class Tape {
 public:
  explicit Tape(TapeOptions options = {}) : options_(options) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers an external parameter tensor by reference. The tensor must
  /// outlive the tape and stay unmodified while the tape is in use.
  Var parameter(const Tensor& value, ParamId id);
  Var constant(Tensor value);

  const Tensor& value(NodeId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss node in strict reverse insertion order.
  Gradients backward(Var loss) const;

  // Recording entry points; use the free functions in namespace ad.
  enum class Op : std::uint8_t {
    kParameter,
    kConstant,
    kMatmul,
    kAdd,
    kSub,
    kHadamard,
    kScale,
    kAddRowwise,
    kSigmoid,
    kTanh,
    kRelu,
    kSquare,
    kSum,
    kSumAxis,
    kConcat,
    kStackRows,
    kSlice,
    kReshape,
    kGatherRows,
    kSegmentSum,
    kSoftmax,
    kBceWithLogits,
  };

  struct Node {
    Op op = Op::kConstant;
    bool requires_grad = false;
    NodeId a = 0;
    NodeId b = 0;
    std::vector<NodeId> inputs;
    Tensor value;
    const Tensor* external = nullptr;
    ParamId param = 0;
    double scalar = 0.0;
    double scalar2 = 0.0;
    std::size_t i0 = 0;
    std::size_t i1 = 0;
    std::vector<std::size_t> indices;
  };

  Var record(Node node);
  const Node& node(NodeId id) const { return nodes_[id]; }

 private:
  TapeOptions options_;
  std::vector<Node> nodes_;
};

namespace ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var add_rowwise(Var m, Var bias);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var square(Var a);
Var sum(Var a);
Var sum_axis(Var a, std::size_t axis);
Var concat(std::span<const Var> parts);
Var stack_rows(std::span<const Var> rows);
Var slice(Var v, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);
/// Selected rows of `table`; backward adds each upstream row into the
/// source row, so repeated indices accumulate.
Var gather_rows(Var table, std::vector<std::size_t> indices);
Var segment_sum(Var m, std::vector<std::size_t> lengths);
Var softmax(Var logits);
/// Weighted binary cross-entropy evaluated from a pre-sigmoid scalar logit:
/// weight * (max(z,0) - z*y + log1p(exp(-|z|))).
Var bce_with_logits(Var logit, double label, double weight = 1.0);

}  // namespace ad

/// Builds a scalar loss on the given tape from parameter leaves.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

struct ScalarMismatch {
  double rel_error = 0.0;
  std::size_t index = 0;  // flat index within the parameter
  double analytic = 0.0;
  double numeric = 0.0;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<ScalarMismatch> per_param;  // worst scalar of each parameter
};

/// Compares reverse-mode gradients with central differences
/// (f(p+eps) - f(p-eps)) / 2eps for every scalar parameter. The relative
/// error denominator is max(|analytic|, |numeric|, 1e-8).
FiniteDiffReport finite_diff_check(const LossBuilder& loss, std::vector<Tensor> params,
                                   double eps = 1e-5, TapeOptions options = {});

double relative_error(double analytic, double numeric) noexcept;

}  // namespace nhfm
