#include "nhfm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nhfm/error.hpp"

namespace nhfm {

using Op = Tape::Op;

const Tensor& Var::value() const { return tape_->value(id_); }

bool Gradients::reached(ParamId id) const {
  auto it = entries_.find(id);
  return it != entries_.end() && (!it->second.dense.empty() || !it->second.row_ids.empty());
}

Tensor Gradients::dense(ParamId id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) {
    throw UsageError("gradient requested for unregistered parameter " + std::to_string(id));
  }
  const Entry& e = it->second;
  Tensor out = e.dense.empty() ? Tensor(e.shape) : e.dense;
  const std::size_t cols = out.cols();
  for (std::size_t r = 0; r < e.row_ids.size(); ++r) {
    auto dst = out.row(e.row_ids[r]);
    for (std::size_t c = 0; c < cols; ++c) dst[c] += e.row_values[r * cols + c];
  }
  return out;
}

void Gradients::accumulate_into(std::span<Tensor> sums) const {
  for (const auto& [id, e] : entries_) {
    if (id >= sums.size()) throw UsageError("gradient sink too small for parameter id");
    Tensor& dst = sums[id];
    if (dst.shape() != e.shape) {
      throw DimensionError("gradient sink shape " + shape_string(dst.shape()) +
                           " differs from parameter shape " + shape_string(e.shape));
    }
    if (!e.dense.empty()) {
      auto d = dst.data();
      auto s = e.dense.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    }
    const std::size_t cols = dst.cols();
    for (std::size_t r = 0; r < e.row_ids.size(); ++r) {
      auto row = dst.row(e.row_ids[r]);
      for (std::size_t c = 0; c < cols; ++c) row[c] += e.row_values[r * cols + c];
    }
  }
}

bool Gradients::all_finite(ParamId* offender) const {
  for (const auto& [id, e] : entries_) {
    bool ok = e.dense.all_finite() &&
              std::all_of(e.row_values.begin(), e.row_values.end(),
                          [](double v) { return std::isfinite(v); });
    if (!ok) {
      if (offender) *offender = id;
      return false;
    }
  }
  return true;
}

Var Tape::record(Node node) {
  if (nodes_.size() >= std::numeric_limits<NodeId>::max()) {
    throw Error("tape node limit exceeded");
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::parameter(const Tensor& value, ParamId id) {
  Node n;
  n.op = Op::kParameter;
  n.requires_grad = true;
  n.external = &value;
  n.param = id;
  return record(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return record(std::move(n));
}

const Tensor& Tape::value(NodeId id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

namespace {

class GradSlots {
 public:
  GradSlots(const Tape& tape, std::size_t count) : tape_(tape), slots_(count), live_(count, 0) {}

  bool live(NodeId id) const { return live_[id] != 0; }
  const Tensor& get(NodeId id) const { return slots_[id]; }

  Tensor& at(NodeId id) {
    if (!live_[id]) {
      slots_[id] = Tensor(tape_.value(id).shape());
      live_[id] = 1;
    }
    return slots_[id];
  }

  void add(NodeId id, const Tensor& g) {
    if (!live_[id]) {
      slots_[id] = g;
      live_[id] = 1;
      return;
    }
    auto d = slots_[id].data();
    auto s = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  }

 private:
  const Tape& tape_;
  std::vector<Tensor> slots_;
  std::vector<char> live_;
};

Tensor transpose(const Tensor& m) {
  const std::size_t r = m.rows(), c = m.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data()[j * r + i] = m.data()[i * c + j];
  return out;
}

}  // namespace

Gradients Tape::backward(Var loss) const {
  if (loss.tape() != this) throw UsageError("backward: loss node belongs to another tape");
  if (value(loss.id()).size() != 1) {
    throw DimensionError("backward: loss node must be scalar, got shape " +
                         shape_string(value(loss.id()).shape()));
  }

  Gradients out;
  for (const Node& n : nodes_) {
    if (n.op == Op::kParameter) out.entries_[n.param].shape = n.external->shape();
  }

  GradSlots grads(*this, loss.id() + 1);
  grads.add(loss.id(), Tensor::filled(value(loss.id()).shape(), 1.0));

  auto needs = [&](NodeId id) { return nodes_[id].requires_grad; };

  for (NodeId id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || !grads.live(id)) continue;
    const Tensor& g = grads.get(id);
    const Tensor& y = value(id);

    switch (n.op) {
      case Op::kParameter: {
        Gradients::Entry& e = out.entries_[n.param];
        if (e.dense.empty()) {
          e.dense = g;
        } else {
          auto d = e.dense.data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
        break;
      }
      case Op::kConstant:
        break;
      case Op::kMatmul: {
        const Tensor& A = value(n.a);
        const Tensor& B = value(n.b);
        if (needs(n.a)) grads.add(n.a, nhfm::matmul(g, transpose(B)));
        if (needs(n.b)) grads.add(n.b, nhfm::matmul(transpose(A), g));
        break;
      }
      case Op::kAdd:
        if (needs(n.a)) grads.add(n.a, g);
        if (needs(n.b)) grads.add(n.b, g);
        break;
      case Op::kSub:
        if (needs(n.a)) grads.add(n.a, g);
        if (needs(n.b)) grads.add(n.b, nhfm::scale(g, -1.0));
        break;
      case Op::kHadamard: {
        if (needs(n.a)) {
          Tensor da = nhfm::hadamard(g, value(n.b));
          if (options_.fault == Fault::kHadamardBackward) da = nhfm::scale(da, 1.1);
          grads.add(n.a, da);
        }
        if (needs(n.b)) grads.add(n.b, nhfm::hadamard(g, value(n.a)));
        break;
      }
      case Op::kScale:
        grads.add(n.a, nhfm::scale(g, n.scalar));
        break;
      case Op::kAddRowwise:
        if (needs(n.a)) grads.add(n.a, g);
        if (needs(n.b)) grads.add(n.b, nhfm::sum_axis(g, 0));
        break;
      case Op::kSigmoid: {
        Tensor& s = grads.at(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::kTanh: {
        Tensor& s = grads.at(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::kRelu: {
        Tensor& s = grads.at(n.a);
        const Tensor& x = value(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (x[i] > 0.0) s[i] += g[i];
        }
        break;
      }
      case Op::kSquare: {
        Tensor& s = grads.at(n.a);
        const Tensor& x = value(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += 2.0 * x[i] * g[i];
        break;
      }
      case Op::kSum: {
        Tensor& s = grads.at(n.a);
        const double gv = g[0];
        for (double& v : s.data()) v += gv;
        break;
      }
      case Op::kSumAxis: {
        Tensor& s = grads.at(n.a);
        const std::size_t rows = s.rows(), cols = s.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          auto row = s.row(r);
          for (std::size_t c = 0; c < cols; ++c) row[c] += n.i0 == 0 ? g[c] : g[r];
        }
        break;
      }
      case Op::kConcat:
      case Op::kStackRows: {
        std::size_t offset = 0;
        for (NodeId in : n.inputs) {
          const std::size_t len = value(in).size();
          if (needs(in)) {
            Tensor& s = grads.at(in);
            for (std::size_t i = 0; i < len; ++i) s[i] += g[offset + i];
          }
          offset += len;
        }
        break;
      }
      case Op::kSlice: {
        Tensor& s = grads.at(n.a);
        for (std::size_t i = n.i0; i < n.i1; ++i) s[i] += g[i - n.i0];
        break;
      }
      case Op::kReshape: {
        Tensor& s = grads.at(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
        break;
      }
      case Op::kGatherRows: {
        const Node& src = nodes_[n.a];
        const std::size_t cols = g.cols();
        if (src.op == Op::kParameter) {
          Gradients::Entry& e = out.entries_[src.param];
          e.row_ids.insert(e.row_ids.end(), n.indices.begin(), n.indices.end());
          e.row_values.insert(e.row_values.end(), g.data().begin(), g.data().end());
        } else {
          Tensor& s = grads.at(n.a);
          for (std::size_t r = 0; r < n.indices.size(); ++r) {
            auto dst = s.row(n.indices[r]);
            auto gr = g.row(r);
            for (std::size_t c = 0; c < cols; ++c) dst[c] += gr[c];
          }
        }
        break;
      }
      case Op::kSegmentSum: {
        Tensor& s = grads.at(n.a);
        const std::size_t cols = s.cols();
        std::size_t r = 0;
        for (std::size_t seg = 0; seg < n.indices.size(); ++seg) {
          auto gr = g.row(seg);
          for (std::size_t i = 0; i < n.indices[seg]; ++i, ++r) {
            auto dst = s.row(r);
            for (std::size_t c = 0; c < cols; ++c) dst[c] += gr[c];
          }
        }
        break;
      }
      case Op::kSoftmax: {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
        Tensor& s = grads.at(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += y[i] * (g[i] - dot);
        break;
      }
      case Op::kBceWithLogits: {
        const double z = value(n.a).item();
        Tensor& s = grads.at(n.a);
        s[0] += g[0] * n.scalar2 * (nhfm::sigmoid(z) - n.scalar);
        break;
      }
    }
  }
  return out;
}

namespace ad {

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw UsageError(std::string(op) + ": operands recorded on different tapes");
  }
  return *a.tape();
}

Var unary(Var a, Op op, Tensor value, Tape::Node n = {}) {
  n.op = op;
  n.a = a.id();
  n.requires_grad = a.tape()->node(a.id()).requires_grad;
  n.value = std::move(value);
  return a.tape()->record(std::move(n));
}

Var binary(Var a, Var b, Op op, Tensor value, const char* name) {
  Tape& tape = same_tape(a, b, name);
  Tape::Node n;
  n.op = op;
  n.a = a.id();
  n.b = b.id();
  n.requires_grad = tape.node(a.id()).requires_grad || tape.node(b.id()).requires_grad;
  n.value = std::move(value);
  return tape.record(std::move(n));
}

Var variadic(std::span<const Var> parts, Op op, Tensor value) {
  Tape* tape = parts.front().tape();
  Tape::Node n;
  n.op = op;
  n.value = std::move(value);
  for (const Var& p : parts) {
    if (p.tape() != tape) throw UsageError("concat: operands recorded on different tapes");
    n.inputs.push_back(p.id());
    n.requires_grad = n.requires_grad || tape->node(p.id()).requires_grad;
  }
  return tape->record(std::move(n));
}

std::vector<Tensor> values_of(std::span<const Var> parts) {
  std::vector<Tensor> out;
  out.reserve(parts.size());
  for (const Var& p : parts) out.push_back(p.value());
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  return binary(a, b, Op::kMatmul, nhfm::matmul(a.value(), b.value()), "matmul");
}
Var add(Var a, Var b) { return binary(a, b, Op::kAdd, nhfm::add(a.value(), b.value()), "add"); }
Var sub(Var a, Var b) { return binary(a, b, Op::kSub, nhfm::sub(a.value(), b.value()), "sub"); }
Var hadamard(Var a, Var b) {
  return binary(a, b, Op::kHadamard, nhfm::hadamard(a.value(), b.value()), "hadamard");
}
Var add_rowwise(Var m, Var bias) {
  return binary(m, bias, Op::kAddRowwise, nhfm::add_rowwise(m.value(), bias.value()),
                "add_rowwise");
}

Var scale(Var a, double factor) {
  Tape::Node n;
  n.scalar = factor;
  return unary(a, Op::kScale, nhfm::scale(a.value(), factor), std::move(n));
}

Var sigmoid(Var a) { return unary(a, Op::kSigmoid, nhfm::sigmoid(a.value())); }
Var tanh(Var a) { return unary(a, Op::kTanh, nhfm::tanh(a.value())); }
Var relu(Var a) { return unary(a, Op::kRelu, nhfm::relu(a.value())); }
Var square(Var a) { return unary(a, Op::kSquare, nhfm::square(a.value())); }
Var sum(Var a) { return unary(a, Op::kSum, nhfm::sum(a.value())); }

Var sum_axis(Var a, std::size_t axis) {
  Tape::Node n;
  n.i0 = axis;
  return unary(a, Op::kSumAxis, nhfm::sum_axis(a.value(), axis), std::move(n));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  auto values = values_of(parts);
  return variadic(parts, Op::kConcat, nhfm::concat(values));
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  auto values = values_of(rows);
  return variadic(rows, Op::kStackRows, nhfm::stack_rows(values));
}

Var slice(Var v, std::size_t begin, std::size_t end) {
  Tape::Node n;
  n.i0 = begin;
  n.i1 = end;
  return unary(v, Op::kSlice, nhfm::slice(v.value(), begin, end), std::move(n));
}

Var reshape(Var a, Shape shape) {
  return unary(a, Op::kReshape, a.value().reshaped(std::move(shape)));
}

Var gather_rows(Var table, std::vector<std::size_t> indices) {
  Tensor value = nhfm::gather_rows(table.value(), indices);
  Tape::Node n;
  n.indices = std::move(indices);
  return unary(table, Op::kGatherRows, std::move(value), std::move(n));
}

Var segment_sum(Var m, std::vector<std::size_t> lengths) {
  Tensor value = nhfm::segment_sum(m.value(), lengths);
  Tape::Node n;
  n.indices = std::move(lengths);
  return unary(m, Op::kSegmentSum, std::move(value), std::move(n));
}

Var softmax(Var logits) { return unary(logits, Op::kSoftmax, nhfm::softmax(logits.value())); }

Var bce_with_logits(Var logit, double label, double weight) {
  const double z = logit.value().item();
  const double loss = weight * (std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z))));
  Tape::Node n;
  n.scalar = label;
  n.scalar2 = weight;
  return unary(logit, Op::kBceWithLogits, Tensor::scalar(loss), std::move(n));
}

}  // namespace ad

double relative_error(double analytic, double numeric) noexcept {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

FiniteDiffReport finite_diff_check(const LossBuilder& loss, std::vector<Tensor> params,
                                   double eps, TapeOptions options) {
  auto evaluate = [&](const std::vector<Tensor>& ps, Gradients* grads) {
    Tape tape(options);
    std::vector<Var> leaves;
    leaves.reserve(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) leaves.push_back(tape.parameter(ps[i], i));
    Var l = loss(tape, leaves);
    if (grads) *grads = tape.backward(l);
    return l.value().item();
  };

  Gradients grads;
  evaluate(params, &grads);

  FiniteDiffReport report;
  report.per_param.assign(params.size(), ScalarMismatch{});
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor analytic = grads.dense(p);
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + eps;
      const double up = evaluate(params, nullptr);
      params[p][i] = saved - eps;
      const double down = evaluate(params, nullptr);
      params[p][i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[i], numeric);
      auto& worst = report.per_param[p];
      if (err > worst.rel_error || i == 0) worst = ScalarMismatch{err, i, analytic[i], numeric};
      if (err > report.max_rel_error || (p == 0 && i == 0)) {
        report.max_rel_error = err;
        report.worst_param = p;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace nhfm
