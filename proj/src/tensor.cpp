#include "nhfm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "nhfm/error.hpp"

namespace nhfm {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, std::string_view op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(a.shape()));
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::size_t Tensor::rows() const noexcept { return rank() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const noexcept {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  return 1;
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

double Tensor::at(std::size_t r, std::size_t c) const { return data_.at(r * cols() + c); }

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on non-scalar tensor " + shape_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::assert_finite(std::string_view what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericalError("non-finite value " + std::to_string(data_[i]) + " at flat index " +
                           std::to_string(i) + " of " + std::string(what));
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  Tensor out({m, p});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double av = A[i * k + l];
      if (av == 0.0) continue;
      const double* brow = B + l * p;
      double* crow = C + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  auto d = out.data();
  auto s = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  auto d = out.data();
  auto s = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  auto d = out.data();
  auto s = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= s[i];
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  return map(a, [factor](double x) { return x * factor; });
}

Tensor add_rowwise(const Tensor& m, const Tensor& bias) {
  require_rank(m, 2, "add_rowwise");
  require_rank(bias, 1, "add_rowwise bias");
  if (bias.size() != m.cols()) {
    throw DimensionError("add_rowwise: bias " + shape_string(bias.shape()) +
                         " does not match matrix " + shape_string(m.shape()));
  }
  Tensor out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
  return out;
}

double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& a) {
  return map(a, [](double x) { return sigmoid(x); });
}

Tensor tanh(const Tensor& a) {
  return map(a, [](double x) { return std::tanh(x); });
}

Tensor relu(const Tensor& a) {
  return map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor square(const Tensor& a) {
  return map(a, [](double x) { return x * x; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::scalar(s);
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  require_rank(a, 2, "sum_axis");
  const std::size_t r = a.rows(), c = a.cols();
  if (axis == 0) {
    Tensor out({c});
    for (std::size_t i = 0; i < r; ++i) {
      auto row = a.row(i);
      for (std::size_t j = 0; j < c; ++j) out[j] += row[j];
    }
    return out;
  }
  if (axis == 1) {
    Tensor out({r});
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (double v : a.row(i)) s += v;
      out[i] = s;
    }
    return out;
  }
  throw DimensionError("sum_axis: axis " + std::to_string(axis) + " out of range for rank 2");
}

Tensor concat(std::span<const Tensor> parts) {
  std::vector<double> data;
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  data.reserve(total);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor::vector(std::move(data));
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t c = rows.front().size();
  std::vector<double> data;
  data.reserve(c * rows.size());
  for (const auto& r : rows) {
    if (r.size() != c) {
      throw DimensionError("stack_rows: row length " + std::to_string(r.size()) +
                           " differs from " + std::to_string(c));
    }
    data.insert(data.end(), r.data().begin(), r.data().end());
  }
  return Tensor::matrix(rows.size(), c, std::move(data));
}

Tensor slice(const Tensor& v, std::size_t begin, std::size_t end) {
  if (begin > end || end > v.size()) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(v.shape()));
  }
  return Tensor::vector(std::vector<double>(v.data().begin() + static_cast<std::ptrdiff_t>(begin),
                                            v.data().begin() + static_cast<std::ptrdiff_t>(end)));
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_rank(table, 2, "gather_rows");
  const std::size_t c = table.cols();
  Tensor out({indices.size(), c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= table.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) +
                           " out of range for table " + shape_string(table.shape()));
    }
    auto src = table.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Tensor segment_sum(const Tensor& m, std::span<const std::size_t> lengths) {
  require_rank(m, 2, "segment_sum");
  const std::size_t total = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
  if (total != m.rows()) {
    throw DimensionError("segment_sum: segment lengths cover " + std::to_string(total) +
                         " rows, matrix has " + std::to_string(m.rows()));
  }
  const std::size_t c = m.cols();
  Tensor out({lengths.size(), c});
  std::size_t r = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    auto dst = out.row(s);
    for (std::size_t i = 0; i < lengths[s]; ++i, ++r) {
      auto src = m.row(r);
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 1, "softmax");
  if (logits.empty()) throw DimensionError("softmax: empty input");
  const double mx = *std::max_element(logits.data().begin(), logits.data().end());
  Tensor out(logits.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= z;
  return out;
}

}  // namespace nhfm
