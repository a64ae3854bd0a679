#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nhfm {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Rank 0 is a scalar, rank 1 a vector,
/// rank 2 a matrix; nothing in the model needs more.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
  static Tensor filled(Shape shape, double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Row count for rank-2 tensors; 1 for vectors and scalars.
  std::size_t rows() const noexcept;
  /// Column count for rank-2 tensors; length for vectors; 1 for scalars.
  std::size_t cols() const noexcept;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;
  /// Throws NumericalError naming `what` when any entry is NaN or infinite.
  void assert_finite(std::string_view what) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape) noexcept;

// Plain (tape-free) kernels. The differentiable versions in autodiff.hpp
// call these for their forward values.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_rowwise(const Tensor& m, const Tensor& bias);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
/// axis 0 collapses rows (result has cols() entries); axis 1 collapses columns.
Tensor sum_axis(const Tensor& a, std::size_t axis);
/// Flat concatenation of vectors (or any tensors, treated as flat).
Tensor concat(std::span<const Tensor> parts);
/// Stacks equal-length vectors as rows of a matrix.
Tensor stack_rows(std::span<const Tensor> rows);
Tensor slice(const Tensor& v, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
/// Sums consecutive row segments: segment s covers `lengths[s]` rows.
Tensor segment_sum(const Tensor& m, std::span<const std::size_t> lengths);
Tensor softmax(const Tensor& logits);

double sigmoid(double x) noexcept;

}  // namespace nhfm
