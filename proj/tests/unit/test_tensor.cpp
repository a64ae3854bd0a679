#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "nhfm/error.hpp"
#include "nhfm/tensor.hpp"
#include "../support/oracles.hpp"

using namespace nhfm;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> v(r * c);
  for (double& x : v) x = u(rng);
  return Tensor::matrix(r, c, std::move(v));
}

oracle::Mat to_mat(const Tensor& t) {
  oracle::Mat m(t.rows(), oracle::Vec(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

}  // namespace

TEST(Tensor, ShapeAndDataLengthAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(Tensor::scalar(4).rank(), 0u);
  EXPECT_EQ(Tensor::scalar(4).item(), 4.0);
}

TEST(Tensor, AssertFiniteFlagsNanAndInf) {
  Tensor t = Tensor::vector({1.0, 2.0});
  EXPECT_NO_THROW(t.assert_finite("ok"));
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(t.assert_finite("t"), NumericalError);
  t[1] = INFINITY;
  EXPECT_THROW(t.assert_finite("t"), NumericalError);
}

TEST(Matmul, IdentityCase) {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(matmul(eye, m), m);
}

TEST(Matmul, SelectorRow) {
  EXPECT_EQ(matmul(Tensor::matrix(1, 2, {1, 0}), Tensor::matrix(2, 1, {0, 5})),
            Tensor::matrix(1, 1, {0}));
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng);
    const Tensor c = matmul(a, b);
    const auto ref = oracle::matmul(to_mat(a), to_mat(b));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(c.at(i, j), ref[i][j], 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Hadamard, Examples) {
  EXPECT_EQ(hadamard(Tensor::vector({1, 2}), Tensor::vector({3, 4})), Tensor::vector({3, 8}));
  const Tensor x = Tensor::vector({0.5, -3, 7});
  EXPECT_EQ(hadamard(x, Tensor::filled({3}, 1.0)), x);
  EXPECT_THROW(hadamard(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);
}

TEST(Hadamard, MatchesElementwiseLoop) {
  std::mt19937_64 rng(3);
  const Tensor a = random_matrix(4, 5, rng), b = random_matrix(4, 5, rng);
  const Tensor c = hadamard(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(c[i], a[i] * b[i]);
}

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(Tensor::vector({0, 0})), Tensor::vector({0.5, 0.5}));
  for (double x : {-1e6, -3.0, 0.0, 42.0, 1e300}) {
    EXPECT_EQ(softmax(Tensor::vector({x})), Tensor::vector({1.0}));
  }
  const Tensor big = softmax(Tensor::vector({1000, 1000}));
  EXPECT_EQ(big, Tensor::vector({0.5, 0.5}));
  EXPECT_THROW(softmax(Tensor({0})), DimensionError);
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-30, 30);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> v(1 + rep % 9);
    for (double& x : v) x = u(rng);
    const Tensor a = softmax(Tensor::vector(v));
    double s = 0;
    for (double x : a.data()) {
      EXPECT_GT(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    const double shift = u(rng);
    for (double& x : v) x += shift;
    const Tensor b = softmax(Tensor::vector(v));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Elementwise, SigmoidAtZero) { EXPECT_EQ(sigmoid(0.0), 0.5); }

TEST(Structural, ConcatAndGather) {
  const Tensor parts[] = {Tensor::vector({1}), Tensor::vector({2, 3})};
  EXPECT_EQ(concat(parts), Tensor::vector({1, 2, 3}));
  const Tensor v = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(gather_rows(v, std::vector<std::size_t>{2, 0, 2}), Tensor::matrix(3, 2, {5, 6, 1, 2, 5, 6}));
  EXPECT_THROW(gather_rows(v, std::vector<std::size_t>{3}), DimensionError);
}

TEST(Structural, SumAxisAndSegmentSum) {
  const Tensor m = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(sum_axis(m, 0), Tensor::vector({9, 12}));
  EXPECT_EQ(sum_axis(m, 1), Tensor::vector({3, 7, 11}));
  EXPECT_EQ(segment_sum(m, std::vector<std::size_t>{2, 0, 1}), Tensor::matrix(3, 2, {4, 6, 0, 0, 5, 6}));
  EXPECT_EQ(sum(m).item(), 21.0);
}
