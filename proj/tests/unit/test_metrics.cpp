#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nhfm/error.hpp"
#include "nhfm/metrics.hpp"
#include "../support/oracles.hpp"

using namespace nhfm;

namespace {

ScoredSet random_set(std::size_t n, std::mt19937_64& rng, int levels = 0) {
  ScoredSet s;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double v = u(rng);
    if (levels > 0) v = std::floor(v * levels) / levels;  // force ties
    s.scores.push_back(v);
    s.labels.push_back(static_cast<int>(rng() % 2));
  }
  if (std::count(s.labels.begin(), s.labels.end(), 1) == 0) s.labels[0] = 1;
  if (std::count(s.labels.begin(), s.labels.end(), 0) == 0) s.labels[0] = 0;
  return s;
}

}  // namespace

TEST(Auc, Examples) {
  EXPECT_EQ(auc({{0.9, 0.1}, {1, 0}}), 1.0);
  EXPECT_EQ(auc({{0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}}), 0.5);
  EXPECT_THROW(auc({{0.3, 0.4}, {1, 1}}), DataError);
  EXPECT_THROW(auc({{0.3}, {1, 0}}), UsageError);
}

TEST(Auc, MatchesPairCounting) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const ScoredSet s = random_set(50, rng, trial % 2 ? 7 : 0);
    EXPECT_EQ(auc(s), oracle::pair_count_auc(s.scores, s.labels));
  }
}

TEST(Auc, InvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const ScoredSet s = random_set(200, rng, trial % 2 ? 10 : 0);
    ScoredSet e = s, a = s;
    for (double& v : e.scores) v = std::exp(v);
    for (double& v : a.scores) v = 3.0 * v - 7.0;
    EXPECT_EQ(auc(e), auc(s));
    EXPECT_EQ(auc(a), auc(s));
  }
}

TEST(Auc, LabelFlipComplements) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    ScoredSet s = random_set(100, rng, 5);
    const double before = auc(s);
    for (int& l : s.labels) l = 1 - l;
    EXPECT_NEAR(auc(s), 1.0 - before, 1e-15);
  }
}

TEST(Roc, EndpointsAndTieSteps) {
  const auto roc = roc_curve({{0.9, 0.5, 0.5, 0.1}, {1, 1, 0, 0}});
  ASSERT_EQ(roc.size(), 4u);
  EXPECT_EQ(roc.front().fpr, 0.0);
  EXPECT_EQ(roc.front().tpr, 0.0);
  EXPECT_EQ(roc[2].fpr, 0.5);
  EXPECT_EQ(roc[2].tpr, 1.0);
  EXPECT_EQ(roc.back().fpr, 1.0);
  EXPECT_EQ(roc.back().tpr, 1.0);
}

TEST(Spauc, HandCaseMatchesExhaustiveThresholds) {
  const ScoredSet s{{0.9, 0.2, 0.8, 0.1}, {1, 1, 0, 0}};
  const double want = oracle::exhaustive_spauc(s.scores, s.labels, 0.5);
  EXPECT_NEAR(spauc(s, 0.5), want, 1e-15);
  // ROC (0,0) (0,.5) (.5,.5) ...: A = 0.25, A_min = 0.125, A_max = 0.5.
  EXPECT_NEAR(want, 0.5 * (1.0 + (0.25 - 0.125) / (0.5 - 0.125)), 1e-15);
}

TEST(Spauc, MatchesExhaustiveOracleOnRandomSets) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const ScoredSet s = random_set(60, rng, trial % 3 == 0 ? 6 : 0);
    for (double c : {0.01, 0.1, 0.33, 0.8}) {
      EXPECT_NEAR(spauc(s, c), oracle::exhaustive_spauc(s.scores, s.labels, c), 1e-12) << c;
    }
  }
}

TEST(Spauc, FullRangeEqualsAuc) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const ScoredSet s = random_set(80, rng, trial % 2 ? 4 : 0);
    EXPECT_NEAR(spauc(s, 1.0), auc(s), 1e-12);
  }
}

TEST(Spauc, PerfectClassifierIsOneForEveryCeiling) {
  const ScoredSet s{{0.9, 0.8, 0.7, 0.3, 0.2, 0.1}, {1, 1, 1, 0, 0, 0}};
  for (double c : {0.001, 0.01, 0.1, 0.5, 1.0}) EXPECT_DOUBLE_EQ(spauc(s, c), 1.0) << c;
  EXPECT_THROW(spauc(s, 0.0), UsageError);
  EXPECT_THROW(spauc(s, 1.5), UsageError);
  EXPECT_THROW(spauc({{0.2, 0.3}, {0, 0}}, 0.1), DataError);
}

TEST(Spauc, ChanceLevelNearHalf) {
  std::mt19937_64 rng(6);
  const ScoredSet s = random_set(10000, rng);
  EXPECT_NEAR(spauc(s, 0.01), 0.5, 0.05);
  EXPECT_NEAR(auc(s), 0.5, 0.02);
}

TEST(MeanCi, Examples) {
  const double same[] = {0.3, 0.3, 0.3, 0.3, 0.3};
  EXPECT_EQ(mean_ci(same).halfwidth, 0.0);
  const double spike[] = {0, 0, 0, 0, 1};
  const RunSummary r = mean_ci(spike);
  EXPECT_NEAR(r.mean, 0.2, 1e-15);
  const double sd = std::sqrt(0.2);  // sample std of {0,0,0,0,1}
  EXPECT_NEAR(r.halfwidth, 2.7764451051977987 * sd / std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(r.halfwidth, 0.5552, 1e-4);
  EXPECT_EQ(r.format(), "0.2000±0.5553");  // 0.55529 rounded
  const double one[] = {0.5};
  EXPECT_THROW(mean_ci(one), UsageError);
}

TEST(MeanCi, FormatMatchesTableStyle) {
  RunSummary r;
  r.mean = 0.77081;
  r.halfwidth = 0.00061;
  EXPECT_EQ(r.format(), "0.7708±0.0006");
}

TEST(StudentT, QuantileMatchesReferences) {
  EXPECT_NEAR(student_t_quantile(4, 0.975), 2.7764451051977987, 1e-12);
  // One degree of freedom is Cauchy: quantile tan(pi (p - 1/2)).
  EXPECT_NEAR(student_t_quantile(1, 0.975), std::tan(M_PI * 0.475), 1e-10);
  EXPECT_NEAR(student_t_quantile(9, 0.995), 3.2498355415921254, 1e-12);
  for (double df : {2.0, 7.5}) {
    EXPECT_NEAR(student_t_quantile(df, 0.975), oracle::t_quantile(0.975, df), 1e-6) << df;
  }
}

TEST(TTest, Examples) {
  const double a[] = {0.7, 0.71, 0.72};
  EXPECT_EQ(ttest_ind(a, a), 1.0);
  const double flat[] = {0.5, 0.5, 0.5};
  EXPECT_EQ(ttest_ind(flat, flat), 1.0);
  const double lo[] = {0.0, 1e-9, 2e-9};
  const double hi[] = {1.0, 1.0 + 1e-9, 1.0 + 2e-9};
  EXPECT_LT(ttest_ind(lo, hi), 1e-6);
  const double one[] = {1.0};
  EXPECT_THROW(ttest_ind(one, a), UsageError);
}

TEST(TTest, MatchesReferenceValues) {
  // Reference p-values from an independent statistics package.
  const double a[] = {0.71, 0.74, 0.69, 0.73, 0.72};
  const double b[] = {0.70, 0.68, 0.71, 0.69, 0.67};
  EXPECT_NEAR(ttest_ind(a, b), 0.037161641040914455, 1e-10);
  const double c[] = {1.0, 2.5, 3.1, 0.4};
  const double d[] = {2.0, 4.4, 5.9, 3.3, 6.1, 2.2};
  EXPECT_NEAR(ttest_ind(c, d), 0.049403612923771364, 1e-10);
  EXPECT_EQ(ttest_ind(a, b), ttest_ind(b, a));
}

TEST(TTest, MatchesNumericalIntegration) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<double> a(3 + trial), b(5);
    for (double& v : a) v = n(rng);
    for (double& v : b) v = n(rng) + 0.3 * trial;
    EXPECT_NEAR(ttest_ind(a, b), oracle::welch_p(a, b), 1e-8);
  }
}
