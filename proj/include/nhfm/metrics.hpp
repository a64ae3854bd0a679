#pragma once

#include <span>
#include <string>
#include <vector>

namespace nhfm {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 0 or 1
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Empirical ROC from (0,0) to (1,1); tied scores form a single step.
std::vector<RocPoint> roc_curve(const ScoredSet& set);

/// Mann-Whitney AUC: P(s_pos > s_neg) + P(tie) / 2.
double auc(const ScoredSet& set);

/// Raw ROC area over FPR in [0, c], trapezoidal, interpolated at FPR = c.
double partial_auc(const ScoredSet& set, double c);

/// McClish-standardized partial AUC: 1/2 (1 + (A - c^2/2) / (c - c^2/2)).
double spauc(const ScoredSet& set, double c = 0.01);

struct RunSummary {
  std::vector<double> values;
  double mean = 0.0;
  double halfwidth = 0.0;  // t_{m-1, (1+level)/2} * s / sqrt(m)

  /// "mean±halfwidth" with fixed decimals, e.g. 0.7708±0.0006.
  std::string format(int decimals = 4) const;
};

RunSummary mean_ci(std::span<const double> values, double level = 0.95);

/// Student t quantile, exposed for reports and tests.
double student_t_quantile(double df, double p);

/// Two-sided p-value of Welch's unequal-variance t-test.
double ttest_ind(std::span<const double> a, std::span<const double> b);

}  // namespace nhfm
