#include "nhfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "nhfm/error.hpp"

namespace nhfm {

namespace {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts check_set(const ScoredSet& set, const char* op) {
  if (set.scores.size() != set.labels.size()) {
    throw UsageError(std::string(op) + ": scores and labels differ in length");
  }
  ClassCounts c;
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    if (!std::isfinite(set.scores[i])) throw NumericalError(std::string(op) + ": non-finite score");
    if (set.labels[i] == 1) {
      ++c.pos;
    } else if (set.labels[i] == 0) {
      ++c.neg;
    } else {
      throw UsageError(std::string(op) + ": labels must be 0 or 1");
    }
  }
  if (c.pos == 0 || c.neg == 0) {
    throw DataError(std::string(op) + ": needs at least one positive and one negative");
  }
  return c;
}

std::vector<std::size_t> order_by_score(const ScoredSet& set, bool descending) {
  std::vector<std::size_t> order(set.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? set.scores[a] > set.scores[b] : set.scores[a] < set.scores[b];
  });
  return order;
}

double sample_variance(std::span<const double> v, double mean) {
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<RocPoint> roc_curve(const ScoredSet& set) {
  const ClassCounts counts = check_set(set, "roc_curve");
  const auto order = order_by_score(set, /*descending=*/true);
  std::vector<RocPoint> points{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = set.scores[order[i]];
    for (; i < order.size() && set.scores[order[i]] == s; ++i) {
      if (set.labels[order[i]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
    }
    points.push_back({static_cast<double>(fp) / counts.neg, static_cast<double>(tp) / counts.pos});
  }
  return points;
}

double auc(const ScoredSet& set) {
  const ClassCounts counts = check_set(set, "auc");
  const auto order = order_by_score(set, /*descending=*/false);
  // Sum of 1-based midranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && set.scores[order[j]] == set.scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t r = i; r < j; ++r) {
      if (set.labels[order[r]] == 1) rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(counts.pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(counts.neg));
}

double partial_auc(const ScoredSet& set, double c) {
  if (!(c > 0.0 && c <= 1.0)) throw UsageError("partial_auc: FPR ceiling must lie in (0, 1]");
  const auto roc = roc_curve(set);
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    const RocPoint& a = roc[i - 1];
    const RocPoint& b = roc[i];
    if (a.fpr >= c) break;
    if (b.fpr <= c) {
      area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
    } else {
      const double tpr_at_c = a.tpr + (b.tpr - a.tpr) * (c - a.fpr) / (b.fpr - a.fpr);
      area += (c - a.fpr) * (a.tpr + tpr_at_c) / 2.0;
      break;
    }
  }
  return area;
}

double spauc(const ScoredSet& set, double c) {
  if (!(c > 0.0 && c <= 1.0)) throw UsageError("spauc: FPR ceiling must lie in (0, 1]");
  const double a = partial_auc(set, c);
  const double a_min = c * c / 2.0;
  const double a_max = c;
  return 0.5 * (1.0 + (a - a_min) / (a_max - a_min));
}

std::string RunSummary::format(int decimals) const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f±%.*f", decimals, mean, decimals, halfwidth);
  return buf;
}

double student_t_quantile(double df, double p) {
  return boost::math::quantile(boost::math::students_t(df), p);
}

RunSummary mean_ci(std::span<const double> values, double level) {
  if (values.size() < 2) throw UsageError("mean_ci: needs at least two values");
  if (!(level > 0.0 && level < 1.0)) throw UsageError("mean_ci: level must lie in (0, 1)");
  RunSummary out;
  out.values.assign(values.begin(), values.end());
  out.mean = mean_of(values);
  const double m = static_cast<double>(values.size());
  const double s = std::sqrt(sample_variance(values, out.mean));
  out.halfwidth = student_t_quantile(m - 1.0, 0.5 + level / 2.0) * s / std::sqrt(m);
  return out;
}

double ttest_ind(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw UsageError("ttest_ind: each group needs two values");
  const double ma = mean_of(a), mb = mean_of(b);
  const double va = sample_variance(a, ma) / static_cast<double>(a.size());
  const double vb = sample_variance(b, mb) / static_cast<double>(b.size());
  const double se2 = va + vb;
  if (se2 == 0.0) return ma == mb ? 1.0 : 0.0;
  const double t = (ma - mb) / std::sqrt(se2);
  const double df = se2 * se2 / (va * va / static_cast<double>(a.size() - 1) +
                                 vb * vb / static_cast<double>(b.size() - 1));
  // P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2).
  return boost::math::ibeta(df / 2.0, 0.5, df / (df + t * t));
}

}  // namespace nhfm
