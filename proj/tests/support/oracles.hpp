#pragma once

// Slow, direct reference implementations used to check the library.
// None of these call into nhfm beyond plain data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), Vec(b.front().size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.front().size(); ++j)
      for (std::size_t p = 0; p < b.size(); ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

/// sum_{i<j} u_i (.) u_j, term by term.
inline Vec pairwise_hadamard(const Mat& u, std::size_t k) {
  Vec out(k, 0.0);
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = i + 1; j < u.size(); ++j)
      for (std::size_t d = 0; d < k; ++d) out[d] += u[i][d] * u[j][d];
  return out;
}

inline Vec masked_pairwise_hadamard(const Mat& e, const std::vector<std::uint8_t>& q,
                                    std::size_t k) {
  Vec out(k, 0.0);
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = i + 1; j < e.size(); ++j)
      for (std::size_t d = 0; d < k; ++d) out[d] += q[i] * e[i][d] * q[j] * e[j][d];
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// y = x W + b for a row vector x.
inline Vec affine(const Vec& x, const Mat& w, const Vec& b) {
  Vec y(b);
  for (std::size_t j = 0; j < b.size(); ++j)
    for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * w[i][j];
  return y;
}

struct Attention {
  Vec weights;
  Vec logits;
  Vec s_self;
};

/// Self-importance with scalar loops: logit_t = <F1 e_t, F2 e_t>/sqrt(k),
/// softmax, s_self = sum_t a_t relu(F3 e_t).
inline Attention attention(const Mat& history, const Mat w[3], const Vec b[3]) {
  const std::size_t k = b[0].size();
  Attention out;
  for (const auto& e : history) {
    const Vec q = affine(e, w[0], b[0]);
    const Vec key = affine(e, w[1], b[1]);
    double dot = 0.0;
    for (std::size_t d = 0; d < k; ++d) dot += q[d] * key[d];
    out.logits.push_back(dot / std::sqrt(static_cast<double>(k)));
  }
  double mx = -INFINITY;
  for (double l : out.logits) mx = std::max(mx, l);
  double z = 0.0;
  for (double l : out.logits) z += std::exp(l - mx);
  for (double l : out.logits) out.weights.push_back(std::exp(l - mx) / z);
  out.s_self.assign(b[2].size(), 0.0);
  for (std::size_t t = 0; t < history.size(); ++t) {
    Vec v = affine(history[t], w[2], b[2]);
    for (std::size_t d = 0; d < v.size(); ++d) out.s_self[d] += out.weights[t] * std::max(v[d], 0.0);
  }
  return out;
}

/// One-direction LSTM, gate order input, forget, cell, output, with
/// wx: in x 4h, wh: h x 4h, b: 4h. Returns the final hidden state.
inline Vec lstm(const Mat& xs, const Mat& wx, const Mat& wh, const Vec& b) {
  const std::size_t h = b.size() / 4;
  Vec hs(h, 0.0), cs(h, 0.0);
  for (const auto& x : xs) {
    Vec z = b;
    for (std::size_t j = 0; j < 4 * h; ++j) {
      for (std::size_t i = 0; i < x.size(); ++i) z[j] += x[i] * wx[i][j];
      for (std::size_t i = 0; i < h; ++i) z[j] += hs[i] * wh[i][j];
    }
    Vec next_h(h);
    for (std::size_t u = 0; u < h; ++u) {
      const double ig = sigmoid(z[u]);
      const double fg = sigmoid(z[h + u]);
      const double g = std::tanh(z[2 * h + u]);
      const double og = sigmoid(z[3 * h + u]);
      cs[u] = fg * cs[u] + ig * g;
      next_h[u] = og * std::tanh(cs[u]);
    }
    hs = next_h;
  }
  return hs;
}

/// Mann-Whitney by counting every (positive, negative) pair.
inline double pair_count_auc(const Vec& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

/// ROC from every distinct threshold (predict positive when score >= thr),
/// then trapezoids over FPR in [0, c] with linear interpolation at c, then
/// McClish standardization.
inline double exhaustive_spauc(const Vec& scores, const std::vector<int>& labels, double c) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  double pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg) += 1.0;
  std::vector<std::pair<double, double>> roc = {{0.0, 0.0}};
  for (double thr : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= thr) (labels[i] ? tp : fp) += 1.0;
    }
    roc.emplace_back(fp / neg, tp / pos);
  }
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    auto [x0, y0] = roc[i - 1];
    auto [x1, y1] = roc[i];
    if (x0 >= c) break;
    if (x1 > c) {
      y1 = y0 + (y1 - y0) * (c - x0) / (x1 - x0);
      x1 = c;
    }
    area += (x1 - x0) * (y0 + y1) / 2.0;
  }
  const double a_min = c * c / 2.0, a_max = c;
  return 0.5 * (1.0 + (area - a_min) / (a_max - a_min));
}

/// Student t density with `df` degrees of freedom.
inline double t_density(double x, double df) {
  return std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) /
         std::sqrt(df * M_PI) * std::pow(1.0 + x * x / df, -(df + 1) / 2);
}

/// Two-sided tail P(|T| > t) by composite Simpson integration of the density
/// over [0, t], using symmetry.
inline double t_two_sided_p(double t, double df) {
  t = std::abs(t);
  const int n = 200000;
  const double h = t / n;
  double s = t_density(0, df) + t_density(t, df);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * t_density(i * h, df);
  const double central = s * h / 3.0;  // P(0 < T < t)
  return std::max(0.0, 1.0 - 2.0 * central);
}

inline double welch_p(const Vec& a, const Vec& b) {
  auto stats = [](const Vec& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= v.size();
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, ss / (v.size() - 1)};
  };
  auto [ma, va] = stats(a);
  auto [mb, vb] = stats(b);
  const double sa = va / a.size(), sb = vb / b.size();
  const double t = (ma - mb) / std::sqrt(sa + sb);
  const double df = (sa + sb) * (sa + sb) /
                    (sa * sa / (a.size() - 1) + sb * sb / (b.size() - 1));
  return t_two_sided_p(t, df);
}

/// Bisection on the integrated density for the upper quantile P(T < x) = p.
inline double t_quantile(double p, double df) {
  double lo = 0.0, hi = 100.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = (lo + hi) / 2;
    const double cdf = 1.0 - t_two_sided_p(mid, df) / 2.0;
    (cdf < p ? lo : hi) = mid;
  }
  return (lo + hi) / 2;
}

}  // namespace oracle
