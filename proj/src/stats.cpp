#include "alprobe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace alprobe {

double mean(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("mean of empty sample");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

std::optional<double> pearson(std::span<const double> x,
                              std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("pearson: need >= 3 points");
  const double n = static_cast<double>(x.size());
  double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  (void)n;
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 8 || b.size() < 8) {
    throw std::invalid_argument("ks_two_sample: both samples need >= 8 points");
  }
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());

  const std::size_t m = sa.size(), n = sb.size();
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < m && j < n) {
    const double v = std::min(sa[i], sb[j]);
    while (i < m && sa[i] <= v) ++i;
    while (j < n && sb[j] <= v) ++j;
    const double fa = static_cast<double>(i) / static_cast<double>(m);
    const double fb = static_cast<double>(j) / static_cast<double>(n);
    d = std::max(d, std::abs(fa - fb));
  }

  KsResult r;
  r.statistic = d;
  const double ne = static_cast<double>(m) * static_cast<double>(n) /
                    static_cast<double>(m + n);
  const double sqrt_ne = std::sqrt(ne);
  const double lambda = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d;
  if (lambda <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  double p = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 1000; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    p += sign * term;
    sign = -sign;
    if (term < 1e-10) break;
  }
  r.p_value = std::clamp(2.0 * p, 0.0, 1.0);
  return r;
}

}  // namespace alprobe
