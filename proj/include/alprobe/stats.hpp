#ifndef ALPROBE_STATS_HPP
#define ALPROBE_STATS_HPP

#include <optional>
#include <span>
#include <vector>

namespace alprobe {

// Product-moment correlation. Requires equal lengths >= 3.
// Returns nullopt when either side has zero variance.
std::optional<double> pearson(std::span<const double> x,
                              std::span<const double> y);

struct KsResult {
  double statistic = 0.0;  // D = sup |F_a - F_b|
  double p_value = 1.0;    // asymptotic two-sided
};

// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
//   p = 2 * sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2),
//   lambda = (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * D,  ne = m*n/(m+n).
// Both samples need >= 8 observations.
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> x);
double stddev(std::span<const double> x);  // population

}  // namespace alprobe

#endif  // ALPROBE_STATS_HPP
