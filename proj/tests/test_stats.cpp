#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "alprobe/stats.hpp"

using namespace alprobe;

namespace {

// Textbook product-moment formula, written independently of the library.
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double vx = sxx / n - (sx / n) * (sx / n);
  const double vy = syy / n - (sy / n) * (sy / n);
  return cov / std::sqrt(vx * vy);
}

// Sup distance between empirical CDFs by direct evaluation at all points.
double ks_stat_oracle(std::vector<double> a, std::vector<double> b) {
  std::vector<double> all = a;
  all.insert(all.end(), b.begin(), b.end());
  double d = 0.0;
  auto ecdf = [](const std::vector<double>& s, double t) {
    double c = 0;
    for (double v : s) {
      if (v <= t) ++c;
    }
    return c / static_cast<double>(s.size());
  };
  for (double t : all) d = std::max(d, std::abs(ecdf(a, t) - ecdf(b, t)));
  return d;
}

}  // namespace

TEST_CASE("pearson of a vector with itself is 1") {
  std::vector<double> x = {0.2, 0.9, 0.4, 0.6, 0.1};
  CHECK(*pearson(x, x) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pearson matches textbook oracle on random data") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(0, 1);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x(50), y(50);
    for (auto& v : x) v = uni(rng);
    for (auto& v : y) v = uni(rng);
    const auto got = pearson(x, y);
    REQUIRE(got.has_value());
    CHECK(*got == doctest::Approx(pearson_oracle(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("pearson is invariant under positive affine transforms") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uni(0, 1);
  std::vector<double> x(30), y(30);
  for (auto& v : x) v = uni(rng);
  for (auto& v : y) v = uni(rng);
  std::vector<double> x2 = x, y2 = y;
  for (auto& v : x2) v = 3.5 * v + 0.2;
  for (auto& v : y2) v = 0.7 * v - 1.0;
  CHECK(*pearson(x2, y2) == doctest::Approx(*pearson(x, y)).epsilon(1e-12));
}

TEST_CASE("pearson degenerate cases") {
  std::vector<double> c = {0.5, 0.5, 0.5};
  std::vector<double> x = {0.1, 0.2, 0.3};
  CHECK(!pearson(c, x).has_value());
  CHECK(!pearson(x, c).has_value());
  std::vector<double> two = {0.1, 0.2};
  CHECK_THROWS(pearson(two, two));
  std::vector<double> other = {0.1, 0.2, 0.3, 0.4};
  CHECK_THROWS(pearson(x, other));
}

TEST_CASE("ks on identical samples gives D=0, p=1") {
  std::vector<double> a = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  const auto r = ks_two_sample(a, a);
  CHECK(r.statistic == 0.0);
  CHECK(r.p_value == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ks detects shifted uniforms") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(0, 1);
  std::vector<double> a(200), b(200);
  for (auto& v : a) v = uni(rng);
  for (auto& v : b) v = uni(rng) + 0.5;
  const auto r = ks_two_sample(a, b);
  CHECK(r.statistic == doctest::Approx(ks_stat_oracle(a, b)).epsilon(1e-12));
  CHECK(r.p_value < 0.001);
}

TEST_CASE("ks statistic matches ecdf oracle on random data") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> uni(0, 1);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> a(40), b(60);
    for (auto& v : a) v = uni(rng);
    for (auto& v : b) v = uni(rng) * uni(rng);
    const auto r = ks_two_sample(a, b);
    CHECK(r.statistic == doctest::Approx(ks_stat_oracle(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("ks requires at least 8 observations per sample") {
  std::vector<double> small = {0.1, 0.2, 0.3};
  std::vector<double> ok = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  CHECK_THROWS(ks_two_sample(small, ok));
  CHECK_THROWS(ks_two_sample(ok, small));
}

TEST_CASE("mean and population stddev") {
  std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  CHECK(mean(x) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(stddev(x) == doctest::Approx(std::sqrt(1.25)).epsilon(1e-12));
}
