#include <doctest.h>

#include <cmath>
#include <vector>

#include "clonemap/errors.hpp"
#include "clonemap/random.hpp"
#include "clonemap/stats.hpp"
#include "oracles.hpp"

using namespace clonemap;

TEST_CASE("t-test on a shifted pair") {
  const std::vector<double> x{1, 2, 3, 4}, y{2, 3, 4, 5};
  const auto r = t_test_independent(x, y);
  // Pooled variance 5/3, standard error sqrt(5/6).
  CHECK(r.statistic == doctest::Approx(-1.0 / std::sqrt(5.0 / 6.0)).epsilon(1e-12));
  CHECK(std::abs(r.p_value - oracle::t_two_sided_p(r.statistic, 6.0)) < 1e-8);
}

TEST_CASE("t-test p-values agree with quadrature") {
  Rng rng(31);
  for (int k = 0; k < 40; ++k) {
    std::vector<double> x(2 + rng.uniform_index(30)), y(2 + rng.uniform_index(30));
    for (auto& v : x) v = rng.uniform() * 10.0;
    for (auto& v : y) v = rng.uniform() * 10.0 + rng.uniform() * 3.0;
    const auto r = t_test_independent(x, y);
    const double df = static_cast<double>(x.size() + y.size() - 2);
    CHECK(std::abs(r.p_value - oracle::t_two_sided_p(r.statistic, df)) < 1e-8);
  }
}

TEST_CASE("z-test on small proportions") {
  const auto r = z_test_proportions(1, 2, 2, 2);
  // Pooled 3/4, standard error sqrt(3/16).
  CHECK(r.statistic == doctest::Approx(-0.5 / std::sqrt(3.0 / 16.0)).epsilon(1e-12));
  CHECK(std::abs(r.p_value - oracle::normal_two_sided_p(r.statistic)) < 1e-8);
}

TEST_CASE("z-test tail far from the mean") {
  const auto r = z_test_proportions(227, 400, 400, 400);
  const double want = oracle::normal_two_sided_p(r.statistic);
  CHECK(std::abs(r.p_value / want - 1.0) < 1e-6);
  CHECK(std::abs(r.log10_p - std::log10(want)) < 1e-6);
  CHECK(r.p_value < 1e-40);
}

TEST_CASE("log p stays finite where the p-value underflows") {
  std::vector<double> x(400, 10.0), y(400, 20.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] += 0.001 * static_cast<double>(i % 7);
    y[i] += 0.001 * static_cast<double>(i % 5);
  }
  const auto r = t_test_independent(x, y);
  CHECK(r.p_value == 0.0);
  CHECK(std::isfinite(r.log10_p));
  CHECK(r.log10_p < -300.0);
}

TEST_CASE("degenerate inputs are marked inapplicable") {
  const std::vector<double> one{1.0}, two{1.0, 2.0}, flat{3.0, 3.0};
  CHECK_FALSE(t_test_independent(one, two).applicable);
  CHECK_FALSE(t_test_independent(flat, flat).applicable);
  // All successes on both sides: the proportions are equal by construction.
  CHECK(z_test_proportions(4, 4, 5, 5).p_value == 1.0);
  CHECK(z_test_proportions(4, 4, 5, 5).statistic == 0.0);
}

TEST_CASE("welch test uses separate variances") {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 4, 6, 8, 10, 12, 14};
  const auto r = t_test_independent(x, y, true);
  const double vx = 2.5 / 5.0, vy = 56.0 / 3.0 / 7.0;
  CHECK(r.statistic == doctest::Approx((3.0 - 8.0) / std::sqrt(vx + vy)).epsilon(1e-12));
  const double df = (vx + vy) * (vx + vy) / (vx * vx / 4.0 + vy * vy / 6.0);
  CHECK(std::abs(r.p_value - oracle::t_two_sided_p(r.statistic, df)) < 1e-8);
}

TEST_CASE("summary quartiles interpolate") {
  const std::vector<double> x{4, 1, 3, 2};
  const auto s = summarize(x);
  CHECK(s.n == 4);
  CHECK(s.mean == doctest::Approx(2.5));
  CHECK(s.median == doctest::Approx(2.5));
  CHECK(s.q1 == doctest::Approx(1.75));
  CHECK(s.q3 == doctest::Approx(3.25));
  CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(summarize(std::vector<double>{}).n == 0);
}
