#include "clonemap/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "clonemap/errors.hpp"

namespace clonemap {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

TestResult not_applicable(TestKind kind) {
  TestResult r;
  r.kind = kind;
  r.applicable = false;
  r.statistic = kNaN;
  r.p_value = kNaN;
  r.log10_p = kNaN;
  return r;
}

double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sum_sq_dev(std::span<const double> xs, double mean) {
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return s;
}

/// log of the two-sided t tail from the leading term of the incomplete beta
/// series; only used once the direct value has underflowed.
double log_t_tail_two_sided(double t, double df) {
  const double a = df / 2.0, b = 0.5;
  const double x = df / (df + t * t);
  const double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  return a * std::log(x) + b * std::log1p(-x) - std::log(a) - log_beta;
}

/// log erfc(u) for large u (asymptotic expansion).
double log_erfc_large(double u) {
  const double u2 = u * u;
  return -u2 - std::log(u * std::sqrt(std::numbers::pi)) +
         std::log1p(-1.0 / (2.0 * u2) + 3.0 / (4.0 * u2 * u2));
}

}  // namespace

std::string_view to_string(TestKind kind) {
  switch (kind) {
    case TestKind::kStudentT: return "student_t";
    case TestKind::kWelchT: return "welch_t";
    case TestKind::kZProportions: return "z_proportions";
  }
  return "unknown";
}

TestResult t_test_independent(std::span<const double> xs, std::span<const double> ys, bool welch) {
  const TestKind kind = welch ? TestKind::kWelchT : TestKind::kStudentT;
  if (xs.size() < 2 || ys.size() < 2) return not_applicable(kind);
  const double n1 = static_cast<double>(xs.size());
  const double n2 = static_cast<double>(ys.size());
  const double m1 = mean_of(xs), m2 = mean_of(ys);
  const double ss1 = sum_sq_dev(xs, m1), ss2 = sum_sq_dev(ys, m2);

  double se = 0.0, df = 0.0;
  if (welch) {
    const double v1 = ss1 / (n1 - 1.0) / n1;
    const double v2 = ss2 / (n2 - 1.0) / n2;
    se = std::sqrt(v1 + v2);
    df = (v1 + v2) * (v1 + v2) / (v1 * v1 / (n1 - 1.0) + v2 * v2 / (n2 - 1.0));
  } else {
    df = n1 + n2 - 2.0;
    const double pooled = (ss1 + ss2) / df;
    se = std::sqrt(pooled * (1.0 / n1 + 1.0 / n2));
  }
  if (!(se > 0.0) || !std::isfinite(df)) return not_applicable(kind);

  TestResult r;
  r.kind = kind;
  r.statistic = (m1 - m2) / se;
  const boost::math::students_t dist(df);
  r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic))));
  r.log10_p = r.p_value > 0.0 ? std::log10(r.p_value)
                              : log_t_tail_two_sided(r.statistic, df) / std::numbers::ln10;
  return r;
}

TestResult z_test_proportions(std::size_t k1, std::size_t n1, std::size_t k2, std::size_t n2) {
  if (n1 == 0 || n2 == 0) throw InvalidArgument("proportion test needs non-empty samples");
  if (k1 > n1 || k2 > n2) throw InvalidArgument("success count exceeds sample size");
  const double p1 = static_cast<double>(k1) / static_cast<double>(n1);
  const double p2 = static_cast<double>(k2) / static_cast<double>(n2);
  const double pooled = static_cast<double>(k1 + k2) / static_cast<double>(n1 + n2);
  const double se = std::sqrt(pooled * (1.0 - pooled) *
                              (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
  TestResult r;
  r.kind = TestKind::kZProportions;
  if (!(se > 0.0)) {
    // Pooled proportion 0 or 1 forces p1 == p2.
    r.statistic = 0.0;
    r.p_value = 1.0;
    r.log10_p = 0.0;
    return r;
  }
  r.statistic = (p1 - p2) / se;
  const double u = std::abs(r.statistic) / std::numbers::sqrt2;
  r.p_value = std::erfc(u);
  r.log10_p = r.p_value > 0.0 ? std::log10(r.p_value) : log_erfc_large(u) / std::numbers::ln10;
  return r;
}

Summary summarize(std::span<const double> xs) {
  Summary s;
  s.n = xs.size();
  if (xs.empty()) {
    s.mean = s.stddev = s.min = s.q1 = s.median = s.q3 = s.max = kNaN;
    return s;
  }
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  s.mean = mean_of(v);
  s.stddev = v.size() > 1 ? std::sqrt(sum_sq_dev(v, s.mean) / static_cast<double>(v.size() - 1)) : 0.0;
  s.min = v.front();
  s.max = v.back();
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  return s;
}

}  // namespace clonemap
