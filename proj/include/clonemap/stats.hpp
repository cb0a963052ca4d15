#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace clonemap {

enum class TestKind { kStudentT, kWelchT, kZProportions };

std::string_view to_string(TestKind kind);

struct TestResult {
  TestKind kind = TestKind::kStudentT;
  /// False when the test is undefined for the inputs (too few samples or
  /// zero variance); statistic and p-value are then NaN.
  bool applicable = true;
  double statistic = 0.0;
  /// Two-sided.
  double p_value = 1.0;
  /// log10 of the p-value, finite even where `p_value` underflows to 0.
  double log10_p = 0.0;
};

/// Two-sample independent t-test, pooled variance unless `welch`.
TestResult t_test_independent(std::span<const double> xs, std::span<const double> ys,
                              bool welch = false);

/// Pooled two-proportion z-test without continuity correction.
TestResult z_test_proportions(std::size_t k1, std::size_t n1, std::size_t k2, std::size_t n2);

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

/// Quartiles use linear interpolation between order statistics.
Summary summarize(std::span<const double> xs);

}  // namespace clonemap
