#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace rangelab {

/// Streaming (count, mean, M2) accumulator with Chan's pairwise merge.
struct RunningStats {
  std::uint64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double d = x - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (x - mean);
  }
  void merge(const RunningStats& o);

  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double stddev() const;
  double stderr_mean() const;
};

struct Interval {
  double low = 0.0;
  double high = 1.0;
};

/// Two-sided normal quantile z with P(|Z| <= z) = confidence.
double normal_quantile_two_sided(double confidence);
double student_t_quantile_two_sided(double confidence, double dof);

/// Wilson score interval for a binomial proportion, critical value z.
Interval wilson_interval(std::uint64_t hits, std::uint64_t trials, double z = 1.959963984540054);

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_distance(std::vector<double> a, std::vector<double> b);

double sample_skewness(std::span<const double> xs);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};

/// Ordinary least squares y = intercept + slope * x.
LineFit least_squares(std::span<const double> x, std::span<const double> y);

/// Runs `task(i)` for i in [0, count) on up to `workers` threads. Tasks are
/// claimed from a shared counter; callers store results by index so the
/// outcome does not depend on scheduling. The first exception is rethrown.
void run_tasks(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& task);

}  // namespace rangelab
