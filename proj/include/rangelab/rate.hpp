#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rangelab/moment.hpp"
#include "rangelab/rng.hpp"
#include "rangelab/stats.hpp"
#include "rangelab/walk.hpp"

namespace rangelab {

enum class CenteringMode { mc_table, exact };

std::string to_string(CenteringMode mode);

/// Value used to centre R_n, with its own standard error (zero when exact).
struct Centering {
  std::size_t n = 0;
  double r = 0.0;
  double std_error = 0.0;
  CenteringMode mode = CenteringMode::mc_table;

  static Centering from_table(const MeanRangeEntry& entry);
  static Centering from_exact(const ExactPmf& pmf);
};

/// (log^2 n / n) * (R_n - centering) for N independent walks.
struct ScaledSampleSet {
  std::size_t n = 0;
  Centering centering;
  std::vector<double> values;

  double scale() const;
};

struct ScaledOptions {
  std::size_t min_n = 1000;
  /// Largest allowed centering stderr after scaling.
  double max_scaled_centering_error = 0.01;
};

/// CenteringUnavailable when the centering does not match n or is too noisy;
/// DomainError when n < options.min_n.
ScaledSampleSet scaled_samples(const StepDistribution& dist, std::size_t n, std::uint64_t N,
                               const SeedRecord& seed, const Centering& centering, unsigned workers = 1,
                               const ScaledOptions& options = {});

/// Convex piecewise-cubic interpolant through (x_i, y_i) on an ascending grid.
/// Knot slopes are three-point finite differences (second-order one-sided at
/// the ends); an interval whose cubic is not convex falls back to the chord.
class ConvexInterpolant {
 public:
  ConvexInterpolant() = default;
  ConvexInterpolant(std::vector<double> x, std::vector<double> y);

  double value(double t) const;
  double derivative(double t) const;
  /// Three-point finite-difference derivative at knot i.
  double knot_slope(std::size_t i) const { return slopes_[i]; }

  const std::vector<double>& x() const { return x_; }
  const std::vector<double>& y() const { return y_; }
  double lo() const { return x_.front(); }
  double hi() const { return x_.back(); }

 private:
  std::size_t interval(double t) const;

  std::vector<double> x_;
  std::vector<double> y_;
  std::vector<double> slopes_;
  std::vector<char> chord_;
};

struct ConjugatePoint {
  double value = 0.0;   // sup_t (s t - f(t))
  double argmax = 0.0;
};

/// Conjugate of an interpolated convex function at slope s, by grid scan
/// plus golden-section refinement. MaximizerAtBoundary when the maximiser is
/// a grid edge other than a left edge at t = 0.
ConjugatePoint conjugate(const ConvexInterpolant& f, double s);

struct LogMgfCurve {
  std::vector<double> lambda_grid;
  std::vector<double> values;      // convex projection of raw
  std::vector<double> raw;
  std::vector<double> std_error;   // jackknife
  std::vector<double> ess;         // (sum w)^2 / sum w^2
  std::vector<char> reliable;      // ess >= kMinEss
  std::size_t n_used = 0;
  std::uint64_t N_used = 0;
  /// Largest |values - raw| / std_error over the grid (0 where stderr is 0
  /// and the values agree).
  double projection_shift = 0.0;
  bool convexity_flag = false;     // projection_shift > 3

  ConvexInterpolant interpolant() const;
  std::string to_csv() const;
};

inline constexpr double kMinEss = 100.0;

/// Empirical log-MGF log((1/N) sum exp(lambda v)). The grid must be strictly
/// ascending and contain 0.
LogMgfCurve log_mgf(std::span<const double> values, const std::vector<double>& lambda_grid,
                    std::size_t n_used = 0);

/// Noise-free curve from a closed-form log-MGF, for fixtures.
LogMgfCurve curve_from_function(const std::vector<double>& lambda_grid,
                                const std::function<double(double)>& f);

std::vector<double> uniform_grid(double lo, double hi, double step);

struct LegendrePoint {
  double lambda_star = 0.0;
  double lambda0 = 0.0;
};

/// Lambda*(beta) = sup_lambda (beta lambda - Lambda(lambda)) and its maximiser.
LegendrePoint legendre(const LogMgfCurve& curve, double beta);

struct RateSolution {
  std::vector<double> beta_grid;
  std::vector<double> lambda_star;  // NaN where the maximiser left the grid
  std::vector<double> lambda0;
  double b0 = 0.0;
  double beta0 = 0.0;
  /// max_beta exp(-(beta+1)) Lambda*(beta) and its maximiser.
  double tilde_lambda_direct = 0.0;
  double beta_direct = 0.0;
  /// exp(-(beta0+1)) b0.
  double tilde_lambda_closed = 0.0;
  /// exp(-(beta0-1)) b0, the alternative closed form.
  double tilde_lambda_alt = 0.0;
  /// |direct - closed| / direct.
  double residual = 0.0;
  /// |dLambda*/dbeta - Lambda*| / Lambda* at beta0.
  double optimality_residual = 0.0;

  std::string to_json() const;
};

/// b0 is the first positive root of g(b) = Lambda(b) - b (Lambda'(b) - 1),
/// bracketed on the grid and refined by bisection. NoBracket when g keeps its
/// sign; NonConvexCurve when the curve carries the convexity flag.
RateSolution solve_rate_constants(const LogMgfCurve& curve, std::vector<double> beta_grid = {});

struct BootstrapInterval {
  Interval b0;
  Interval beta0;
  Interval tilde_lambda;
  std::size_t resamples = 0;
  std::size_t failures = 0;  // resamples without a bracket
};

/// Percentile intervals from resampling the scaled values with replacement.
BootstrapInterval bootstrap_rate_constants(std::span<const double> values,
                                           const std::vector<double>& lambda_grid, std::size_t resamples,
                                           const SeedRecord& seed, double confidence = 0.95);

/// Conjugate of Lambda* tabulated on the beta grid, evaluated at lambda.
double biconjugate(const std::vector<double>& beta_grid, const std::vector<double>& lambda_star, double lambda);

}  // namespace rangelab
