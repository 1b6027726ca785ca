#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rangelab/moment.hpp"
#include "rangelab/rng.hpp"
#include "rangelab/walk.hpp"

namespace rangelab {

enum class TailMethod { naive, splitting };

std::string to_string(TailMethod m);

/// Estimate of P(R_n >= threshold). Probabilities are also kept on the log
/// scale because splitting estimates can be far below double range.
struct TailEstimate {
  std::string dist_id;
  std::size_t n = 0;
  double theta = 1.0;
  std::size_t threshold = 0;
  double p_hat = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
  double log_p_hat = 0.0;
  double log_ci_low = 0.0;
  double log_ci_high = 0.0;
  TailMethod method = TailMethod::naive;
  std::uint64_t work = 0;  // path-steps simulated
  std::uint64_t hits = 0;  // naive only
  std::uint64_t trials = 0;
  std::vector<double> replicate_log_p;  // splitting only
  double schedule_slope = 0.0;          // splitting only
  std::uint64_t master_seed = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

/// n^(1 - 1/theta). DomainError for theta < 1 or n < 1.
double theoretical_exponent(std::size_t n, double theta);

/// ceil(theta * r_hat) as an integer range threshold.
std::size_t tail_threshold(double theta, double r_hat);

/// RegimeViolation unless theta >= 1 and theta * r_hat <= n.
void check_regime(std::size_t n, double theta, double r_hat);

/// Hit fraction of {R_n >= ceil(theta * r_hat)} over N walks with a Wilson
/// interval (critical value z). Zero hits give p_hat = 0 and a positive upper
/// bound.
TailEstimate naive_tail(const StepDistribution& dist, std::size_t n, double theta, double r_hat,
                        std::uint64_t N, const SeedRecord& seed, unsigned workers = 1,
                        double z = 1.959963984540054);

/// Same estimator at an explicit integer threshold (no regime check).
TailEstimate naive_tail_at(const StepDistribution& dist, std::size_t n, std::size_t threshold,
                           std::uint64_t N, const SeedRecord& seed, unsigned workers = 1,
                           double z = 1.959963984540054);

/// Naive estimates at threshold - 1, threshold, threshold + 1 from one set of
/// walks.
struct ThresholdSensitivity {
  TailEstimate lower;
  TailEstimate centre;
  TailEstimate upper;
};

ThresholdSensitivity naive_sensitivity(const StepDistribution& dist, std::size_t n, double theta, double r_hat,
                                       std::uint64_t N, const SeedRecord& seed, unsigned workers = 1);

/// How a killed particle is regrown from a survivor.
enum class PivotRule {
  /// Copy the survivor up to the first time its score exceeds the current
  /// level, then draw the rest afresh. Every regrown particle clears the level.
  crossing,
  /// Uniform pivot time; the fresh suffix is accepted only if the regrown path
  /// clears the level (otherwise the survivor copy is kept). Repeated
  /// mutation_steps times.
  uniform_mcmc,
};

std::string to_string(PivotRule r);
PivotRule pivot_rule_from_string(const std::string& s);

struct SplittingOptions {
  std::size_t particles = 1000;
  double kill_fraction = 0.25;
  std::size_t replications = 10;
  PivotRule pivot = PivotRule::crossing;
  /// The score of a path at time t is R_t - schedule_slope * (T / n) * t with
  /// T the threshold; a path's level is the supremum of its score, or +inf once
  /// R_t >= T. 0 makes the level the final range R_n; 1 measures progress
  /// against the straight schedule from the origin to T at time n.
  /// Any value gives an unbiased estimator but the variance is very sensitive
  /// to it. Unset means a pilot picks it (see select_schedule_slope).
  std::optional<double> schedule_slope;
  std::size_t pilot_particles = 200;
  std::size_t pilot_replications = 3;
  std::size_t mutation_steps = 1;
  /// Consecutive iterations without an accepted mutation before Stagnation.
  std::size_t max_stalled_iterations = 50;
  std::size_t max_iterations = 1'000'000;
  double confidence = 0.95;
};

/// Adaptive multilevel splitting. Each iteration kills every particle at or
/// below the K-th smallest level (K = ceil(kill_fraction * particles)) and
/// regrows it from a uniformly chosen survivor, until the K-th smallest level
/// is +inf. The estimate of one replication is prod(survivor fraction) *
/// (absorbed fraction); the reported p_hat is the mean over replications with
/// a log-scale interval p_hat * exp(+-t * rse). Stagnation when every particle
/// ties at the level or no mutation is accepted for max_stalled_iterations.
struct SlopeSelection {
  double slope = 0.0;
  std::vector<double> tried;
  std::vector<double> median_log_p;  // -inf where the pilot stagnated
  std::uint64_t work = 0;
};

/// Pilot search over the schedule slope: coarse grid 0.65..0.95, then two
/// refinements around the best, skipping slopes with slope * T >= n. Each candidate runs pilot_replications small
/// replications and scores their median log estimate; a poor score function
/// shows up as a typical replication far below the truth, so the highest
/// median wins. Seeds are disjoint from the main replications'.
SlopeSelection select_schedule_slope(const StepDistribution& dist, std::size_t n, std::size_t threshold,
                                     const SplittingOptions& options, const SeedRecord& seed,
                                     unsigned workers = 1);

TailEstimate splitting_tail(const StepDistribution& dist, std::size_t n, double theta, double r_hat,
                            const SplittingOptions& options, const SeedRecord& seed, unsigned workers = 1);

TailEstimate splitting_tail_at(const StepDistribution& dist, std::size_t n, std::size_t threshold,
                               const SplittingOptions& options, const SeedRecord& seed, unsigned workers = 1);

struct ExponentFit {
  double theta = 1.0;
  std::vector<std::size_t> n_grid;  // informative estimates used
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double predicted = 0.0;  // 1 - 1/theta
  double c_low_emp = 0.0;  // max of -log p / n^(1-1/theta)
  double c_up_emp = 0.0;   // min of the same
  std::size_t excluded = 0;

  std::string to_json() const;
};

/// An estimate is informative when 0 < ci_low, ci_high / ci_low < 10 and
/// p_hat < 1.
bool informative(const TailEstimate& e);

/// Least squares of log(-log p_hat) on log n over informative estimates.
/// InsufficientData with fewer than 4 distinct n.
ExponentFit fit_exponent(const std::vector<TailEstimate>& estimates, double theta);

/// c1^n with c1 the largest atom probability among steps with dx > 0.
double drift_strategy_floor(const StepDistribution& dist, std::size_t n);
double drift_strategy_log_floor(const StepDistribution& dist, std::size_t n);

}  // namespace rangelab
