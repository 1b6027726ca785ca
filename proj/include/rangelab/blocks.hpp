#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rangelab/moment.hpp"
#include "rangelab/rate.hpp"
#include "rangelab/rng.hpp"
#include "rangelab/stats.hpp"
#include "rangelab/tail.hpp"
#include "rangelab/walk.hpp"

namespace rangelab {

// Block k >= 1 of length m covers positions [(k-1)m, km). On a path of n
// steps the last of the M = ceil(n/m) blocks is cut (or stretched by one) to
// end at S_n, so the blocks partition {S_0..S_n}.

enum class BlockRegime { upper, lower };

std::string to_string(BlockRegime r);
BlockRegime block_regime_from_string(const std::string& s);

struct BlockParams {
  BlockRegime regime = BlockRegime::upper;
  std::size_t n = 0;
  double theta = 1.0;
  double beta = 0.0;
  std::size_t m = 0;
  std::size_t M = 0;

  /// First position of block k (1-based) and one past its last position.
  std::size_t block_begin(std::size_t k) const { return (k - 1) * m; }
  std::size_t block_end(std::size_t k) const { return k == M ? n + 1 : k * m; }
};

/// upper: m = floor(e^(beta+1) n^(1/theta)); lower: m = floor(exp(log n / theta
/// - beta)); M = ceil(n/m) in both. InvalidArgument for theta < 1, n < 4 or
/// beta <= 0; DegenerateBlocks when m < 2.
BlockParams make_block_params(BlockRegime regime, std::size_t n, double theta, double beta);

/// Block k stays in the strip x in (-sqrt m, 3 sqrt m) relative to its first
/// position and its last position is in (2 sqrt m, 3 sqrt m). Strict
/// inequalities, decided in integers. OutOfBounds when block k does not fit.
bool eval_B(const WalkPath& path, std::size_t k, std::size_t m);

/// Range of block k >= r_m (1 - (beta/2) / log m). InvalidArgument for m < 3.
bool eval_E(const WalkPath& path, std::size_t k, std::size_t m, double r_m, double beta);

/// Intersection of blocks k and k+1 <= r_m (beta/6) / log m.
bool eval_I(const WalkPath& path, std::size_t k, std::size_t m, double r_m, double beta);

double e_threshold(double r_m, std::size_t m, double beta);
double i_threshold(double r_m, std::size_t m, double beta);

struct EventRecord {
  std::size_t k = 0;
  bool B = false;
  bool E = false;
  bool I_ok = false;                // blocks k, k+1; false for k = M
  std::optional<bool> eta;          // absent for k = M
  std::size_t block_range = 0;
  std::size_t intersection = 0;     // with block k+1; 0 for k = M
};

/// Events of every block of a path with exactly params.n steps. r_last is the
/// mean range used in E for the last block (its length may differ from m).
std::vector<EventRecord> block_events(const WalkPath& path, const BlockParams& params, double r_m, double r_last);

/// Exact sampler of a block conditioned on B. The first coordinate is drawn
/// from a backward table of h(t, x) = P(the rest of the block satisfies B |
/// x at relative time t); the full step is then drawn given its first
/// coordinate. `length` positions, the endpoint window applies at position
/// m - 1 when length >= m, the strip applies at every position.
class ConditionedBlockSampler {
 public:
  ConditionedBlockSampler(const StepDistribution& dist, std::size_t m, std::size_t length);

  /// P(B) for an unconditioned block of the same length.
  double probability() const { return probability_; }
  std::size_t length() const { return length_; }

  /// Appends length - 1 steps starting from `start` (which is pushed first
  /// when `include_start`).
  void sample(Engine& eng, Point start, std::vector<Point>& out, bool include_start) const;

 private:
  struct XMove {
    int dx = 0;
    double p = 0.0;
    std::vector<Point> steps;        // atoms with this dx
    std::vector<double> cumulative;  // conditional cdf over `steps`
  };

  std::size_t m_;
  std::size_t length_;
  int lo_ = 0;  // smallest admissible x
  int hi_ = 0;
  std::vector<XMove> moves_;
  std::vector<double> h_;  // row t at [t * width], each row scaled to max 1
  double probability_ = 0.0;
};

struct ProportionEstimate {
  double estimate = 0.0;
  double low = 0.0;
  double high = 1.0;
  std::uint64_t hits = 0;
  std::uint64_t trials = 0;
};

ProportionEstimate proportion(std::uint64_t hits, std::uint64_t trials);

struct EventProbReport {
  std::string dist_id;
  std::size_t m = 0;
  double beta = 0.0;
  std::uint64_t N = 0;
  double r_m = 0.0;
  double r_m_stderr = 0.0;
  ProportionEstimate p_B;
  double p_B_exact = 0.0;  // from the conditioned sampler's table
  ProportionEstimate p_E;
  ProportionEstimate p_I;
  ProportionEstimate p_eta_given_BB;
  std::uint64_t master_seed = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

/// Monte Carlo estimates over N independent two-block walks of 2m positions.
/// P(eta = 1 | B_1 and B_2) uses blocks drawn by the conditioned sampler, so
/// no conditioning sample is ever rejected. `r_m` must be the mean range of
/// m positions (table entry n = m - 1). InvalidArgument for m < 8 or N < 1000.
EventProbReport estimate_event_probs(const StepDistribution& dist, std::size_t m, double beta, std::uint64_t N,
                                     const SeedRecord& seed, const MeanRangeEntry& r_m, unsigned workers = 1);

struct StrategyOptions {
  std::uint64_t samples = 1000;  // paths in each of the two phases
  std::uint64_t mean_samples = 10000;
  double min_acceptance = 1e-3;
  std::uint64_t min_attempts = 1000;  // draws of one block before its rate is judged
};

struct StrategyReport {
  BlockParams params;
  double r_hat_n = 0.0;
  double target = 0.0;  // theta * r_hat_n
  double r_m = 0.0;
  double r_last = 0.0;
  double p_B_block = 0.0;  // exact P(B) of one full block
  std::uint64_t samples = 0;
  std::uint64_t block_draws = 0;  // sequential phase
  double acceptance = 0.0;        // accepted blocks / block draws
  // Counted over both phases; all must be zero.
  std::uint64_t b_failures = 0;
  std::uint64_t event_failures = 0;  // sequential phase only
  std::uint64_t decomposition_failures = 0;
  std::uint64_t disjointness_violations = 0;
  // Sequential phase: paths in B∩E∩I.
  ProportionEstimate implication;  // R_n >= target
  double min_range = 0.0;
  double mean_range = 0.0;
  // B phase: eta under the law given every B_k.
  ProportionEstimate eta_mean;
  double eta_lag2_corr = 0.0;  // corr(eta_k, eta_{k+2}) pooled over k
  double eta_lag2_z = 0.0;     // corr * sqrt(pairs)
  std::uint64_t eta_lag2_pairs = 0;

  std::string to_json() const;
};

/// Two phases of `samples` paths each. The B phase draws every block from
/// the conditioned sampler (blocks are independent given B, joining steps
/// are free) and measures eta and its lag-2 correlation. The sequential phase
/// builds paths in B∩E∩I block by block, redrawing block k until E_k and
/// I_{k-1,k} hold, and reports how often R_n >= theta * r_hat_n. Both phases
/// check the decomposition R_n = sum R^(k) - sum I^(k,k+1) and disjointness
/// of non-neighbour blocks. Mean ranges come from `table`.
/// RejectionBudgetExceeded when one block is redrawn min_attempts times at
/// an acceptance rate below min_acceptance.
StrategyReport strategy_implication_check(const StepDistribution& dist, std::size_t n, double theta, double beta,
                                          const StrategyOptions& options, const SeedRecord& seed, MeanTable& table,
                                          unsigned workers = 1);

/// log certificate M log p_B + M log(1/4). BoundNotApplicable unless
/// P(eta = 1 | BB) > 3/4.
double lower_bound_certificate(const BlockParams& params, const EventProbReport& report);

struct ChebyshevProbe {
  BlockParams params;
  double r_m = 0.0;
  double r_hat_n = 0.0;
  std::uint64_t blocks_sampled = 0;
  double lambda = 0.0;
  double log_mgf = 0.0;               // of (log^2 m / m)(R - r_m) at lambda
  double log_bound = 0.0;             // -lambda beta M + M log_mgf
  double lambda0 = 0.0;               // maximiser of beta lambda - Lambda(lambda)
  double log_bound_opt = 0.0;         // -M Lambda*(beta)
  /// Per-block scaled excess actually required: (theta r_n - M r_m)/M in
  /// the same units. The bound with it in place of beta holds for finite n
  /// by subadditivity.
  double required_excess = 0.0;
  double log_bound_required = 0.0;    // at lambda
  std::optional<double> log_bound_required_opt;
  std::optional<double> direct_log_p; // splitting comparison when supplied

  std::string to_json() const;
};

struct ChebyshevOptions {
  std::uint64_t blocks = 20000;
  std::uint64_t mean_samples = 20000;
  double lambda_max = 3.0;
  double lambda_step = 0.05;
};

/// Upper-regime exponential Chebyshev bound P(sum over blocks of scaled
/// centred ranges >= beta M) <= exp(-lambda beta M + M Lambda(lambda)) with
/// Lambda estimated from independent block ranges.
ChebyshevProbe upper_chebyshev_probe(const StepDistribution& dist, std::size_t n, double theta, double beta,
                                     double lambda, const SeedRecord& seed, MeanTable& table,
                                     const ChebyshevOptions& options = {}, unsigned workers = 1,
                                     const TailEstimate* direct = nullptr);

}  // namespace rangelab
