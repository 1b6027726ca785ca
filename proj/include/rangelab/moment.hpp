#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rangelab/rng.hpp"
#include "rangelab/walk.hpp"

namespace rangelab {

/// Leading term e1 * n / log n.
double leading_term_r(const CovarianceData& cov, std::size_t n);
/// Two-term expansion e1 * n / log n + e1 * n / log^2 n. DomainError for n < 2.
double expansion_r(const CovarianceData& cov, std::size_t n);

struct MeanRangeEntry {
  std::string dist_id;
  std::size_t n = 0;
  double r_hat = 0.0;
  double std_error = 0.0;
  std::uint64_t samples = 0;
  std::optional<double> expansion;  // absent for n < 2
  std::uint64_t master_seed = 0;
};

/// Paths per seed-derived batch. Fixed so results do not depend on the
/// worker count.
inline constexpr std::size_t kMeanBatch = 64;

/// Sample mean and standard error of R_n over N independent walks.
MeanRangeEntry mc_mean_range(const StepDistribution& dist, std::size_t n, std::uint64_t N,
                             const SeedRecord& seed, unsigned workers = 1);

/// Raw ranges of N independent walks, in task order.
std::vector<std::uint32_t> sample_ranges(const StepDistribution& dist, std::size_t n, std::uint64_t N,
                                         const SeedRecord& seed, unsigned workers = 1);

struct ExactPmf {
  std::size_t n = 0;
  std::map<std::size_t, Rational> pmf;

  Rational total() const;
  Rational mean() const;
  /// P(R_n >= k).
  Rational tail_at_least(std::size_t k) const;
  double probability(std::size_t k) const;
};

inline constexpr std::uint64_t kDefaultEnumerationBudget = 100'000'000;

/// Exact law of R_n by depth-first enumeration of all |atoms|^n step
/// sequences with an undo stack on a dense visit-count grid.
ExactPmf exact_pmf(const StepDistribution& dist, std::size_t n,
                   std::uint64_t budget = kDefaultEnumerationBudget);

struct IntersectionMeanReport {
  std::size_t m = 0;
  std::uint64_t N = 0;
  double mean_intersection = 0.0;
  double intersection_stderr = 0.0;
  double r_m_hat = 0.0;   // mean block range over both blocks
  double r_2m_hat = 0.0;  // mean range of the union window
  double identity_mean = 0.0;  // 2 r_m_hat - r_2m_hat
  double paired_diff_mean = 0.0;
  double z_score = 0.0;
  std::uint64_t identity_violations = 0;
  /// E[I] / (r_m * 2 log 2 / log m); NaN for m < 2.
  double asymptotic_ratio = 0.0;
};

/// Compares E[I] for neighbouring blocks of length m with 2 r_m - r_{2m},
/// both estimated from the same N walks of 2m positions.
IntersectionMeanReport intersection_mean_check(const StepDistribution& dist, std::size_t m,
                                               std::uint64_t N, const SeedRecord& seed,
                                               unsigned workers = 1);

/// Mean-range cache persisted as CSV (dist_id,n,N,r_hat,stderr,master_seed).
class MeanTable {
 public:
  /// Entry with the most samples for (dist_id, n), if any.
  const MeanRangeEntry* find(const std::string& dist_id, std::size_t n) const;

  /// Entry for exactly (dist, n, N, master_seed), computed when missing, so
  /// the value never depends on what else the cache holds. The stream is
  /// SeedRecord{master_seed, table_task_index(n)}.
  const MeanRangeEntry& ensure(const StepDistribution& dist, std::size_t n, std::uint64_t N,
                               std::uint64_t master_seed, unsigned workers = 1);

  void insert(MeanRangeEntry entry);
  const std::vector<MeanRangeEntry>& entries() const { return entries_; }

  std::string to_csv() const;
  static MeanTable from_csv(const std::string& text);
  void save(const std::string& path) const;
  static MeanTable load(const std::string& path);

  static std::uint64_t table_task_index(std::size_t n);

 private:
  std::vector<MeanRangeEntry> entries_;
};

}  // namespace rangelab
