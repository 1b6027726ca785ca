#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include "json.hpp"

#include "rangelab/rng.hpp"

namespace rangelab {

using Rational = boost::multiprecision::cpp_rational;

struct Point {
  std::int32_t x = 0;
  std::int32_t y = 0;

  friend constexpr Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr auto operator<=>(const Point&, const Point&) = default;
};

/// Atom probability: exact when given as a rational, float otherwise.
struct Probability {
  std::optional<Rational> exact;
  double value = 0.0;

  static Probability ratio(std::int64_t num, std::int64_t den);
  static Probability real(double p);
  /// Accepts "p_num/p_den", an integer string, or a decimal (taken as float).
  static Probability parse(std::string_view text);
};

struct AtomSpec {
  int dx = 0;
  int dy = 0;
  Probability p;
};

struct Atom {
  Point step;
  Rational prob;  // exact weight; for float input, the exact value of the double renormalised
  double p = 0.0;
};

/// Validated finite symmetric step law on Z^2 with a walker-alias sampler.
class StepDistribution {
 public:
  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  const std::string& id() const { return id_; }
  /// True when every probability was supplied as an exact rational.
  bool exact() const { return exact_; }

  /// Number of random bits per step when all atoms are equally likely and
  /// their count is a power of two; 0 otherwise (alias sampling).
  int uniform_bits() const { return uniform_bits_; }

  std::uint64_t alias_threshold(std::size_t i) const { return alias_threshold_[i]; }
  std::uint32_t alias_index(std::size_t i) const { return alias_index_[i]; }

  /// Stable digest of the atom list; used as a cache key.
  std::uint64_t digest() const { return digest_; }

 private:
  friend StepDistribution build_distribution(const std::vector<AtomSpec>&, std::string);

  std::vector<Atom> atoms_;
  std::string id_;
  bool exact_ = true;
  int uniform_bits_ = 0;
  std::uint64_t digest_ = 0;
  std::vector<std::uint64_t> alias_threshold_;
  std::vector<std::uint32_t> alias_index_;
};

/// Validates and builds a step law. Checks run in order: positive weights,
/// total mass, zero mean, symmetry, two-dimensional support. Duplicate atoms
/// are merged. `id` defaults to a digest of the atoms.
StepDistribution build_distribution(const std::vector<AtomSpec>& atoms, std::string id = {});

StepDistribution simple_random_walk();
/// Steps (+-1, +-1), each with probability 1/4.
StepDistribution diagonal_walk();

/// {"atoms": [[dx, dy, "num/den" | number], ...], "id": optional}
StepDistribution distribution_from_json(const nlohmann::json& doc);
StepDistribution load_distribution(const std::string& path);

struct CovarianceData {
  std::array<std::array<double, 2>, 2> gamma{};
  double det = 0.0;
  double e1 = 0.0;  // 2*pi*sqrt(det)
};

CovarianceData covariance(const StepDistribution& dist);

/// Draws atom indices from one engine. Holds a bit buffer so that uniform
/// laws with 2^k atoms consume k bits per step.
class StepStream {
 public:
  StepStream(const StepDistribution& dist, const SeedRecord& seed)
      : dist_(&dist), eng_(seed.engine()), bits_(dist.uniform_bits()) {}

  std::uint32_t next_index() {
    if (bits_ > 0) {
      if (avail_ < bits_) {
        buf_ = eng_();
        avail_ = 64;
      }
      const auto idx = static_cast<std::uint32_t>(buf_ & ((1u << bits_) - 1u));
      buf_ >>= bits_;
      avail_ -= bits_;
      return idx;
    }
    const std::uint64_t u = eng_();
    const auto slot = static_cast<std::uint32_t>(((u >> 32) * dist_->size()) >> 32);
    return (u & 0xFFFFFFFFu) < dist_->alias_threshold(slot)
               ? slot
               : dist_->alias_index(slot);
  }

  Point next_step() { return dist_->atoms()[next_index()].step; }

  Engine& engine() { return eng_; }
  const StepDistribution& distribution() const { return *dist_; }

 private:
  const StepDistribution* dist_;
  Engine eng_;
  int bits_;
  std::uint64_t buf_ = 0;
  int avail_ = 0;
};

struct WalkPath {
  std::vector<Point> positions;  // S_0 = (0,0), ..., S_n
  SeedRecord seed;
  std::string dist_id;

  std::size_t steps() const { return positions.empty() ? 0 : positions.size() - 1; }
};

inline constexpr std::size_t kDefaultPathBudget = 100'000'000;

/// Materialises S_0..S_n. Throws BudgetExceeded above `max_steps`; use the
/// streaming range functions for longer walks.
WalkPath sample_path(const StepDistribution& dist, std::size_t n, const SeedRecord& seed,
                     std::size_t max_steps = kDefaultPathBudget);

/// Builds a path from explicit increments (fixtures and tests).
WalkPath path_from_steps(std::span<const Point> steps, std::string dist_id = "fixture");

/// True iff positions[0] is the origin and every increment is an atom of `dist`.
bool is_valid_path(const WalkPath& path, const StepDistribution& dist);

}  // namespace rangelab
