#pragma once

#include <cstddef>
#include <cstdint>

#include "rangelab/site_set.hpp"
#include "rangelab/walk.hpp"

namespace rangelab {

// Conventions:
//   range_count   closed:    card{S_0, ..., S_n}    (n+1 positions)
//   window_range  half-open: card{S_a, ..., S_{b-1}} (b-a positions)
// so range_count(path) == window_range(path, 0, n+1).

struct RangeStat {
  std::size_t n = 0;
  std::size_t range = 0;
};

struct WindowRange {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t range = 0;
};

struct IntersectionStat {
  std::size_t k = 0;
  std::size_t m = 0;
  std::size_t size = 0;
};

/// Dense-window radius that holds a walk of `steps` steps with high
/// probability (four standard deviations of the largest coordinate step).
std::int64_t walk_radius(std::size_t steps, std::int64_t step_scale);
/// Largest absolute coordinate over the atoms.
std::int64_t step_scale(const StepDistribution& dist);

/// Per-thread scratch set used when the caller does not pass an arena.
SiteSet& thread_arena();

RangeStat range_count(const WalkPath& path);
RangeStat range_count(const WalkPath& path, SiteSet& arena);

WindowRange window_range(const WalkPath& path, std::size_t a, std::size_t b);
WindowRange window_range(const WalkPath& path, std::size_t a, std::size_t b, SiteSet& arena);

/// Size of {S_{(k-1)m}..S_{km-1}} ∩ {S_{km}..S_{(k+1)m-1}}, k >= 1, counted
/// directly on the two visited sets.
IntersectionStat block_intersection(const WalkPath& path, std::size_t k, std::size_t m);

double centered_range(const RangeStat& stat, double r_n);

/// R_n of a fresh walk without materialising it.
std::size_t streaming_range(StepStream& stream, std::size_t n, SiteSet& arena);

/// Range of every prefix: out[t] = card{S_0..S_t}. Nondecreasing.
std::vector<std::uint32_t> prefix_ranges(const WalkPath& path);

}  // namespace rangelab
