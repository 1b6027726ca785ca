#include "rangelab/range.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "rangelab/error.hpp"

namespace rangelab {

namespace {

std::size_t count_window(const WalkPath& path, std::size_t a, std::size_t b, SiteSet& arena) {
  arena.ensure_radius(walk_radius(b - a, 1));
  arena.clear(path.positions[a]);
  const Point* p = path.positions.data() + a;
  arena.insert_sequence(b - a, [&] { return *p++; });
  return arena.size();
}

}  // namespace

std::int64_t walk_radius(std::size_t steps, std::int64_t step_scale) {
  return static_cast<std::int64_t>(4.0 * std::sqrt(static_cast<double>(steps)) * static_cast<double>(step_scale)) + 8;
}

std::int64_t step_scale(const StepDistribution& dist) {
  std::int64_t s = 1;
  for (const auto& a : dist.atoms()) s = std::max<std::int64_t>({s, std::abs(a.step.x), std::abs(a.step.y)});
  return s;
}

SiteSet& thread_arena() {
  thread_local SiteSet arena;
  return arena;
}

RangeStat range_count(const WalkPath& path) { return range_count(path, thread_arena()); }

RangeStat range_count(const WalkPath& path, SiteSet& arena) {
  return {path.steps(), count_window(path, 0, path.positions.size(), arena)};
}

WindowRange window_range(const WalkPath& path, std::size_t a, std::size_t b) {
  return window_range(path, a, b, thread_arena());
}

WindowRange window_range(const WalkPath& path, std::size_t a, std::size_t b, SiteSet& arena) {
  if (a >= b) {
    throw Error(ErrorCode::EmptyWindow, "window [" + std::to_string(a) + ", " + std::to_string(b) + ")");
  }
  if (b > path.positions.size()) {
    throw Error(ErrorCode::OutOfBounds, "window end " + std::to_string(b) + " beyond path of " +
                                            std::to_string(path.positions.size()) + " positions");
  }
  return {a, b, count_window(path, a, b, arena)};
}

IntersectionStat block_intersection(const WalkPath& path, std::size_t k, std::size_t m) {
  if (k < 1 || m < 1 || (k + 1) * m > path.positions.size()) {
    throw Error(ErrorCode::OutOfBounds, "blocks k=" + std::to_string(k) + ", m=" + std::to_string(m) +
                                            " do not fit a path of " +
                                            std::to_string(path.positions.size()) + " positions");
  }
  thread_local SiteSet first, second;
  const std::size_t start = (k - 1) * m;
  first.ensure_radius(walk_radius(2 * m, 1));
  second.ensure_radius(walk_radius(2 * m, 1));
  first.clear(path.positions[start]);
  second.clear(path.positions[start]);
  for (std::size_t i = start; i < start + m; ++i) first.insert(path.positions[i]);
  std::size_t shared = 0;
  for (std::size_t i = start + m; i < start + 2 * m; ++i) {
    const Point p = path.positions[i];
    if (second.insert(p) && first.contains(p)) ++shared;
  }
  return {k, m, shared};
}

double centered_range(const RangeStat& stat, double r_n) { return static_cast<double>(stat.range) - r_n; }

std::size_t streaming_range(StepStream& stream, std::size_t n, SiteSet& arena) {
  arena.ensure_radius(walk_radius(n, step_scale(stream.distribution())));
  Point s{};
  arena.insert(s);
  // Steps are drawn in chunks so the byte stores in the arena cannot force
  // the stream state back to memory on every step.
  constexpr std::size_t kChunk = 512;
  std::array<Point, kChunk> buf;
  for (std::size_t done = 0; done < n;) {
    const std::size_t len = std::min(kChunk, n - done);
    for (std::size_t i = 0; i < len; ++i) buf[i] = s = s + stream.next_step();
    const Point* p = buf.data();
    arena.insert_sequence(len, [&] { return *p++; });
    done += len;
  }
  return arena.size();
}

std::vector<std::uint32_t> prefix_ranges(const WalkPath& path) {
  SiteSet& arena = thread_arena();
  arena.ensure_radius(walk_radius(path.positions.size(), 1));
  std::vector<std::uint32_t> out;
  out.reserve(path.positions.size());
  for (const Point& p : path.positions) {
    arena.insert(p);
    out.push_back(static_cast<std::uint32_t>(arena.size()));
  }
  return out;
}

}  // namespace rangelab
