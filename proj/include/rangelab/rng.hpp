#pragma once

#include <cstdint>
#include <random>

namespace rangelab {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Identifies one random stream. The stream is a pure function of both
/// fields, so any task can be replayed in isolation.
struct SeedRecord {
  std::uint64_t master_seed = 0;
  std::uint64_t task_index = 0;

  std::uint64_t stream_seed() const {
    return splitmix64(splitmix64(master_seed) ^ splitmix64(task_index + 0x632BE59BD9B4E019ULL));
  }

  /// Sub-stream for nested work. Children of distinct records never collide
  /// unless the 64-bit mix collides.
  SeedRecord child(std::uint64_t index) const { return {stream_seed(), index}; }

  Engine engine() const { return Engine(stream_seed()); }

  friend bool operator==(const SeedRecord&, const SeedRecord&) = default;
};

/// Uniform integer in [0, bound) from a 64-bit draw (multiply-shift, no
/// dependence on the standard library's distribution implementation).
inline std::uint64_t uniform_index(Engine& eng, std::uint64_t bound) {
  const unsigned __int128 prod = static_cast<unsigned __int128>(eng()) * bound;
  return static_cast<std::uint64_t>(prod >> 64);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

}  // namespace rangelab
