#pragma once

#include <cstdint>
#include <vector>

#include "rangelab/walk.hpp"

namespace rangelab {

/// Membership set of lattice sites, used as a reusable per-worker arena.
///
/// Sites within a square window around the current centre live in a dense
/// byte grid laid out in 8x8 tiles (one tile per cache line). A byte holds
/// the epoch in which the site was last inserted, so clear() only bumps the
/// epoch. Sites outside the window go to a hash table keyed by packed 2x32-bit
/// tile coordinates with a 64-bit occupancy mask per tile.
class SiteSet {
 public:
  explicit SiteSet(int radius_hint = 256);

  /// Empties the set and recentres the dense window on `centre`.
  void clear(Point centre = {});

  /// Grows the dense window to cover at least `radius` around the centre
  /// (capped at kMaxSide / 2). Clears the set.
  void ensure_radius(std::int64_t radius);

  /// Returns true when `p` was not present before.
  bool insert(Point p) {
    const auto ux = static_cast<std::uint32_t>(p.x - origin_x_);
    const auto uy = static_cast<std::uint32_t>(p.y - origin_y_);
    if ((ux | uy) < side_) {
      std::uint8_t& cell = cells_[dense_index(ux, uy)];
      const bool fresh = cell != epoch_;
      cell = epoch_;
      size_ += fresh;
      return fresh;
    }
    return insert_sparse(p);
  }

  /// Inserts `count` points produced by `next()`. Same effect as calling
  /// insert() on each, with the window state kept in registers.
  template <class Next>
  void insert_sequence(std::size_t count, Next&& next) {
    std::uint8_t* const cells = cells_.data();
    const std::uint32_t side = side_;
    const unsigned row_shift = log_side_ - 3;
    const std::int32_t ox = origin_x_, oy = origin_y_;
    const std::uint8_t ep = epoch_;
    std::size_t added = 0;
    for (std::size_t i = 0; i < count; ++i) {
      const Point p = next();
      const auto ux = static_cast<std::uint32_t>(p.x - ox);
      const auto uy = static_cast<std::uint32_t>(p.y - oy);
      if ((ux | uy) < side) [[likely]] {
        std::uint8_t& cell =
            cells[(((static_cast<std::size_t>(ux >> 3) << row_shift) | (uy >> 3)) << 6) | ((ux & 7u) << 3) | (uy & 7u)];
        added += cell != ep;
        cell = ep;
      } else {
        size_ += added;
        added = 0;
        insert_sparse(p);
      }
    }
    size_ += added;
  }

  /// Like insert_sequence, but calls stop(i, size()) after the i-th point
  /// (0-based) and returns early with the number of points consumed when it
  /// returns true.
  template <class Next, class Stop>
  std::size_t insert_sequence_until(std::size_t count, Next&& next, Stop&& stop) {
    std::uint8_t* const cells = cells_.data();
    const std::uint32_t side = side_;
    const unsigned row_shift = log_side_ - 3;
    const std::int32_t ox = origin_x_, oy = origin_y_;
    const std::uint8_t ep = epoch_;
    std::size_t size = size_;
    for (std::size_t i = 0; i < count; ++i) {
      const Point p = next();
      const auto ux = static_cast<std::uint32_t>(p.x - ox);
      const auto uy = static_cast<std::uint32_t>(p.y - oy);
      if ((ux | uy) < side) [[likely]] {
        std::uint8_t& cell =
            cells[(((static_cast<std::size_t>(ux >> 3) << row_shift) | (uy >> 3)) << 6) | ((ux & 7u) << 3) | (uy & 7u)];
        size += cell != ep;
        cell = ep;
      } else {
        size_ = size;
        insert_sparse(p);
        size = size_;
      }
      if (stop(i, size)) {
        size_ = size;
        return i + 1;
      }
    }
    size_ = size;
    return count;
  }

  bool contains(Point p) const;

  std::size_t size() const { return size_; }
  std::uint32_t dense_side() const { return side_; }

  static constexpr std::uint32_t kMaxSide = 1u << 13;

 private:
  std::size_t dense_index(std::uint32_t ux, std::uint32_t uy) const {
    return (((static_cast<std::size_t>(ux >> 3) << (log_side_ - 3)) | (uy >> 3)) << 6) | ((ux & 7u) << 3) |
           (uy & 7u);
  }

  bool insert_sparse(Point p);
  bool contains_sparse(Point p) const;
  void grow_sparse();

  struct Tile {
    std::uint64_t key = 0;
    std::uint64_t mask = 0;
    std::uint32_t epoch = 0;
  };

  // dense window
  std::vector<std::uint8_t> cells_;
  std::uint32_t side_ = 0;
  unsigned log_side_ = 0;
  std::int32_t origin_x_ = 0;  // lower-left corner
  std::int32_t origin_y_ = 0;
  std::uint8_t epoch_ = 1;

  // sparse overflow
  std::vector<Tile> tiles_;
  unsigned shift_ = 64;
  std::size_t tile_count_ = 0;
  std::uint32_t sparse_epoch_ = 1;

  std::size_t size_ = 0;
};

}  // namespace rangelab
