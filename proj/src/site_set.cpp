#include "rangelab/site_set.hpp"

#include <algorithm>
#include <bit>

namespace rangelab {

namespace {

std::uint64_t tile_key(Point p) {
  const auto tx = static_cast<std::uint32_t>(p.x >> 3);
  const auto ty = static_cast<std::uint32_t>(p.y >> 3);
  return (static_cast<std::uint64_t>(tx) << 32) | ty;
}

unsigned bit_index(Point p) { return static_cast<unsigned>(((p.x & 7) << 3) | (p.y & 7)); }

}  // namespace

SiteSet::SiteSet(int radius_hint) : tiles_(64) {
  shift_ = 64 - 6;
  ensure_radius(radius_hint);
}

void SiteSet::ensure_radius(std::int64_t radius) {
  const auto want = static_cast<std::uint32_t>(
      std::clamp<std::int64_t>(static_cast<std::int64_t>(std::bit_ceil(static_cast<std::uint64_t>(
                                   std::max<std::int64_t>(radius, 1) * 2))),
                               64, kMaxSide));
  if (want > side_) {
    side_ = want;
    log_side_ = static_cast<unsigned>(std::countr_zero(side_));
    cells_.assign(static_cast<std::size_t>(side_) * side_, 0);
    epoch_ = 0;
  }
  clear();
}

void SiteSet::clear(Point centre) {
  size_ = 0;
  origin_x_ = centre.x - static_cast<std::int32_t>(side_ / 2);
  origin_y_ = centre.y - static_cast<std::int32_t>(side_ / 2);
  if (++epoch_ == 0) {
    std::fill(cells_.begin(), cells_.end(), 0);
    epoch_ = 1;
  }
  if (tile_count_ > 0) {
    tile_count_ = 0;
    if (++sparse_epoch_ == 0) {
      for (Tile& t : tiles_) t.epoch = 0;
      sparse_epoch_ = 1;
    }
  }
}

bool SiteSet::contains(Point p) const {
  const auto ux = static_cast<std::uint32_t>(p.x - origin_x_);
  const auto uy = static_cast<std::uint32_t>(p.y - origin_y_);
  if ((ux | uy) < side_) return cells_[dense_index(ux, uy)] == epoch_;
  return contains_sparse(p);
}

bool SiteSet::insert_sparse(Point p) {
  const std::uint64_t key = tile_key(p);
  const std::uint64_t bit = 1ULL << bit_index(p);
  const std::size_t mask = tiles_.size() - 1;
  std::size_t i = static_cast<std::size_t>((key * 0x9E3779B97F4A7C15ULL) >> shift_);
  while (true) {
    Tile& t = tiles_[i];
    if (t.epoch != sparse_epoch_) {
      if (2 * (tile_count_ + 1) > tiles_.size()) {
        grow_sparse();
        return insert_sparse(p);
      }
      t = Tile{key, bit, sparse_epoch_};
      ++tile_count_;
      ++size_;
      return true;
    }
    if (t.key == key) {
      if (t.mask & bit) return false;
      t.mask |= bit;
      ++size_;
      return true;
    }
    i = (i + 1) & mask;
  }
}

bool SiteSet::contains_sparse(Point p) const {
  const std::uint64_t key = tile_key(p);
  const std::size_t mask = tiles_.size() - 1;
  for (std::size_t i = static_cast<std::size_t>((key * 0x9E3779B97F4A7C15ULL) >> shift_);; i = (i + 1) & mask) {
    const Tile& t = tiles_[i];
    if (t.epoch != sparse_epoch_) return false;
    if (t.key == key) return (t.mask >> bit_index(p)) & 1ULL;
  }
}

void SiteSet::grow_sparse() {
  std::vector<Tile> old;
  old.swap(tiles_);
  tiles_.assign(old.size() * 2, Tile{});
  --shift_;
  const std::size_t mask = tiles_.size() - 1;
  for (const Tile& t : old) {
    if (t.epoch != sparse_epoch_) continue;
    std::size_t i = static_cast<std::size_t>((t.key * 0x9E3779B97F4A7C15ULL) >> shift_);
    while (tiles_[i].epoch == sparse_epoch_) i = (i + 1) & mask;
    tiles_[i] = t;
  }
}

}  // namespace rangelab
