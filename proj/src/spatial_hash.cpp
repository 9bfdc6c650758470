#include "fruitlet/spatial_hash.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fruitlet {

std::size_t SpatialHash::KeyHash::operator()(const Key& k) const noexcept {
  uint64_t h = static_cast<uint64_t>(k.x) * 73856093ULL;
  h ^= static_cast<uint64_t>(k.y) * 19349663ULL;
  h ^= static_cast<uint64_t>(k.z) * 83492791ULL;
  return static_cast<std::size_t>(h);
}

SpatialHash::SpatialHash(std::span<const Point3> points, double cell_size)
    : points_(points), cell_(cell_size) {
  if (!(cell_size > 0.0)) throw std::invalid_argument("SpatialHash: cell size must be positive");
  if (brute_force()) return;
  lo_ = {std::numeric_limits<int64_t>::max(), std::numeric_limits<int64_t>::max(),
         std::numeric_limits<int64_t>::max()};
  hi_ = {std::numeric_limits<int64_t>::min(), std::numeric_limits<int64_t>::min(),
         std::numeric_limits<int64_t>::min()};
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const Key k = key_of(points_[i]);
    cells_[k].push_back(i);
    lo_ = {std::min(lo_.x, k.x), std::min(lo_.y, k.y), std::min(lo_.z, k.z)};
    hi_ = {std::max(hi_.x, k.x), std::max(hi_.y, k.y), std::max(hi_.z, k.z)};
  }
}

SpatialHash::Key SpatialHash::key_of(const Point3& p) const {
  return {static_cast<int64_t>(std::floor(p.x() / cell_)),
          static_cast<int64_t>(std::floor(p.y() / cell_)),
          static_cast<int64_t>(std::floor(p.z() / cell_))};
}

std::vector<std::size_t> SpatialHash::within(const Point3& query, double radius) const {
  std::vector<std::size_t> out;
  const double r2 = radius * radius;
  if (brute_force()) {
    for (std::size_t i = 0; i < points_.size(); ++i)
      if ((points_[i] - query).squaredNorm() <= r2) out.push_back(i);
    return out;
  }
  const Key a = key_of(query - Point3::Constant(radius));
  const Key b = key_of(query + Point3::Constant(radius));
  for (int64_t z = a.z; z <= b.z; ++z)
    for (int64_t y = a.y; y <= b.y; ++y)
      for (int64_t x = a.x; x <= b.x; ++x) {
        auto it = cells_.find({x, y, z});
        if (it == cells_.end()) continue;
        for (std::size_t i : it->second)
          if ((points_[i] - query).squaredNorm() <= r2) out.push_back(i);
      }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t SpatialHash::count_within(const Point3& query, double radius) const {
  return within(query, radius).size();
}

SpatialHash::Nearest SpatialHash::nearest(const Point3& query) const {
  if (points_.empty()) throw std::invalid_argument("SpatialHash::nearest on empty set");
  double best2 = std::numeric_limits<double>::infinity();
  std::size_t best = 0;
  auto consider = [&](std::size_t i) {
    const double d2 = (points_[i] - query).squaredNorm();
    if (d2 < best2 || (d2 == best2 && i < best)) {
      best2 = d2;
      best = i;
    }
  };
  if (brute_force()) {
    for (std::size_t i = 0; i < points_.size(); ++i) consider(i);
    return {best, std::sqrt(best2)};
  }
  // Expanding shells of cells; a shell at Chebyshev ring r only holds points
  // at distance >= (r - 1) * cell from the query.
  const Key c = key_of(query);
  const int64_t max_ring =
      std::max({std::abs(c.x - lo_.x), std::abs(c.x - hi_.x), std::abs(c.y - lo_.y),
                std::abs(c.y - hi_.y), std::abs(c.z - lo_.z), std::abs(c.z - hi_.z)}) + 1;
  for (int64_t ring = 0; ring <= max_ring; ++ring) {
    const double shell_min = (ring - 1) * cell_;
    if (ring > 0 && shell_min > 0.0 && shell_min * shell_min > best2) break;
    // Cells outside the occupied bounds are empty, so ranges are clamped.
    for (int64_t z = std::max(c.z - ring, lo_.z); z <= std::min(c.z + ring, hi_.z); ++z)
      for (int64_t y = std::max(c.y - ring, lo_.y); y <= std::min(c.y + ring, hi_.y); ++y)
        for (int64_t x = std::max(c.x - ring, lo_.x); x <= std::min(c.x + ring, hi_.x); ++x) {
          if (std::max({std::abs(x - c.x), std::abs(y - c.y), std::abs(z - c.z)}) != ring) continue;
          auto it = cells_.find({x, y, z});
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second) consider(i);
        }
  }
  return {best, std::sqrt(best2)};
}

}  // namespace fruitlet
