#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "fruitlet/geometry.hpp"

namespace fruitlet {

// Uniform hash grid over a fixed point set. Small sets (< 256 points) are
// scanned exhaustively instead.
class SpatialHash {
 public:
  static constexpr std::size_t kBruteForceBelow = 256;

  SpatialHash(std::span<const Point3> points, double cell_size);

  // Indices of points with distance <= radius, ascending.
  std::vector<std::size_t> within(const Point3& query, double radius) const;

  std::size_t count_within(const Point3& query, double radius) const;

  struct Nearest {
    std::size_t index = 0;
    double distance = 0.0;
  };
  // Ties resolve to the lowest index. Requires a non-empty point set.
  Nearest nearest(const Point3& query) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Key {
    int64_t x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };

  Key key_of(const Point3& p) const;
  bool brute_force() const { return points_.size() < kBruteForceBelow; }

  std::span<const Point3> points_;
  double cell_ = 1.0;
  Key lo_{}, hi_{};
  std::unordered_map<Key, std::vector<std::size_t>, KeyHash> cells_;
};

}  // namespace fruitlet
