#include "fruitlet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fruitlet/error.hpp"
#include "fruitlet/spatial_hash.hpp"

namespace fruitlet {

Point3 PointCloud::centroid() const {
  Point3 sum = Point3::Zero();
  for (const auto& p : points) sum += p;
  return points.empty() ? sum : Point3(sum / static_cast<double>(points.size()));
}

PointCloud transformed(const PointCloud& cloud, const Eigen::Matrix3d& rotation,
                       const Point3& translation) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(rotation * p + translation);
  return out;
}

OrganizedDepth::OrganizedDepth(int w, int h)
    : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0),
      mask(static_cast<std::size_t>(w) * h, 0) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("OrganizedDepth: width and height must be positive");
}

std::size_t OrganizedDepth::mask_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), uint8_t{1}));
}

std::size_t VoxelGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count(occupancy.begin(), occupancy.end(), uint8_t{1}));
}

double lower_median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("lower_median of empty sequence");
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

OrganizedDepth bilateral_filter(const OrganizedDepth& in, double sigma_space, double sigma_range) {
  if (!(sigma_space > 0.0) || !(sigma_range > 0.0))
    throw std::invalid_argument("bilateral_filter: sigmas must be positive");
  OrganizedDepth out = in;
  if (in.mask_count() == 0) return out;
  const int radius = static_cast<int>(std::ceil(2.0 * sigma_space));
  const double inv_s = 1.0 / (2.0 * sigma_space * sigma_space);
  const double inv_r = 1.0 / (2.0 * sigma_range * sigma_range);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      if (!in.masked(x, y)) continue;
      const double center = in.at(x, y);
      double wsum = 0.0, zsum = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= in.height) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= in.width || !in.masked(xx, yy)) continue;
          const double dz = in.at(xx, yy) - center;
          const double w = std::exp(-(dx * dx + dy * dy) * inv_s - dz * dz * inv_r);
          wsum += w;
          zsum += w * in.at(xx, yy);
        }
      }
      out.at(x, y) = zsum / wsum;
    }
  }
  return out;
}

OrganizedDepth depth_discontinuity_filter(const OrganizedDepth& in, double max_jump) {
  if (!(max_jump > 0.0)) throw std::invalid_argument("depth_discontinuity_filter: max_jump must be positive");
  OrganizedDepth out = in;
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      if (!in.masked(x, y)) continue;
      bool jump = false;
      for (int dy = -1; dy <= 1 && !jump; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= in.width || yy >= in.height || !in.masked(xx, yy)) continue;
          if (std::abs(in.at(xx, yy) - in.at(x, y)) > max_jump) {
            jump = true;
            break;
          }
        }
      }
      if (jump) out.mask[out.index(x, y)] = 0;
    }
  }
  return out;
}

PointCloud depth_to_cloud(const OrganizedDepth& depth, double fx, double fy, double cx, double cy) {
  PointCloud cloud;
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      if (!depth.masked(x, y)) continue;
      const double z = depth.at(x, y);
      cloud.points.emplace_back((x - cx) * z / fx, (y - cy) * z / fy, z);
    }
  return cloud;
}

PointCloud radial_outlier_removal(const PointCloud& cloud, double radius, int min_neighbors) {
  if (!(radius > 0.0)) throw std::invalid_argument("radial_outlier_removal: radius must be positive");
  if (min_neighbors < 1) throw std::invalid_argument("radial_outlier_removal: min_neighbors must be >= 1");
  PointCloud current = cloud;
  while (!current.empty()) {
    SpatialHash grid(current.points, radius);
    PointCloud kept;
    kept.points.reserve(current.size());
    for (const auto& p : current.points) {
      // count_within includes the point itself.
      if (grid.count_within(p, radius) >= static_cast<std::size_t>(min_neighbors) + 1)
        kept.points.push_back(p);
    }
    if (kept.size() == current.size()) break;
    current = std::move(kept);
  }
  return current;
}

PointCloud median_distance_filter(const PointCloud& cloud, double k_sigma) {
  if (!(k_sigma > 0.0)) throw std::invalid_argument("median_distance_filter: k_sigma must be positive");
  if (cloud.empty()) throw std::invalid_argument("median_distance_filter: empty cloud");
  PointCloud current = cloud;
  for (;;) {
    const Point3 c = current.centroid();
    std::vector<double> dist(current.size());
    for (std::size_t i = 0; i < current.size(); ++i) dist[i] = (current.points[i] - c).norm();
    const double med = lower_median(dist);
    std::vector<double> dev(dist.size());
    for (std::size_t i = 0; i < dist.size(); ++i) dev[i] = std::abs(dist[i] - med);
    const double limit = med + k_sigma * lower_median(dev);
    PointCloud kept;
    kept.points.reserve(current.size());
    for (std::size_t i = 0; i < current.size(); ++i)
      if (dist[i] <= limit) kept.points.push_back(current.points[i]);
    if (kept.size() == current.size()) return current;
    current = std::move(kept);
  }
}

std::vector<PointCloud> center_clouds(std::span<const PointCloud> clouds) {
  Point3 sum = Point3::Zero();
  std::size_t n = 0;
  for (const auto& c : clouds) {
    for (const auto& p : c.points) sum += p;
    n += c.size();
  }
  if (n == 0) throw DataError("center_clouds: all clouds are empty");
  const Point3 mean = sum / static_cast<double>(n);
  std::vector<PointCloud> out;
  out.reserve(clouds.size());
  for (const auto& c : clouds) out.push_back(transformed(c, Eigen::Matrix3d::Identity(), -mean));
  return out;
}

PcaFrame compute_pca(const PointCloud& cloud) {
  if (cloud.size() < 3)
    throw NumericError("compute_pca: " + std::to_string(cloud.size()) + " points, covariance rank < 2");
  PcaFrame frame;
  frame.mean = cloud.centroid();
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : cloud.points) {
    const Point3 d = p - frame.mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(cloud.size());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("compute_pca: eigendecomposition failed");
  const Eigen::Vector3d values = solver.eigenvalues();
  const Eigen::Matrix3d vectors = solver.eigenvectors();

  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] > values[b]; });

  const double top = std::max(values[order[0]], 0.0);
  int rank = 0;
  for (int i = 0; i < 3; ++i)
    if (top > 0.0 && values[i] > 1e-12 * top) ++rank;
  if (rank < 2)
    throw NumericError("compute_pca: degenerate covariance of rank " + std::to_string(rank) +
                       " (need >= 2)");

  for (int c = 0; c < 3; ++c) {
    Eigen::Vector3d axis = vectors.col(order[c]);
    int big = 0;
    for (int r = 1; r < 3; ++r)
      if (std::abs(axis[r]) > std::abs(axis[big])) big = r;
    if (axis[big] < 0.0) axis = -axis;
    frame.axes.col(c) = axis;
    frame.eigenvalues[c] = std::max(values[order[c]], 0.0);
  }
  return frame;
}

Eigen::Vector3d principal_extents(const PointCloud& cloud, const PcaFrame& frame) {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& p : cloud.points) {
    const Point3 q = frame.axes.transpose() * p;
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  return hi - lo;
}

NormalizedCloud normalize_cloud(const PointCloud& cloud) {
  const PcaFrame frame = compute_pca(cloud);
  const double extent = principal_extents(cloud, frame)[0];
  if (!(extent > 0.0) || !std::isfinite(extent)) throw NumericError("normalize_cloud: zero extent");
  NormalizedCloud out;
  out.scale = 1.0 / extent;
  out.cloud.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.cloud.points.push_back((p - frame.mean) * out.scale);
  return out;
}

VoxelGrid voxelize(const PointCloud& normalized, int resolution) {
  if (normalized.empty()) throw DataError("voxelize: empty cloud");
  if (resolution < 8) throw std::invalid_argument("voxelize: resolution must be >= 8");
  VoxelGrid grid;
  grid.resolution = resolution;
  grid.occupancy.assign(static_cast<std::size_t>(resolution) * resolution * resolution, 0);
  const double inv = resolution / 2.0;
  auto bin = [&](double v) {
    const auto i = static_cast<long>(std::floor((v + 1.0) * inv));
    return static_cast<int>(std::clamp<long>(i, 0, resolution - 1));
  };
  for (const auto& p : normalized.points) grid.occupancy[grid.index(bin(p.x()), bin(p.y()), bin(p.z()))] = 1;
  return grid;
}

}  // namespace fruitlet
