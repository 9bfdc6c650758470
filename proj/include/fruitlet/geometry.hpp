#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace fruitlet {

using Point3 = Eigen::Vector3d;

// Unordered 3D points in meters.
struct PointCloud {
  std::vector<Point3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  Point3 centroid() const;
};

PointCloud transformed(const PointCloud& cloud, const Eigen::Matrix3d& rotation,
                       const Point3& translation);

// Depth image restricted to one fruitlet's segmentation mask.
struct OrganizedDepth {
  int width = 0;
  int height = 0;
  std::vector<double> depth;   // row-major, meters; meaningful where mask is set
  std::vector<uint8_t> mask;   // row-major

  OrganizedDepth() = default;
  OrganizedDepth(int w, int h);

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  double& at(int x, int y) { return depth[index(x, y)]; }
  double at(int x, int y) const { return depth[index(x, y)]; }
  bool masked(int x, int y) const { return mask[index(x, y)] != 0; }
  std::size_t mask_count() const;
};

// Principal frame of a cloud. Columns of `axes` are ordered by descending
// eigenvalue, and each column's largest-magnitude entry is positive.
struct PcaFrame {
  Point3 mean = Point3::Zero();
  Eigen::Matrix3d axes = Eigen::Matrix3d::Identity();
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();

  Point3 to_local(const Point3& p) const { return axes.transpose() * (p - mean); }
  Point3 to_world(const Point3& q) const { return axes * q + mean; }
};

// Occupancy over [-1, 1]^3 in normalized space.
struct VoxelGrid {
  int resolution = 0;
  std::vector<uint8_t> occupancy;  // x fastest, then y, then z

  double voxel_size() const { return 2.0 / resolution; }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * resolution + y) * resolution + x;
  }
  bool occupied(int x, int y, int z) const { return occupancy[index(x, y, z)] != 0; }
  std::size_t occupied_count() const;
  bool operator==(const VoxelGrid&) const = default;
};

struct FilterParams {
  double sigma_space = 2.0;    // pixels
  double sigma_range = 0.003;  // meters
  double max_jump = 0.005;     // meters
  double outlier_radius = 0.003;
  int min_neighbors = 4;
  double median_k_sigma = 3.0;
};

OrganizedDepth bilateral_filter(const OrganizedDepth& depth, double sigma_space, double sigma_range);

OrganizedDepth depth_discontinuity_filter(const OrganizedDepth& depth, double max_jump);

// Back-projects masked pixels with a pinhole model.
PointCloud depth_to_cloud(const OrganizedDepth& depth, double fx, double fy, double cx, double cy);

// Repeats the neighbor-count test until no point is removed, so the result
// is a fixed point of the filter.
PointCloud radial_outlier_removal(const PointCloud& cloud, double radius, int min_neighbors);

// Drops points farther from the centroid than median + k * MAD, repeated to a
// fixed point. Medians of even counts take the lower middle element.
PointCloud median_distance_filter(const PointCloud& cloud, double k_sigma);

std::vector<PointCloud> center_clouds(std::span<const PointCloud> clouds);

PcaFrame compute_pca(const PointCloud& cloud);

struct NormalizedCloud {
  PointCloud cloud;
  double scale = 1.0;
};

// Centers the cloud and scales it so its extent along the first principal
// axis is exactly one.
NormalizedCloud normalize_cloud(const PointCloud& cloud);

VoxelGrid voxelize(const PointCloud& normalized, int resolution = 64);

// Extent (max - min projection) along each principal axis.
Eigen::Vector3d principal_extents(const PointCloud& cloud, const PcaFrame& frame);

// Lower-middle order statistic.
double lower_median(std::vector<double> values);

}  // namespace fruitlet
