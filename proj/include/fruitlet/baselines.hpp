#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fruitlet/correspondence.hpp"
#include "fruitlet/geometry.hpp"

namespace fruitlet {

// Minimum-cost one-to-one assignment of min(M, N) pairs. Among optimal
// assignments the result is the lexicographically smallest row-to-column map
// (rows in order, lower column first, "unassigned" last). Two totals within
// 1e-12 * max(1, sum |C|) count as equal. O(M * N) sub-solves; intended for
// cluster-sized inputs.
std::vector<Match> hungarian(const Eigen::MatrixXd& cost);

double assignment_cost(const Eigen::MatrixXd& cost, std::span<const Match> matches);

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Point3 apply(const Point3& p) const { return rotation * p + translation; }
  PointCloud apply(const PointCloud& cloud) const { return transformed(cloud, rotation, translation); }
  // (*this)(other(p))
  RigidTransform compose(const RigidTransform& other) const;
  RigidTransform inverse() const;
};

// Least-squares rigid map taking src[k] onto dst[k] (Kabsch, reflection-corrected).
// Throws NumericError when the cross-covariance has rank < 2.
RigidTransform kabsch(std::span<const Point3> src, std::span<const Point3> dst);

struct IcpConfig {
  int max_iter = 50;
  double tol = 1e-6;            // meters of RMS change
  double reject_factor = 3.0;   // pairs beyond this multiple of the median distance are dropped
};

struct IcpResult {
  RigidTransform transform;          // maps source onto target
  std::vector<double> rms_history;   // nearest-neighbor RMS, initial then after each accepted step
  int iterations = 0;
};

// Point-to-point ICP from the identity. A step that would raise the RMS is
// rejected and ends the loop, so rms_history is non-increasing.
IcpResult icp(const PointCloud& source, const PointCloud& target, const IcpConfig& config = {});

double nearest_neighbor_rms(const PointCloud& source, const PointCloud& target);

struct AssociationResult {
  CorrespondenceSet matches;
  RigidTransform alignment;  // day-t frame onto day-t+1 frame
  bool icp_failed = false;
};

struct IcpAssocConfig {
  IcpConfig icp;
  double dist_threshold = 0.006;
};

// ICP on the union clouds, Hungarian on transformed centroid distances,
// matches beyond dist_threshold discarded.
AssociationResult icp_assoc(std::span<const PointCloud> day_t, std::span<const PointCloud> day_t1,
                            const IcpAssocConfig& config = {});

struct HistogramConfig {
  int distance_bins = 8;
  double max_distance = 0.060;  // meters; farther offsets land in the last bin
  int azimuth_bins = 6;
  int elevation_bins = 4;

  std::size_t size() const { return static_cast<std::size_t>(distance_bins * azimuth_bins * elevation_bins); }
};

// Joint (distance, azimuth, elevation) histogram of the offsets from
// centroids[self] to every other centroid, normalized to unit mass.
std::vector<double> neighbor_histogram(std::span<const Point3> centroids, std::size_t self,
                                       const HistogramConfig& config = {});

struct DescAssocConfig {
  IcpConfig icp;
  HistogramConfig histogram;
  double local_radius = 0.040;  // ICP uses points within this distance of each day's union centroid
  double w_hist = 1.0;          // weight on L1 histogram distance
  double w_dist = 1.0;          // weight per millimeter of centroid distance
  double dist_threshold = 0.006;
};

AssociationResult desc_assoc(std::span<const PointCloud> day_t, std::span<const PointCloud> day_t1,
                             const DescAssocConfig& config = {});

struct ClusterPairView {
  std::span<const PointCloud> day_t, day_t1;
  const CorrespondenceSet* truth = nullptr;
};

struct DescAssocTuning {
  double w_hist = 1.0, w_dist = 1.0;
  double f1 = 0.0;  // macro F1 on the tuning set
};

// Grid search over (w_hist, w_dist); ties keep the earliest grid point.
DescAssocTuning tune_desc_assoc(std::span<const ClusterPairView> pairs, std::span<const double> w_hist_grid,
                                std::span<const double> w_dist_grid, DescAssocConfig base = {});

}  // namespace fruitlet
