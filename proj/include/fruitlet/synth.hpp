#pragma once

#include <array>
#include <random>
#include <vector>

#include "fruitlet/cluster.hpp"
#include "fruitlet/geometry.hpp"

namespace fruitlet {

struct SynthConfig {
  int fruitlets_min = 5, fruitlets_max = 6;
  double diameter_min = 0.005, diameter_max = 0.007;  // meters, day t
  double growth_min = 1.10, growth_max = 1.19;        // diameter factor per day
  double eccentricity_min = 1.1, eccentricity_max = 1.4;
  double drop_probability = 0.05;                     // per fruitlet per day
  double crop_min = 0.0, crop_max = 0.4;              // fraction of points removed by a half-space
  std::array<int, 6> day_gaps{1, 2, 3, 4, 5, 7};
  std::array<double, 6> day_gap_weights{0.19, 0.38, 0.18, 0.11, 0.08, 0.06};

  double cluster_radius = 0.012;      // fruitlet centers lie within this ball at day t
  double camera_distance = 0.25;
  double max_pose_rotation_deg = 30.0;
  double daily_displacement = 1.0;    // random-walk step per day, in fruit radii
  double spread_per_growth = 0.5;     // center offsets scale by 1 + this * (growth - 1)
  int points_min = 150, points_max = 350;
  double depth_flatten_min = 0.75, depth_flatten_max = 1.0;
  double jitter = 0.0002;             // meters
  double outlier_fraction = 0.02;

  void validate() const;
};

// One labeled cross-day pair. Day-t+1 fruitlets are shuffled; ids are shared
// between the two observations of the same fruitlet.
LabeledClusterPair generate_cluster_pair(const SynthConfig& config, std::mt19937_64& rng,
                                         const std::string& cluster_id = "c00000");

// Pairs i in [first, first + count) use independent streams derived from (seed, i).
std::vector<LabeledClusterPair> generate_dataset(const SynthConfig& config, uint64_t seed, std::size_t first,
                                                 std::size_t count);

int sample_day_gap(const SynthConfig& config, std::mt19937_64& rng);

struct ShapeAugmentConfig {
  bool rotate = true;               // uniform random rotation
  double flip_probability = 0.5;    // per axis
  double elastic_magnitude = 0.05;  // control-point displacement, fraction of the bounding-box diagonal
  int elastic_grid = 4;             // control points per axis
  double jitter = 0.0003;           // meters
};

PointCloud augment_shape(const PointCloud& cloud, std::mt19937_64& rng, const ShapeAugmentConfig& config = {});

struct ClusterAugmentConfig {
  double cluster_scale = 0.10;       // uniform in [1 - s, 1 + s]
  double cluster_rotation_deg = 10.0;
  double fruit_scale = 0.10;
  double fruit_rotation_deg = 10.0;
  double shift = 0.001;              // per-fruitlet translation, meters, per axis
  double jitter = 0.0002;
  double dropout_min = 0.0, dropout_max = 0.3;
};

// Independent draws for each day; labels untouched.
LabeledClusterPair augment_cluster(const LabeledClusterPair& pair, std::mt19937_64& rng,
                                   const ClusterAugmentConfig& config = {});

ClusterAugmentConfig no_cluster_augmentation();
ShapeAugmentConfig no_shape_augmentation();

// Rotation about a uniformly random axis by an angle uniform in [0, max_rad].
Eigen::Matrix3d random_rotation(std::mt19937_64& rng, double max_rad);
// Uniform over SO(3).
Eigen::Matrix3d uniform_rotation(std::mt19937_64& rng);

}  // namespace fruitlet
