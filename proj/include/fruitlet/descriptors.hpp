#pragma once

#include <random>
#include <string_view>
#include <vector>

#include "fruitlet/autodiff.hpp"
#include "fruitlet/geometry.hpp"
#include "fruitlet/params.hpp"
#include "fruitlet/shape_codec.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN

enum class PositionalMode { MedianZ, FullBbox };

PositionalMode parse_positional_mode(std::string_view name);
std::string_view to_string(PositionalMode mode);
std::size_t keypoint_count(PositionalMode mode);

// Bounding-box corners in the principal frame, mapped back to the cloud's
// coordinates. Order: (x-,y-), (x-,y+), (x+,y-), (x+,y+) at the median third
// coordinate; full-bbox mode lists the same order at z- and then at z+.
struct PositionalKeypoints {
  PositionalMode mode = PositionalMode::MedianZ;
  std::vector<Point3> keypoints;

  // Row-major [x0 y0 z0 x1 ...] scaled by `scale`.
  std::vector<ad::Real> flattened(double scale = 1.0) const;
};

PositionalKeypoints positional_keypoints(const PointCloud& cloud, PositionalMode mode);

struct PositionalDescriptor {
  std::vector<ad::Real> values;
};

// Two-layer MLP over the flattened keypoints: linear, ReLU, linear.
class PositionalMlp {
 public:
  PositionalMlp(PositionalMode mode, std::size_t feature_dim, ParamStore& params, std::mt19937_64& rng,
                double input_scale = 100.0);

  PositionalMode mode() const { return mode_; }
  std::size_t input_width() const { return 3 * keypoint_count(mode_); }

  ad::Tensor forward(const PositionalKeypoints& kps) const;  // [1 x feature_dim]
  PositionalDescriptor describe(const PositionalKeypoints& kps) const;

 private:
  PositionalMode mode_;
  double input_scale_;
  ad::Tensor w1_, b1_, w2_, b2_;
};

// Initial matcher feature: Linear(shape descriptor) + positional descriptor.
class FeatureFusion {
 public:
  FeatureFusion(std::size_t descriptor_dim, std::size_t feature_dim, ParamStore& params, std::mt19937_64& rng);

  ad::Tensor forward(const ad::Tensor& shape_descriptor, const ad::Tensor& positional) const;
  ad::Tensor project(const ad::Tensor& shape_descriptor) const;

  const ad::Tensor& weight() const { return w_; }
  const ad::Tensor& bias() const { return b_; }

 private:
  ad::Tensor w_, b_;
};

FRUITLET_PRECISION_END
}  // namespace fruitlet
