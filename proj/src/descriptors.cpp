#include "fruitlet/descriptors.hpp"

#include <limits>
#include <string>

#include "fruitlet/error.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN

PositionalMode parse_positional_mode(std::string_view name) {
  if (name == "median_z") return PositionalMode::MedianZ;
  if (name == "full_bbox") return PositionalMode::FullBbox;
  throw UsageError("unknown positional_mode '" + std::string(name) + "' (expected median_z or full_bbox)");
}

std::string_view to_string(PositionalMode mode) {
  return mode == PositionalMode::MedianZ ? "median_z" : "full_bbox";
}

std::size_t keypoint_count(PositionalMode mode) { return mode == PositionalMode::MedianZ ? 4 : 8; }

std::vector<ad::Real> PositionalKeypoints::flattened(double scale) const {
  std::vector<ad::Real> out;
  out.reserve(keypoints.size() * 3);
  for (const auto& k : keypoints)
    for (int i = 0; i < 3; ++i) out.push_back(static_cast<ad::Real>(k[i] * scale));
  return out;
}

PositionalKeypoints positional_keypoints(const PointCloud& cloud, PositionalMode mode) {
  const PcaFrame frame = compute_pca(cloud);
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  std::vector<double> depth;
  depth.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const Point3 q = frame.to_local(p);
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
    depth.push_back(q.z());
  }
  PositionalKeypoints out;
  out.mode = mode;
  auto push_layer = [&](double z) {
    out.keypoints.push_back(frame.to_world({lo.x(), lo.y(), z}));
    out.keypoints.push_back(frame.to_world({lo.x(), hi.y(), z}));
    out.keypoints.push_back(frame.to_world({hi.x(), lo.y(), z}));
    out.keypoints.push_back(frame.to_world({hi.x(), hi.y(), z}));
  };
  if (mode == PositionalMode::MedianZ) {
    push_layer(lower_median(std::move(depth)));
  } else {
    push_layer(lo.z());
    push_layer(hi.z());
  }
  return out;
}

PositionalMlp::PositionalMlp(PositionalMode mode, std::size_t feature_dim, ParamStore& params, std::mt19937_64& rng,
                             double input_scale)
    : mode_(mode), input_scale_(input_scale) {
  const std::size_t in = input_width();
  w1_ = params.create_weight("pos_mlp/fc1/weight", in, feature_dim, rng);
  b1_ = params.create_constant("pos_mlp/fc1/bias", {1, feature_dim}, ad::Real(0.0));
  w2_ = params.create_weight("pos_mlp/fc2/weight", feature_dim, feature_dim, rng);
  b2_ = params.create_constant("pos_mlp/fc2/bias", {1, feature_dim}, ad::Real(0.0));
}

ad::Tensor PositionalMlp::forward(const PositionalKeypoints& kps) const {
  if (kps.mode != mode_ || kps.keypoints.size() != keypoint_count(mode_))
    throw ShapeError("PositionalMlp: " + std::to_string(kps.keypoints.size() * 3) + " keypoint inputs (" +
                     std::string(to_string(kps.mode)) + ") for an MLP trained on " + std::to_string(input_width()) +
                     " (" + std::string(to_string(mode_)) + ")");
  const ad::Tensor x = ad::Tensor::from({1, input_width()}, kps.flattened(input_scale_));
  return ad::linear(ad::relu(ad::linear(x, w1_, b1_)), w2_, b2_);
}

PositionalDescriptor PositionalMlp::describe(const PositionalKeypoints& kps) const {
  ad::NoGradGuard guard;
  const ad::Tensor p = forward(kps);
  return {{p.data().begin(), p.data().end()}};
}

FeatureFusion::FeatureFusion(std::size_t descriptor_dim, std::size_t feature_dim, ParamStore& params,
                             std::mt19937_64& rng) {
  w_ = params.create_weight("fusion/weight", descriptor_dim, feature_dim, rng);
  b_ = params.create_constant("fusion/bias", {1, feature_dim}, ad::Real(0.0));
}

ad::Tensor FeatureFusion::project(const ad::Tensor& shape_descriptor) const {
  if (shape_descriptor.rank() != 2 || shape_descriptor.cols() != w_.rows())
    throw ShapeError("FeatureFusion: shape descriptor " + ad::shape_str(shape_descriptor.shape()) +
                     " incompatible with weight " + ad::shape_str(w_.shape()));
  return ad::linear(shape_descriptor, w_, b_);
}

ad::Tensor FeatureFusion::forward(const ad::Tensor& shape_descriptor, const ad::Tensor& positional) const {
  const ad::Tensor projected = project(shape_descriptor);
  if (positional.shape() != projected.shape())
    throw ShapeError("FeatureFusion: positional descriptor " + ad::shape_str(positional.shape()) +
                     " does not match projected shape " + ad::shape_str(projected.shape()));
  return ad::add(projected, positional);
}

FRUITLET_PRECISION_END
}  // namespace fruitlet
