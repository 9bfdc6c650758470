#include <algorithm>

#include "doctest.h"
#include "fruitlet/descriptors.hpp"
#include "fruitlet/error.hpp"
#include "support.hpp"

using namespace fruitlet;
using namespace fruitlet::testing;

namespace {

// Distance from `p` to the nearest point of `set`.
double nearest(const std::vector<Point3>& set, const Point3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : set) best = std::min(best, (q - p).norm());
  return best;
}

// Odd point count so the lower median commutes with negation.
PointCloud fruit(std::mt19937_64& rng) {
  return ellipsoid_surface(rng, Eigen::Vector3d(0.006, 0.004, 0.002), Eigen::Vector3d(0.01, -0.02, 0.3), 501);
}

}  // namespace

TEST_CASE("mode names and keypoint counts") {
  CHECK(parse_positional_mode("median_z") == PositionalMode::MedianZ);
  CHECK(parse_positional_mode("full_bbox") == PositionalMode::FullBbox);
  CHECK_THROWS_AS(parse_positional_mode("corners"), UsageError);
  CHECK(keypoint_count(PositionalMode::MedianZ) == 4);
  CHECK(keypoint_count(PositionalMode::FullBbox) == 8);
}

TEST_CASE("median-z keypoints of a box are its mid-height corners") {
  std::mt19937_64 rng(1);
  const Eigen::Vector3d half(0.015, 0.01, 0.005);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Matrix3d r = random_rotation_matrix(rng);
    const Eigen::Vector3d t(0.1 * trial, -0.05, 0.2);
    PointCloud c = box_volume(rng, -half, half, 4001);
    for (auto& p : c.points) p = r * p + t;
    const auto kps = positional_keypoints(c, PositionalMode::MedianZ);
    REQUIRE(kps.keypoints.size() == 4);
    const double tol = 0.05 * 2 * half.maxCoeff();
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0}) {
        const Point3 corner = r * Eigen::Vector3d(sx * half.x(), sy * half.y(), 0.0) + t;
        CHECK(nearest(kps.keypoints, corner) < tol);
      }
  }
}

TEST_CASE("keypoint order follows the principal frame") {
  std::mt19937_64 rng(2);
  const PointCloud c = fruit(rng);
  const PcaFrame frame = compute_pca(c);
  for (auto mode : {PositionalMode::MedianZ, PositionalMode::FullBbox}) {
    const auto kps = positional_keypoints(c, mode);
    std::vector<Point3> local;
    for (const auto& k : kps.keypoints) local.push_back(frame.to_local(k));
    for (std::size_t layer = 0; layer < local.size() / 4; ++layer) {
      const auto* q = &local[4 * layer];
      CHECK(q[0].x() < q[2].x());
      CHECK(q[0].y() < q[1].y());
      CHECK(q[1].x() == doctest::Approx(q[0].x()));
      CHECK(q[3].y() == doctest::Approx(q[1].y()));
      for (int i = 1; i < 4; ++i) CHECK(q[i].z() == doctest::Approx(q[0].z()));
    }
    if (mode == PositionalMode::FullBbox) CHECK(local[0].z() < local[4].z());
  }
}

TEST_CASE("median-z layer uses the lower median depth") {
  std::mt19937_64 rng(3);
  for (std::size_t n : {500u, 501u}) {
    const PointCloud c = ellipsoid_surface(rng, Eigen::Vector3d(0.006, 0.004, 0.002), Eigen::Vector3d::Zero(), n);
    const PcaFrame frame = compute_pca(c);
    std::vector<double> depth;
    for (const auto& p : c.points) depth.push_back(frame.to_local(p).z());
    std::sort(depth.begin(), depth.end());
    const double expected = depth[(depth.size() - 1) / 2];
    const auto kps = positional_keypoints(c, PositionalMode::MedianZ);
    for (const auto& k : kps.keypoints) CHECK(frame.to_local(k).z() == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("full-bbox keypoints are the eight box corners") {
  std::mt19937_64 rng(4);
  const PointCloud c = fruit(rng);
  const PcaFrame frame = compute_pca(c);
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e9), hi = -lo;
  for (const auto& p : c.points) {
    lo = lo.cwiseMin(frame.to_local(p));
    hi = hi.cwiseMax(frame.to_local(p));
  }
  const auto kps = positional_keypoints(c, PositionalMode::FullBbox);
  REQUIRE(kps.keypoints.size() == 8);
  for (int k = 0; k < 8; ++k) {
    const Point3 corner((k & 1) ? hi.x() : lo.x(), (k & 2) ? hi.y() : lo.y(), (k & 4) ? hi.z() : lo.z());
    CHECK(nearest(kps.keypoints, frame.to_world(corner)) < 1e-12);
  }
}

TEST_CASE("keypoints move rigidly with the cloud") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud c = fruit(rng);
    const Eigen::Matrix3d r = random_rotation_matrix(rng);
    const Eigen::Vector3d t(0.3, -0.1, 0.05 * trial);
    PointCloud moved = c;
    for (auto& p : moved.points) p = r * p + t;
    for (auto mode : {PositionalMode::MedianZ, PositionalMode::FullBbox}) {
      const auto a = positional_keypoints(c, mode), b = positional_keypoints(moved, mode);
      // Axis signs may flip, which permutes corners; compare as sets.
      for (const auto& k : a.keypoints) CHECK(nearest(b.keypoints, r * k + t) < 1e-9);
    }
  }
}

TEST_CASE("flattened keypoints are row-major and scaled") {
  PositionalKeypoints k;
  k.keypoints = {Point3(1, 2, 3), Point3(4, 5, 6)};
  const auto f = k.flattened(10.0);
  REQUIRE(f.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(f[i] == doctest::Approx(10.0 * (i + 1)));
}

TEST_CASE("positional MLP matches a scalar oracle") {
  std::mt19937_64 rng(6);
  ParamStore params;
  PositionalMlp mlp(PositionalMode::MedianZ, 16, params, rng, 100.0);
  for (auto name : {"pos_mlp/fc1/bias", "pos_mlp/fc2/bias"})
    for (auto& v : params.at(name).mutable_data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  const auto kps = positional_keypoints(fruit(rng), PositionalMode::MedianZ);
  const auto x = kps.flattened(100.0);
  const auto w1 = params.at("pos_mlp/fc1/weight").data(), b1 = params.at("pos_mlp/fc1/bias").data();
  const auto w2 = params.at("pos_mlp/fc2/weight").data(), b2 = params.at("pos_mlp/fc2/bias").data();
  std::vector<double> h(16);
  for (int j = 0; j < 16; ++j) {
    double acc = b1[j];
    for (int i = 0; i < 12; ++i) acc += x[i] * w1[i * 16 + j];
    h[j] = std::max(acc, 0.0);
  }
  const auto out = mlp.describe(kps).values;
  REQUIRE(out.size() == 16);
  for (int j = 0; j < 16; ++j) {
    double acc = b2[j];
    for (int i = 0; i < 16; ++i) acc += h[i] * w2[i * 16 + j];
    CHECK(out[j] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("positional MLP with zero weights returns the output bias") {
  std::mt19937_64 rng(7);
  ParamStore params;
  PositionalMlp mlp(PositionalMode::FullBbox, 8, params, rng);
  for (auto& v : params.at("pos_mlp/fc1/weight").mutable_data()) v = 0;
  for (auto& v : params.at("pos_mlp/fc2/weight").mutable_data()) v = 0;
  auto b2 = params.at("pos_mlp/fc2/bias").mutable_data();
  for (std::size_t j = 0; j < b2.size(); ++j) b2[j] = 0.25 * j;
  const auto out = mlp.describe(positional_keypoints(fruit(rng), PositionalMode::FullBbox)).values;
  for (std::size_t j = 0; j < out.size(); ++j) CHECK(out[j] == doctest::Approx(0.25 * j));
}

TEST_CASE("positional MLP rejects keypoints of the other mode") {
  std::mt19937_64 rng(8);
  ParamStore params;
  PositionalMlp mlp(PositionalMode::MedianZ, 8, params, rng);
  CHECK_THROWS_AS(mlp.forward(positional_keypoints(fruit(rng), PositionalMode::FullBbox)), ShapeError);
}

TEST_CASE("feature fusion adds a linear projection to the positional term") {
  std::mt19937_64 rng(9);
  ParamStore params;
  FeatureFusion fusion(6, 4, params, rng);
  for (auto& v : params.at("fusion/bias").mutable_data()) v = 0.1;
  std::uniform_real_distribution<double> u(-1, 1);
  auto make = [&](std::size_t cols) {
    std::vector<ad::Real> v(cols);
    for (auto& x : v) x = u(rng);
    return ad::Tensor::from({1, cols}, std::move(v));
  };
  const ad::Tensor a = make(6), b = make(6), pos = make(4);
  const auto out = fusion.forward(a, pos);
  const auto w = fusion.weight().data();
  for (int j = 0; j < 4; ++j) {
    double acc = 0.1 + pos.data()[j];
    for (int i = 0; i < 6; ++i) acc += a.data()[i] * w[i * 4 + j];
    CHECK(out.data()[j] == doctest::Approx(acc).epsilon(1e-12));
  }
  // The projection is affine: P(a + b) + bias = P(a) + P(b).
  const auto sum = fusion.project(ad::add(a, b)), pa = fusion.project(a), pb = fusion.project(b);
  for (int j = 0; j < 4; ++j) CHECK(sum.data()[j] + 0.1 == doctest::Approx(pa.data()[j] + pb.data()[j]));
  CHECK_THROWS_AS(fusion.forward(a, make(5)), ShapeError);
  CHECK_THROWS_AS(fusion.project(make(5)), ShapeError);
}
