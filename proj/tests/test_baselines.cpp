#include <numeric>

#include "doctest.h"
#include "fruitlet/baselines.hpp"
#include "fruitlet/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fruitlet;
using namespace fruitlet::testing;

namespace {

double brute_force_cost(const Eigen::MatrixXd& c) {
  const std::size_t m = c.rows(), n = c.cols(), k = std::min(m, n);
  double best = std::numeric_limits<double>::infinity();
  oracle::for_each_matching(m, n, [&](const std::vector<int>& a) {
    std::size_t used = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      if (a[i] >= 0) ++used, total += c(i, a[i]);
    if (used == k) best = std::min(best, total);
  });
  return k == 0 ? 0.0 : best;
}

// A few fruit-like blobs spread over a few centimeters.
std::vector<PointCloud> cluster(std::mt19937_64& rng, std::size_t count) {
  std::uniform_real_distribution<double> u(-0.025, 0.025);
  std::vector<PointCloud> out;
  for (std::size_t k = 0; k < count; ++k) {
    const Eigen::Vector3d c(u(rng), u(rng), 0.4 * u(rng));
    out.push_back(ellipsoid_surface(rng, Eigen::Vector3d(0.004, 0.0035, 0.003), c, 150));
  }
  return out;
}

PointCloud union_of(const std::vector<PointCloud>& clouds) {
  PointCloud u;
  for (const auto& c : clouds) u.points.insert(u.points.end(), c.points.begin(), c.points.end());
  return u;
}

double rotation_angle(const Eigen::Matrix3d& r) {
  return std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0));
}

}  // namespace

TEST_CASE("hungarian equals brute force on random small instances") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> size(0, 6);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 500; ++trial) {
    const int m = size(rng), n = size(rng);
    Eigen::MatrixXd c(m, n);
    // Every fourth instance uses integer costs, which produce many ties.
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) c(i, j) = trial % 4 == 0 ? std::floor(u(rng) / 3) : u(rng);
    const auto matches = hungarian(c);
    CHECK(matches.size() == static_cast<std::size_t>(std::min(m, n)));
    CHECK(CorrespondenceSet::from_matches(m, n, matches).validate().empty());
    CHECK(assignment_cost(c, matches) == doctest::Approx(brute_force_cost(c)).epsilon(1e-12));
  }
}

TEST_CASE("hungarian examples and tie rule") {
  Eigen::MatrixXd c(3, 3);
  c << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  CHECK(hungarian(c) == std::vector<Match>{{0, 1}, {1, 0}, {2, 2}});
  // All-equal costs: the lexicographically smallest map is the identity.
  CHECK(hungarian(Eigen::MatrixXd::Ones(3, 3)) == std::vector<Match>{{0, 0}, {1, 1}, {2, 2}});
  // Wide: row 0 takes the cheaper column.
  Eigen::MatrixXd w(1, 3);
  w << 5, 1, 1;
  CHECK(hungarian(w) == std::vector<Match>{{0, 1}});
  // Tall: a row without a column stays unassigned.
  Eigen::MatrixXd t(3, 1);
  t << 2, 1, 2;
  CHECK(hungarian(t) == std::vector<Match>{{1, 0}});
  CHECK(hungarian(Eigen::MatrixXd(0, 4)).empty());
}

TEST_CASE("kabsch recovers an exact rigid map") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const PointCloud src = random_cloud(rng, 20);
    const Eigen::Matrix3d r = random_rotation_matrix(rng);
    const Eigen::Vector3d t(0.01 * trial, -0.02, 0.003);
    std::vector<Point3> dst;
    for (const auto& p : src.points) dst.push_back(r * p + t);
    const RigidTransform x = kabsch(src.points, dst);
    CHECK((x.rotation - r).norm() < 1e-9);
    CHECK((x.translation - t).norm() < 1e-9);
    CHECK(x.rotation.determinant() == doctest::Approx(1.0));
  }
  // Collinear points leave the rotation undetermined.
  std::vector<Point3> line{Point3(0, 0, 0), Point3(1, 0, 0), Point3(2, 0, 0)};
  CHECK_THROWS_AS(kabsch(line, line), NumericError);
}

TEST_CASE("rigid transform compose and inverse") {
  std::mt19937_64 rng(3);
  RigidTransform a{random_rotation_matrix(rng), Eigen::Vector3d(1, 2, 3)};
  RigidTransform b{random_rotation_matrix(rng), Eigen::Vector3d(-1, 0, 4)};
  const Point3 p(0.3, -0.2, 0.5);
  CHECK((a.compose(b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
  CHECK((a.inverse().apply(a.apply(p)) - p).norm() < 1e-12);
}

TEST_CASE("icp recovers small rigid motions") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud source = union_of(cluster(rng, 6));
    const double angle = 10.0 * M_PI / 180.0 * std::abs(u(rng));
    const Eigen::Matrix3d r = rotation_about(Eigen::Vector3d(u(rng), u(rng), u(rng)), angle);
    Eigen::Vector3d t(u(rng), u(rng), u(rng));
    t *= 0.005 * std::abs(u(rng)) / t.norm();
    const PointCloud target = transformed(source, r, t);
    const IcpResult res = icp(source, target);
    CHECK(rotation_angle(res.transform.rotation.transpose() * r) < 1e-3);
    CHECK((res.transform.translation - t).norm() < 1e-4);
    for (std::size_t k = 1; k < res.rms_history.size(); ++k)
      CHECK(res.rms_history[k] <= res.rms_history[k - 1]);
  }
}

TEST_CASE("icp on identical clouds stays at the identity") {
  std::mt19937_64 rng(5);
  const PointCloud c = union_of(cluster(rng, 4));
  const IcpResult res = icp(c, c);
  CHECK((res.transform.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(res.transform.translation.norm() < 1e-12);
  CHECK(res.rms_history.front() == 0.0);
}

TEST_CASE("icp_assoc matches a shifted cluster and drops vanished fruitlets") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto day_t = cluster(rng, 5);
    std::vector<PointCloud> day_t1;
    const Eigen::Matrix3d r = rotation_about(Eigen::Vector3d(0, 0, 1), 0.05);
    const Eigen::Vector3d t(0.002, -0.001, 0.001);
    // Day t+1 loses fruitlet 2 and lists the rest in reverse.
    for (int k = 4; k >= 0; --k)
      if (k != 2) day_t1.push_back(transformed(day_t[k], r, t));
    const auto res = icp_assoc(day_t, day_t1);
    CHECK(res.matches.matches == std::vector<Match>{{0, 3}, {1, 2}, {3, 1}, {4, 0}});
    CHECK(res.matches.unmatched_t == std::vector<std::size_t>{2});
    CHECK_FALSE(res.icp_failed);
  }
}

TEST_CASE("icp_assoc distance gate and empty days") {
  std::mt19937_64 rng(7);
  const auto day_t = cluster(rng, 3);
  // Independent 10 mm shifts per fruitlet: no rigid map brings any centroid
  // within a micrometer of its counterpart.
  auto day_t1 = day_t;
  const std::vector<Eigen::Vector3d> shifts{{0.01, 0, 0}, {0, -0.01, 0}, {0, 0, 0.01}};
  for (int k = 0; k < 3; ++k) day_t1[k] = transformed(day_t[k], Eigen::Matrix3d::Identity(), shifts[k]);
  IcpAssocConfig cfg;
  cfg.dist_threshold = 1e-6;
  const auto res = icp_assoc(day_t, day_t1, cfg);
  CHECK(res.matches.matches.empty());
  CHECK(res.matches.unmatched_t.size() == 3);
  CHECK_THROWS_AS(icp_assoc(day_t, std::vector<PointCloud>{}), DataError);
}

TEST_CASE("neighbor histogram is normalized and translation invariant") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.03, 0.03);
  std::vector<Point3> c;
  for (int k = 0; k < 7; ++k) c.emplace_back(u(rng), u(rng), u(rng));
  std::vector<Point3> moved = c;
  for (auto& p : moved) p += Eigen::Vector3d(0.5, -0.2, 1.0);
  for (std::size_t s = 0; s < c.size(); ++s) {
    const auto h = neighbor_histogram(c, s);
    CHECK(h.size() == HistogramConfig{}.size());
    CHECK(std::accumulate(h.begin(), h.end(), 0.0) == doctest::Approx(1.0));
    CHECK(h == neighbor_histogram(moved, s));
  }
  // A lone centroid has no neighbors.
  const auto lone = neighbor_histogram(std::vector<Point3>{Point3::Zero()}, 0);
  CHECK(std::accumulate(lone.begin(), lone.end(), 0.0) == 0.0);
}

TEST_CASE("neighbor histogram bins a single offset") {
  HistogramConfig cfg;
  // Offset straight up at 25 mm: distance bin 3 of 8 over 60 mm, top elevation bin.
  std::vector<Point3> c{Point3::Zero(), Point3(0, 0, 0.025)};
  const auto h = neighbor_histogram(c, 0, cfg);
  const auto hot = std::find(h.begin(), h.end(), 1.0) - h.begin();
  REQUIRE(hot < static_cast<long>(h.size()));
  // Far offsets fall into the last distance bin.
  std::vector<Point3> far{Point3::Zero(), Point3(1.0, 0, 0)};
  const auto hf = neighbor_histogram(far, 0, cfg);
  const auto bin = std::find(hf.begin(), hf.end(), 1.0) - hf.begin();
  CHECK(bin / (cfg.azimuth_bins * cfg.elevation_bins) == cfg.distance_bins - 1);
}

TEST_CASE("desc_assoc on identical and permuted days") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const auto day_t = cluster(rng, 5);
    const std::vector<std::size_t> perm{2, 0, 4, 1, 3};
    std::vector<PointCloud> day_t1;
    for (auto k : perm) day_t1.push_back(day_t[k]);
    const auto res = desc_assoc(day_t, day_t1);
    std::vector<Match> expected;
    for (std::size_t j = 0; j < perm.size(); ++j) expected.emplace_back(perm[j], j);
    std::sort(expected.begin(), expected.end());
    CHECK(res.matches.matches == expected);
  }
}

TEST_CASE("desc_assoc with distance weight zero still uses the histogram") {
  std::mt19937_64 rng(10);
  const auto day_t = cluster(rng, 4);
  DescAssocConfig cfg;
  cfg.w_dist = 0.0;
  cfg.dist_threshold = 1.0;
  const auto res = desc_assoc(day_t, day_t, cfg);
  CHECK(res.matches.matches == std::vector<Match>{{0, 0}, {1, 1}, {2, 2}, {3, 3}});
}

TEST_CASE("desc_assoc with single fruitlets falls back to centroid distance") {
  std::mt19937_64 rng(12);
  const auto day_t = cluster(rng, 1);
  const auto day_t1 = std::vector<PointCloud>{transformed(day_t[0], Eigen::Matrix3d::Identity(), {0.001, 0, 0})};
  CHECK(desc_assoc(day_t, day_t1).matches.matches == std::vector<Match>{{0, 0}});
}

TEST_CASE("desc_assoc tuning picks the earliest best grid point") {
  std::mt19937_64 rng(11);
  std::vector<std::vector<PointCloud>> days;
  std::vector<CorrespondenceSet> truth;
  for (int k = 0; k < 3; ++k) {
    days.push_back(cluster(rng, 4));
    truth.push_back(CorrespondenceSet::from_matches(4, 4, {{0, 0}, {1, 1}, {2, 2}, {3, 3}}));
  }
  std::vector<ClusterPairView> views;
  for (int k = 0; k < 3; ++k) views.push_back({days[k], days[k], &truth[k]});
  const std::vector<double> wh{0.5, 1.0}, wd{2.0, 4.0};
  const auto best = tune_desc_assoc(views, wh, wd);
  CHECK(best.f1 == doctest::Approx(1.0));
  CHECK(best.w_hist == 0.5);
  CHECK(best.w_dist == 2.0);
}
