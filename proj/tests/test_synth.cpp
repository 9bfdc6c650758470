#include <map>
#include <set>

#include "doctest.h"
#include "fruitlet/error.hpp"
#include "fruitlet/synth.hpp"

using namespace fruitlet;

namespace {

bool same_pair(const LabeledClusterPair& a, const LabeledClusterPair& b) {
  auto same_obs = [](const ClusterObservation& x, const ClusterObservation& y) {
    if (x.cluster_id != y.cluster_id || x.day != y.day || x.fruitlets.size() != y.fruitlets.size()) return false;
    for (std::size_t k = 0; k < x.fruitlets.size(); ++k)
      if (x.fruitlets[k].fruitlet_id != y.fruitlets[k].fruitlet_id ||
          x.fruitlets[k].cloud.points != y.fruitlets[k].cloud.points)
        return false;
    return true;
  };
  return a.cluster_id == b.cluster_id && a.day_gap == b.day_gap && a.truth == b.truth && same_obs(a.day_t, b.day_t) &&
         same_obs(a.day_t1, b.day_t1);
}

// Ground truth links exactly the observations that share a fruitlet id.
void check_labels(const LabeledClusterPair& p) {
  CHECK(p.truth.validate().empty());
  CHECK(p.truth.m == p.day_t.fruitlets.size());
  CHECK(p.truth.n == p.day_t1.fruitlets.size());
  std::set<Match> expected;
  for (std::size_t i = 0; i < p.day_t.fruitlets.size(); ++i)
    for (std::size_t j = 0; j < p.day_t1.fruitlets.size(); ++j)
      if (p.day_t.fruitlets[i].fruitlet_id == p.day_t1.fruitlets[j].fruitlet_id) expected.emplace(i, j);
  CHECK(std::set<Match>(p.truth.matches.begin(), p.truth.matches.end()) == expected);
}

double extent(const PointCloud& c) {
  const PcaFrame f = compute_pca(c);
  return principal_extents(c, f).maxCoeff();
}

}  // namespace

TEST_CASE("config validation") {
  SynthConfig c;
  CHECK_NOTHROW(c.validate());
  c.drop_probability = 1.5;
  CHECK_THROWS(c.validate());
  c = SynthConfig{};
  c.points_min = 2;
  CHECK_THROWS(c.validate());
}

TEST_CASE("dataset generation is deterministic and index-addressable") {
  const SynthConfig cfg;
  const auto a = generate_dataset(cfg, 42, 0, 12);
  const auto b = generate_dataset(cfg, 42, 0, 12);
  const auto tail = generate_dataset(cfg, 42, 7, 3);
  REQUIRE(a.size() == 12);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(same_pair(a[k], b[k]));
  for (std::size_t k = 0; k < tail.size(); ++k) CHECK(same_pair(tail[k], a[7 + k]));
  CHECK_FALSE(same_pair(generate_dataset(cfg, 43, 0, 1)[0], a[0]));
  CHECK(a[3].cluster_id == "c00003");
}

TEST_CASE("generated pairs are well formed") {
  const SynthConfig cfg;
  const auto pairs = generate_dataset(cfg, 1, 0, 150);
  double grow = 0.0;
  int grow_count = 0;
  for (const auto& p : pairs) {
    check_labels(p);
    CHECK(p.day_t.day == 0);
    CHECK(p.day_t1.day == p.day_gap);
    CHECK(p.day_t.fruitlets.size() <= static_cast<std::size_t>(cfg.fruitlets_max));
    CHECK_FALSE(p.day_t.fruitlets.empty());
    CHECK_FALSE(p.day_t1.fruitlets.empty());
    for (const auto* obs : {&p.day_t, &p.day_t1})
      for (const auto& f : obs->fruitlets) {
        CHECK(f.cloud.size() >= 4);
        for (const auto& q : f.cloud.points) CHECK(q.allFinite());
        const PcaFrame frame = compute_pca(f.cloud);
        CHECK((frame.axes.transpose() * frame.axes - Eigen::Matrix3d::Identity()).norm() < 1e-9);
      }
    for (const auto& [i, j] : p.truth.matches) {
      grow += extent(p.day_t1.fruitlets[j].cloud) / extent(p.day_t.fruitlets[i].cloud);
      ++grow_count;
    }
  }
  // Fruitlets grow between days on average.
  REQUIRE(grow_count > 100);
  CHECK(grow / grow_count > 1.05);
}

TEST_CASE("day-gap frequencies follow the configured weights") {
  const SynthConfig cfg;
  std::mt19937_64 rng(3);
  std::map<int, int> counts;
  const int draws = 200000;
  for (int k = 0; k < draws; ++k) ++counts[sample_day_gap(cfg, rng)];
  double total_weight = 0.0;
  for (double w : cfg.day_gap_weights) total_weight += w;
  for (std::size_t k = 0; k < cfg.day_gaps.size(); ++k) {
    const double freq = static_cast<double>(counts[cfg.day_gaps[k]]) / draws;
    CHECK(std::abs(freq - cfg.day_gap_weights[k] / total_weight) < 0.01);
  }
  CHECK(counts.size() == cfg.day_gaps.size());
}

TEST_CASE("day gaps of generated pairs match the histogram within one percent") {
  const auto pairs = generate_dataset(SynthConfig{}, 5, 0, 8000);
  const SynthConfig cfg;
  std::map<int, int> counts;
  for (const auto& p : pairs) ++counts[p.day_gap];
  for (std::size_t k = 0; k < cfg.day_gaps.size(); ++k)
    CHECK(std::abs(static_cast<double>(counts[cfg.day_gaps[k]]) / pairs.size() - cfg.day_gap_weights[k]) < 0.01);
}

TEST_CASE("drop probability one leaves no ground-truth matches") {
  SynthConfig cfg;
  cfg.drop_probability = 1.0;
  for (const auto& p : generate_dataset(cfg, 9, 0, 20)) {
    CHECK(p.truth.matches.empty());
    check_labels(p);
  }
}

TEST_CASE("drop probability zero keeps every fruitlet") {
  SynthConfig cfg;
  cfg.drop_probability = 0.0;
  for (const auto& p : generate_dataset(cfg, 10, 0, 20)) {
    CHECK(p.truth.matches.size() == p.day_t.fruitlets.size());
    CHECK(p.day_t.fruitlets.size() == p.day_t1.fruitlets.size());
  }
}

TEST_CASE("shape augmentation is rigid without elastic warp and jitter") {
  std::mt19937_64 rng(11);
  const auto pair = generate_dataset(SynthConfig{}, 2, 0, 1)[0];
  const PointCloud& c = pair.day_t.fruitlets[0].cloud;
  ShapeAugmentConfig cfg;
  cfg.elastic_magnitude = 0.0;
  cfg.jitter = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud a = augment_shape(c, rng, cfg);
    REQUIRE(a.size() == c.size());
    CHECK((a.centroid() - c.centroid()).norm() < 1e-12);
    for (std::size_t k = 1; k < c.size(); k += 17)
      CHECK((a.points[k] - a.points[0]).norm() == doctest::Approx((c.points[k] - c.points[0]).norm()));
  }
  const PointCloud same = augment_shape(c, rng, no_shape_augmentation());
  for (std::size_t k = 0; k < c.size(); ++k) CHECK((same.points[k] - c.points[k]).norm() < 1e-15);
}

TEST_CASE("elastic warp displacement scales with its magnitude") {
  const auto pair = generate_dataset(SynthConfig{}, 4, 0, 1)[0];
  const PointCloud& c = pair.day_t.fruitlets[0].cloud;
  auto mean_shift = [&](double magnitude) {
    ShapeAugmentConfig cfg = no_shape_augmentation();
    cfg.elastic_magnitude = magnitude;
    double total = 0.0;
    for (int seed = 0; seed < 50; ++seed) {
      std::mt19937_64 rng(seed);
      const PointCloud a = augment_shape(c, rng, cfg);
      for (std::size_t k = 0; k < c.size(); ++k) total += (a.points[k] - c.points[k]).norm();
    }
    return total / (50.0 * c.size());
  };
  const double small = mean_shift(0.02), large = mean_shift(0.08);
  CHECK(small > 0.0);
  CHECK(large / small == doctest::Approx(4.0).epsilon(0.01));
}

TEST_CASE("cluster augmentation keeps labels and drops the configured point fraction") {
  const auto pairs = generate_dataset(SynthConfig{}, 6, 0, 30);
  ClusterAugmentConfig cfg = no_cluster_augmentation();
  cfg.dropout_min = cfg.dropout_max = 0.2;
  std::mt19937_64 rng(12);
  std::size_t before = 0, after = 0;
  for (const auto& p : pairs) {
    const auto a = augment_cluster(p, rng, cfg);
    CHECK(a.truth == p.truth);
    CHECK(a.day_gap == p.day_gap);
    REQUIRE(a.day_t.fruitlets.size() == p.day_t.fruitlets.size());
    for (std::size_t k = 0; k < a.day_t.fruitlets.size(); ++k) {
      CHECK(a.day_t.fruitlets[k].fruitlet_id == p.day_t.fruitlets[k].fruitlet_id);
      before += p.day_t.fruitlets[k].cloud.size();
      after += a.day_t.fruitlets[k].cloud.size();
    }
  }
  CHECK(static_cast<double>(after) / before == doctest::Approx(0.8).epsilon(0.02));
}

TEST_CASE("cluster augmentation with everything off is the identity") {
  const auto p = generate_dataset(SynthConfig{}, 7, 0, 1)[0];
  std::mt19937_64 rng(13);
  const auto a = augment_cluster(p, rng, no_cluster_augmentation());
  for (std::size_t k = 0; k < p.day_t1.fruitlets.size(); ++k)
    for (std::size_t i = 0; i < p.day_t1.fruitlets[k].cloud.size(); ++i)
      CHECK((a.day_t1.fruitlets[k].cloud.points[i] - p.day_t1.fruitlets[k].cloud.points[i]).norm() < 1e-15);
}

TEST_CASE("random rotations are proper and bounded") {
  std::mt19937_64 rng(14);
  for (int k = 0; k < 200; ++k) {
    const Eigen::Matrix3d r = random_rotation(rng, 0.2);
    CHECK(r.determinant() == doctest::Approx(1.0));
    CHECK(std::acos(std::clamp((r.trace() - 1) / 2, -1.0, 1.0)) <= 0.2 + 1e-9);
    CHECK((uniform_rotation(rng) * uniform_rotation(rng).transpose()).determinant() == doctest::Approx(1.0));
  }
}
