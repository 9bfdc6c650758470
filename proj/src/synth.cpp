#include "fruitlet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "fruitlet/error.hpp"

namespace fruitlet {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kMaxRetries = 64;
constexpr std::size_t kMinObservedPoints = 40;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Eigen::Vector3d unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d v;
  do {
    v = {n(rng), n(rng), n(rng)};
  } while (v.norm() < 1e-9);
  return v.normalized();
}

Eigen::Vector3d in_ball(std::mt19937_64& rng, double radius) {
  return unit_vector(rng) * radius * std::cbrt(uniform(rng, 0.0, 1.0));
}

void add_jitter(PointCloud& cloud, std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& p : cloud.points) p += Eigen::Vector3d(n(rng), n(rng), n(rng));
}

// Fruitlet at a given day: superellipsoid with semi-axes r * (sqrt(e), 1, 1/sqrt(e)).
struct FruitState {
  Point3 center;                // world frame
  Eigen::Matrix3d orientation;  // world frame
  double radius = 0.0;
  double eccentricity = 1.0;
  double exponent = 1.0;        // 1 is an ellipsoid; smaller values are boxier
};

PointCloud observe(const FruitState& f, const SynthConfig& cfg, std::mt19937_64& rng) {
  const double se = std::sqrt(f.eccentricity);
  const Eigen::Vector3d semi(f.radius * se, f.radius, f.radius / se);
  const int target = uniform_int(rng, cfg.points_min, cfg.points_max);
  PointCloud cloud;
  // Camera at the origin; keep surface samples whose outward normal faces it.
  for (int attempt = 0; attempt < 40 * target && static_cast<int>(cloud.size()) < target; ++attempt) {
    const Eigen::Vector3d u = unit_vector(rng);
    Eigen::Vector3d local, grad;
    for (int k = 0; k < 3; ++k) {
      const double a = std::abs(u[k]);
      const double s = u[k] < 0.0 ? -1.0 : 1.0;
      local[k] = semi[k] * s * std::pow(a, f.exponent);
      const double q = std::abs(local[k]) / semi[k];
      grad[k] = s * std::pow(q, 2.0 / f.exponent - 1.0) / semi[k];
    }
    const Point3 p = f.center + f.orientation * local;
    const Eigen::Vector3d normal = f.orientation * grad;
    if (normal.dot(-p) > 0.0) cloud.points.push_back(p);
  }
  if (cloud.empty()) return cloud;

  const double crop = uniform(rng, cfg.crop_min, cfg.crop_max);
  const auto n_crop = static_cast<std::size_t>(std::floor(crop * static_cast<double>(cloud.size())));
  if (n_crop > 0) {
    const Eigen::Vector3d dir = unit_vector(rng);
    std::vector<std::pair<double, std::size_t>> proj;
    for (std::size_t k = 0; k < cloud.size(); ++k) proj.emplace_back((cloud.points[k] - f.center).dot(dir), k);
    std::sort(proj.begin(), proj.end());
    PointCloud kept;
    for (std::size_t k = 0; k + n_crop < proj.size(); ++k) kept.points.push_back(cloud.points[proj[k].second]);
    cloud = std::move(kept);
  }

  const double flatten = uniform(rng, cfg.depth_flatten_min, cfg.depth_flatten_max);
  const Eigen::Vector3d view = f.center.normalized();
  for (auto& p : cloud.points) {
    const Eigen::Vector3d d = p - f.center;
    p = f.center + d - (1.0 - flatten) * d.dot(view) * view;
  }
  add_jitter(cloud, rng, cfg.jitter);

  const auto n_out = static_cast<std::size_t>(std::llround(cfg.outlier_fraction * static_cast<double>(cloud.size())));
  for (std::size_t k = 0; k < n_out && k < cloud.size(); ++k) {
    const std::size_t victim = std::uniform_int_distribution<std::size_t>(0, cloud.size() - 1)(rng);
    cloud.points[victim] = f.center + unit_vector(rng) * f.radius * uniform(rng, 1.5, 3.0);
  }
  return cloud;
}

// Places n centers inside a ball with a minimum separation, relaxing the
// separation when rejection sampling stalls.
std::vector<Point3> place_centers(const std::vector<double>& radii, double ball, std::mt19937_64& rng) {
  double relax = 1.0;
  for (;;) {
    std::vector<Point3> out;
    for (std::size_t i = 0; i < radii.size(); ++i) {
      bool ok = false;
      for (int t = 0; t < 2000 && !ok; ++t) {
        const Point3 c = in_ball(rng, ball);
        ok = true;
        for (std::size_t j = 0; j < out.size() && ok; ++j) ok = (c - out[j]).norm() >= relax * (radii[i] + radii[j]);
        if (ok) out.push_back(c);
      }
      if (!ok) break;
    }
    if (out.size() == radii.size()) return out;
    relax *= 0.9;
  }
}

}  // namespace

void SynthConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw UsageError(std::string("synth config: ") + what);
  };
  require(fruitlets_min >= 1 && fruitlets_max >= fruitlets_min, "fruitlets range");
  require(diameter_min > 0.0 && diameter_max >= diameter_min, "diameter range");
  require(growth_min > 0.0 && growth_max >= growth_min, "growth range");
  require(eccentricity_min >= 1.0 && eccentricity_max >= eccentricity_min, "eccentricity range");
  require(drop_probability >= 0.0 && drop_probability <= 1.0, "drop_probability in [0, 1]");
  require(crop_min >= 0.0 && crop_max >= crop_min && crop_max < 1.0, "crop range within [0, 1)");
  const double total = std::accumulate(day_gap_weights.begin(), day_gap_weights.end(), 0.0);
  require(std::abs(total - 1.0) < 1e-9, "day-gap weights must sum to 1");
  require(std::all_of(day_gap_weights.begin(), day_gap_weights.end(), [](double w) { return w >= 0.0; }),
          "day-gap weights must be non-negative");
  require(std::all_of(day_gaps.begin(), day_gaps.end(), [](int g) { return g >= 1; }), "day gaps must be positive");
  require(cluster_radius > 0.0 && camera_distance > 0.0, "cluster geometry");
  require(points_min >= 8 && points_max >= points_min, "points range");
  require(depth_flatten_min > 0.0 && depth_flatten_max >= depth_flatten_min && depth_flatten_max <= 1.0,
          "depth flatten range within (0, 1]");
  require(jitter >= 0.0 && outlier_fraction >= 0.0 && outlier_fraction < 0.5, "noise settings");
  require(daily_displacement >= 0.0 && spread_per_growth >= 0.0 && max_pose_rotation_deg >= 0.0, "motion settings");
}

int sample_day_gap(const SynthConfig& config, std::mt19937_64& rng) {
  std::discrete_distribution<std::size_t> pick(config.day_gap_weights.begin(), config.day_gap_weights.end());
  return config.day_gaps[pick(rng)];
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng, double max_rad) {
  const Eigen::Vector3d axis = unit_vector(rng);
  const double angle = uniform(rng, 0.0, max_rad);
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

Eigen::Matrix3d uniform_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q;
  do {
    q = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng));
  } while (q.norm() < 1e-9);
  return q.normalized().toRotationMatrix();
}

LabeledClusterPair generate_cluster_pair(const SynthConfig& config, std::mt19937_64& rng,
                                         const std::string& cluster_id) {
  config.validate();
  for (int retry = 0; retry < kMaxRetries; ++retry) {
    const int count = uniform_int(rng, config.fruitlets_min, config.fruitlets_max);
    const int gap = sample_day_gap(config, rng);

    std::vector<double> radius(count), ecc(count), expo(count), growth(count);
    std::vector<Eigen::Matrix3d> orient(count);
    for (int i = 0; i < count; ++i) {
      radius[i] = 0.5 * uniform(rng, config.diameter_min, config.diameter_max);
      ecc[i] = uniform(rng, config.eccentricity_min, config.eccentricity_max);
      expo[i] = uniform(rng, 0.8, 1.0);
      growth[i] = std::pow(uniform(rng, config.growth_min, config.growth_max), gap);
      orient[i] = uniform_rotation(rng);
    }
    const std::vector<Point3> offsets = place_centers(radius, config.cluster_radius, rng);

    // Visibility: a fruitlet missing on one day is seen only on the other.
    const double q = 1.0 - std::pow(1.0 - config.drop_probability, gap);
    std::vector<int> seen(count, 3);  // bit 0: day t, bit 1: day t+1
    for (int i = 0; i < count; ++i)
      if (uniform(rng, 0.0, 1.0) < q) seen[i] = uniform(rng, 0.0, 1.0) < 0.5 ? 1 : 2;
    auto any_on = [&](int bit) { return std::any_of(seen.begin(), seen.end(), [&](int s) { return s & bit; }); };
    if (!any_on(1) || !any_on(2)) continue;

    const Point3 anchor(uniform(rng, -0.01, 0.01), uniform(rng, -0.01, 0.01), config.camera_distance);
    const Eigen::Matrix3d pose_t = uniform_rotation(rng);
    const Eigen::Matrix3d pose_t1 = random_rotation(rng, config.max_pose_rotation_deg * kDeg) * pose_t;

    std::vector<FruitState> at_t(count), at_t1(count);
    for (int i = 0; i < count; ++i) {
      Eigen::Vector3d drift = Eigen::Vector3d::Zero();
      for (int d = 0; d < gap; ++d) drift += in_ball(rng, config.daily_displacement * radius[i]);
      const Point3 offset_t1 = offsets[i] * (1.0 + config.spread_per_growth * (growth[i] - 1.0)) + drift;
      at_t[i] = {anchor + pose_t * offsets[i], pose_t * orient[i], radius[i], ecc[i], expo[i]};
      const double ecc_t1 = std::max(1.0, ecc[i] * uniform(rng, 0.97, 1.03));
      at_t1[i] = {anchor + pose_t1 * offset_t1, pose_t1 * orient[i], radius[i] * growth[i], ecc_t1, expo[i]};
    }

    LabeledClusterPair pair;
    pair.cluster_id = cluster_id;
    pair.day_gap = gap;
    pair.day_t = {cluster_id, 0, {}};
    pair.day_t1 = {cluster_id, gap, {}};
    std::vector<int> index_t(count, -1);
    bool ok = true;
    for (int i = 0; i < count && ok; ++i) {
      if (!(seen[i] & 1)) continue;
      PointCloud c = observe(at_t[i], config, rng);
      ok = c.size() >= kMinObservedPoints;
      index_t[i] = static_cast<int>(pair.day_t.fruitlets.size());
      pair.day_t.fruitlets.push_back({"f" + std::to_string(i), std::move(c)});
    }
    std::vector<int> order;
    for (int i = 0; i < count; ++i)
      if (seen[i] & 2) order.push_back(i);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Match> matches;
    for (int i : order) {
      if (!ok) break;
      PointCloud c = observe(at_t1[i], config, rng);
      ok = c.size() >= kMinObservedPoints;
      if (index_t[i] >= 0) matches.emplace_back(index_t[i], pair.day_t1.fruitlets.size());
      pair.day_t1.fruitlets.push_back({"f" + std::to_string(i), std::move(c)});
    }
    if (!ok) continue;
    pair.truth = CorrespondenceSet::from_matches(pair.day_t.fruitlets.size(), pair.day_t1.fruitlets.size(),
                                                 std::move(matches));
    if (const auto problem = pair.truth.validate(); !problem.empty())
      throw std::logic_error("synth: inconsistent ground truth: " + problem);
    return pair;
  }
  throw DataError("synth: could not generate a valid cluster pair after " + std::to_string(kMaxRetries) +
                  " attempts");
}

std::vector<LabeledClusterPair> generate_dataset(const SynthConfig& config, uint64_t seed, std::size_t first,
                                                 std::size_t count) {
  std::vector<LabeledClusterPair> out;
  out.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(i),
                      static_cast<uint32_t>(static_cast<uint64_t>(i) >> 32)};
    std::mt19937_64 rng(seq);
    char id[32];
    std::snprintf(id, sizeof id, "c%05zu", i);
    out.push_back(generate_cluster_pair(config, rng, id));
  }
  return out;
}

PointCloud augment_shape(const PointCloud& cloud, std::mt19937_64& rng, const ShapeAugmentConfig& config) {
  if (cloud.empty()) return cloud;
  const Point3 c = cloud.centroid();
  Eigen::Matrix3d m = config.rotate ? uniform_rotation(rng) : Eigen::Matrix3d::Identity();
  for (int k = 0; k < 3; ++k)
    if (config.flip_probability > 0.0 && uniform(rng, 0.0, 1.0) < config.flip_probability) m.col(k) *= -1.0;
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(c + m * (p - c));

  if (config.elastic_magnitude > 0.0 && config.elastic_grid >= 2) {
    Eigen::Vector3d lo = out.points.front(), hi = lo;
    for (const auto& p : out.points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const Eigen::Vector3d span = (hi - lo).cwiseMax(1e-12);
    const int g = config.elastic_grid;
    std::normal_distribution<double> n(0.0, config.elastic_magnitude * span.norm());
    std::vector<Eigen::Vector3d> ctrl(static_cast<std::size_t>(g * g * g));
    for (auto& v : ctrl) v = {n(rng), n(rng), n(rng)};
    auto at = [&](int x, int y, int z) { return ctrl[static_cast<std::size_t>((z * g + y) * g + x)]; };
    for (auto& p : out.points) {
      const Eigen::Vector3d t = ((p - lo).cwiseQuotient(span) * (g - 1)).cwiseMax(0.0).cwiseMin(g - 1.0);
      int i0[3];
      double w[3];
      for (int k = 0; k < 3; ++k) {
        i0[k] = std::min(static_cast<int>(t[k]), g - 2);
        w[k] = t[k] - i0[k];
      }
      Eigen::Vector3d d = Eigen::Vector3d::Zero();
      for (int corner = 0; corner < 8; ++corner) {
        const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
        const double weight = (dx ? w[0] : 1 - w[0]) * (dy ? w[1] : 1 - w[1]) * (dz ? w[2] : 1 - w[2]);
        d += weight * at(i0[0] + dx, i0[1] + dy, i0[2] + dz);
      }
      p += d;
    }
  }
  add_jitter(out, rng, config.jitter);
  return out;
}

namespace {

ClusterObservation augment_observation(const ClusterObservation& obs, std::mt19937_64& rng,
                                       const ClusterAugmentConfig& cfg) {
  PointCloud all;
  for (const auto& f : obs.fruitlets) all.points.insert(all.points.end(), f.cloud.points.begin(), f.cloud.points.end());
  if (all.empty()) return obs;
  const Point3 c = all.centroid();
  const double sc = uniform(rng, 1.0 - cfg.cluster_scale, 1.0 + cfg.cluster_scale);
  const Eigen::Matrix3d rc = random_rotation(rng, cfg.cluster_rotation_deg * kDeg);
  ClusterObservation out = obs;
  for (auto& f : out.fruitlets) {
    if (f.cloud.empty()) continue;
    const Point3 fc = f.cloud.centroid();
    const double sf = uniform(rng, 1.0 - cfg.fruit_scale, 1.0 + cfg.fruit_scale);
    const Eigen::Matrix3d rf = random_rotation(rng, cfg.fruit_rotation_deg * kDeg);
    const Eigen::Vector3d shift(uniform(rng, -cfg.shift, cfg.shift), uniform(rng, -cfg.shift, cfg.shift),
                                uniform(rng, -cfg.shift, cfg.shift));
    for (auto& p : f.cloud.points) p = c + sc * (rc * ((fc - c) + shift + sf * (rf * (p - fc))));
    add_jitter(f.cloud, rng, cfg.jitter);
    const double rate = uniform(rng, cfg.dropout_min, cfg.dropout_max);
    if (rate > 0.0) {
      std::bernoulli_distribution drop(rate);
      PointCloud kept;
      for (const auto& p : f.cloud.points)
        if (!drop(rng)) kept.points.push_back(p);
      if (kept.size() >= kMinObservedPoints / 2) f.cloud = std::move(kept);
    }
  }
  return out;
}

}  // namespace

LabeledClusterPair augment_cluster(const LabeledClusterPair& pair, std::mt19937_64& rng,
                                   const ClusterAugmentConfig& config) {
  LabeledClusterPair out = pair;
  out.day_t = augment_observation(pair.day_t, rng, config);
  out.day_t1 = augment_observation(pair.day_t1, rng, config);
  return out;
}

ClusterAugmentConfig no_cluster_augmentation() { return {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0}; }

ShapeAugmentConfig no_shape_augmentation() { return {false, 0.0, 0.0, 4, 0.0}; }

}  // namespace fruitlet
