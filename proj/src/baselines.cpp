#include "fruitlet/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fruitlet/error.hpp"
#include "fruitlet/metrics.hpp"
#include "fruitlet/spatial_hash.hpp"

namespace fruitlet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Potentials-based O(n^2 m) solver for n <= m. Returns column of each row.
std::vector<int> solve_rows_le_cols(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(a.cols());
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j]) col[p[j] - 1] = j - 1;
  return col;
}

// Optimal total cost of a rectangular problem (min(M, N) pairs).
double optimal_cost(const Eigen::MatrixXd& c) {
  if (c.rows() == 0 || c.cols() == 0) return 0.0;
  const bool flip = c.rows() > c.cols();
  const Eigen::MatrixXd a = flip ? Eigen::MatrixXd(c.transpose()) : c;
  const std::vector<int> col = solve_rows_le_cols(a);
  double total = 0.0;
  for (int i = 0; i < static_cast<int>(col.size()); ++i) total += a(i, col[i]);
  return total;
}

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& c, const std::vector<int>& rows, const std::vector<int>& cols) {
  Eigen::MatrixXd s(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < cols.size(); ++k) s(r, k) = c(rows[r], cols[k]);
  return s;
}

}  // namespace

std::vector<Match> hungarian(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite()) throw DataError("hungarian: cost matrix has non-finite entries");
  const int m = static_cast<int>(cost.rows()), n = static_cast<int>(cost.cols());
  const double target = optimal_cost(cost);
  const double tol = 1e-12 * std::max(1.0, cost.cwiseAbs().sum());

  std::vector<int> free_cols(n);
  for (int j = 0; j < n; ++j) free_cols[j] = j;
  std::vector<Match> out;
  double fixed = 0.0;
  int spare_rows = std::max(m - n, 0);  // rows that may stay unassigned
  for (int i = 0; i < m && !free_cols.empty(); ++i) {
    std::vector<int> rest_rows;
    for (int r = i + 1; r < m; ++r) rest_rows.push_back(r);
    bool placed = false;
    for (std::size_t k = 0; k < free_cols.size() && !placed; ++k) {
      std::vector<int> rest_cols = free_cols;
      rest_cols.erase(rest_cols.begin() + static_cast<std::ptrdiff_t>(k));
      const double total = fixed + cost(i, free_cols[k]) + optimal_cost(submatrix(cost, rest_rows, rest_cols));
      if (total <= target + tol) {
        fixed += cost(i, free_cols[k]);
        out.emplace_back(i, free_cols[k]);
        free_cols = std::move(rest_cols);
        placed = true;
      }
    }
    if (!placed) {
      if (spare_rows == 0) throw NumericError("hungarian: lexicographic refinement lost optimality");
      --spare_rows;
    }
  }
  return out;
}

double assignment_cost(const Eigen::MatrixXd& cost, std::span<const Match> matches) {
  double total = 0.0;
  for (const auto& [i, j] : matches) total += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return total;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

RigidTransform RigidTransform::inverse() const {
  return {rotation.transpose(), -(rotation.transpose() * translation)};
}

RigidTransform kabsch(std::span<const Point3> src, std::span<const Point3> dst) {
  if (src.size() != dst.size() || src.size() < 3)
    throw NumericError("kabsch: need at least 3 paired points, got " + std::to_string(src.size()));
  Point3 ms = Point3::Zero(), md = Point3::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) {
    ms += src[k];
    md += dst[k];
  }
  ms /= static_cast<double>(src.size());
  md /= static_cast<double>(dst.size());
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) h += (src[k] - ms) * (dst[k] - md).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300))
    throw NumericError("kabsch: degenerate correspondence covariance (rank < 2)");
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  t.translation = md - t.rotation * ms;
  return t;
}

namespace {

double hash_cell(const PointCloud& cloud) {
  Eigen::Vector3d lo = cloud.points.front(), hi = lo;
  for (const auto& p : cloud.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return std::max((hi - lo).maxCoeff() / 32.0, 1e-6);
}

double rms_against(const PointCloud& moved, const SpatialHash& index) {
  double acc = 0.0;
  for (const auto& p : moved.points) {
    const double d = index.nearest(p).distance;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(moved.size()));
}

void require_icp_input(const PointCloud& cloud, const char* role) {
  if (cloud.size() < 3) throw DataError(std::string("icp: ") + role + " cloud has fewer than 3 points");
}

}  // namespace

double nearest_neighbor_rms(const PointCloud& source, const PointCloud& target) {
  require_icp_input(target, "target");
  const SpatialHash index(target.points, hash_cell(target));
  return rms_against(source, index);
}

IcpResult icp(const PointCloud& source, const PointCloud& target, const IcpConfig& config) {
  require_icp_input(source, "source");
  require_icp_input(target, "target");
  const SpatialHash index(target.points, hash_cell(target));
  IcpResult result;
  double rms = rms_against(source, index);
  result.rms_history.push_back(rms);
  std::vector<Point3> src, dst;
  std::vector<double> dist(source.size());
  std::vector<std::size_t> nn(source.size());
  for (int it = 0; it < config.max_iter; ++it) {
    const PointCloud moved = result.transform.apply(source);
    for (std::size_t k = 0; k < moved.size(); ++k) {
      const auto hit = index.nearest(moved.points[k]);
      nn[k] = hit.index;
      dist[k] = hit.distance;
    }
    const double cutoff = config.reject_factor * lower_median(dist);
    src.clear();
    dst.clear();
    for (std::size_t k = 0; k < moved.size(); ++k) {
      if (dist[k] > cutoff) continue;
      src.push_back(moved.points[k]);
      dst.push_back(target.points[nn[k]]);
    }
    const RigidTransform step = kabsch(src, dst);
    const RigidTransform next = step.compose(result.transform);
    const double next_rms = rms_against(next.apply(source), index);
    if (next_rms > rms) break;
    result.transform = next;
    result.iterations = it + 1;
    result.rms_history.push_back(next_rms);
    const double change = rms - next_rms;
    rms = next_rms;
    if (change < config.tol) break;
  }
  return result;
}

namespace {

PointCloud union_of(std::span<const PointCloud> clouds) {
  PointCloud out;
  for (const auto& c : clouds) out.points.insert(out.points.end(), c.points.begin(), c.points.end());
  return out;
}

std::vector<Point3> centroids_of(std::span<const PointCloud> clouds) {
  std::vector<Point3> out;
  for (const auto& c : clouds) {
    if (c.empty()) throw DataError("association: fruitlet with an empty cloud");
    out.push_back(c.centroid());
  }
  return out;
}

// Hungarian over `cost`, then drop matches whose centroid distance exceeds the threshold.
CorrespondenceSet assign_with_threshold(const Eigen::MatrixXd& cost, const Eigen::MatrixXd& distance,
                                        double threshold) {
  std::vector<Match> kept;
  for (const auto& [i, j] : hungarian(cost))
    if (distance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <= threshold) kept.emplace_back(i, j);
  return CorrespondenceSet::from_matches(static_cast<std::size_t>(cost.rows()), static_cast<std::size_t>(cost.cols()),
                                         std::move(kept));
}

Eigen::MatrixXd distance_matrix(std::span<const Point3> a, std::span<const Point3> b) {
  Eigen::MatrixXd d(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) d(i, j) = (a[i] - b[j]).norm();
  return d;
}

void require_clusters(std::span<const PointCloud> day_t, std::span<const PointCloud> day_t1) {
  if (day_t.empty() || day_t1.empty()) throw DataError("association: both clusters must be non-empty");
}

// Runs ICP, falling back to the identity on numeric or data failure.
std::pair<RigidTransform, bool> align_or_identity(const PointCloud& source, const PointCloud& target,
                                                  const IcpConfig& config) {
  try {
    return {icp(source, target, config).transform, false};
  } catch (const NumericError&) {
  } catch (const DataError&) {
  }
  return {RigidTransform{}, true};
}

}  // namespace

AssociationResult icp_assoc(std::span<const PointCloud> day_t, std::span<const PointCloud> day_t1,
                            const IcpAssocConfig& config) {
  require_clusters(day_t, day_t1);
  AssociationResult out;
  std::tie(out.alignment, out.icp_failed) = align_or_identity(union_of(day_t), union_of(day_t1), config.icp);
  std::vector<Point3> ca = centroids_of(day_t);
  for (auto& c : ca) c = out.alignment.apply(c);
  const std::vector<Point3> cb = centroids_of(day_t1);
  const Eigen::MatrixXd d = distance_matrix(ca, cb);
  out.matches = assign_with_threshold(d, d, config.dist_threshold);
  return out;
}

std::vector<double> neighbor_histogram(std::span<const Point3> centroids, std::size_t self,
                                       const HistogramConfig& config) {
  std::vector<double> h(config.size(), 0.0);
  if (centroids.size() < 2) return h;
  const double pi = std::numbers::pi;
  auto bin = [](double v, double lo, double hi, int bins) {
    const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    return std::clamp(b, 0, bins - 1);
  };
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    if (k == self) continue;
    const Point3 off = centroids[k] - centroids[self];
    const double r = off.norm();
    const int db = bin(r, 0.0, config.max_distance, config.distance_bins);
    const int ab = bin(std::atan2(off.y(), off.x()), -pi, pi, config.azimuth_bins);
    const int eb = r > 0.0 ? bin(std::asin(std::clamp(off.z() / r, -1.0, 1.0)), -pi / 2, pi / 2, config.elevation_bins)
                           : config.elevation_bins / 2;
    h[static_cast<std::size_t>((db * config.azimuth_bins + ab) * config.elevation_bins + eb)] += 1.0;
  }
  const double mass = static_cast<double>(centroids.size() - 1);
  for (auto& v : h) v /= mass;
  return h;
}

namespace {

// Weight-independent part of desc_assoc, shared by the tuning loop.
struct DescAssocPrepared {
  RigidTransform alignment;
  bool icp_failed = false;
  Eigen::MatrixXd distance;  // meters
  Eigen::MatrixXd hist_l1;   // empty when either side has a single fruitlet
};

PointCloud local_volume(std::span<const PointCloud> clouds, double radius) {
  const PointCloud all = union_of(clouds);
  const Point3 c = all.centroid();
  PointCloud out;
  for (const auto& p : all.points)
    if ((p - c).norm() <= radius) out.points.push_back(p);
  return out;
}

DescAssocPrepared prepare_desc_assoc(std::span<const PointCloud> day_t, std::span<const PointCloud> day_t1,
                                     const DescAssocConfig& config) {
  require_clusters(day_t, day_t1);
  DescAssocPrepared out;
  std::tie(out.alignment, out.icp_failed) = align_or_identity(
      local_volume(day_t, config.local_radius), local_volume(day_t1, config.local_radius), config.icp);
  std::vector<Point3> ca = centroids_of(day_t);
  for (auto& c : ca) c = out.alignment.apply(c);
  const std::vector<Point3> cb = centroids_of(day_t1);
  out.distance = distance_matrix(ca, cb);
  if (ca.size() < 2 || cb.size() < 2) return out;
  std::vector<std::vector<double>> ha, hb;
  for (std::size_t i = 0; i < ca.size(); ++i) ha.push_back(neighbor_histogram(ca, i, config.histogram));
  for (std::size_t j = 0; j < cb.size(); ++j) hb.push_back(neighbor_histogram(cb, j, config.histogram));
  out.hist_l1.resize(ca.size(), cb.size());
  for (std::size_t i = 0; i < ca.size(); ++i)
    for (std::size_t j = 0; j < cb.size(); ++j) {
      double l1 = 0.0;
      for (std::size_t k = 0; k < ha[i].size(); ++k) l1 += std::abs(ha[i][k] - hb[j][k]);
      out.hist_l1(i, j) = l1;
    }
  return out;
}

CorrespondenceSet solve_desc_assoc(const DescAssocPrepared& prep, double w_hist, double w_dist, double threshold) {
  Eigen::MatrixXd cost = w_dist * 1000.0 * prep.distance;
  if (prep.hist_l1.size() > 0) cost += w_hist * prep.hist_l1;
  return assign_with_threshold(cost, prep.distance, threshold);
}

}  // namespace

AssociationResult desc_assoc(std::span<const PointCloud> day_t, std::span<const PointCloud> day_t1,
                             const DescAssocConfig& config) {
  const DescAssocPrepared prep = prepare_desc_assoc(day_t, day_t1, config);
  AssociationResult out;
  out.alignment = prep.alignment;
  out.icp_failed = prep.icp_failed;
  // A single-fruitlet side leaves only the centroid term.
  const double w_dist = prep.hist_l1.size() > 0 ? config.w_dist : std::max(config.w_dist, 1.0);
  out.matches = solve_desc_assoc(prep, config.w_hist, w_dist, config.dist_threshold);
  return out;
}

DescAssocTuning tune_desc_assoc(std::span<const ClusterPairView> pairs, std::span<const double> w_hist_grid,
                                std::span<const double> w_dist_grid, DescAssocConfig base) {
  if (pairs.empty() || w_hist_grid.empty() || w_dist_grid.empty())
    throw UsageError("tune_desc_assoc: empty tuning set or grid");
  std::vector<DescAssocPrepared> prepared;
  for (const auto& p : pairs) {
    if (!p.truth) throw DataError("tune_desc_assoc: tuning pair without ground truth");
    prepared.push_back(prepare_desc_assoc(p.day_t, p.day_t1, base));
  }
  DescAssocTuning best;
  best.f1 = -1.0;
  for (double wh : w_hist_grid)
    for (double wd : w_dist_grid) {
      std::vector<PairScore> scores;
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        const double w_dist = prepared[k].hist_l1.size() > 0 ? wd : std::max(wd, 1.0);
        scores.push_back(score_pair(solve_desc_assoc(prepared[k], wh, w_dist, base.dist_threshold), *pairs[k].truth));
      }
      const double f1 = summarize(scores).f1;
      if (f1 > best.f1) best = {wh, wd, f1};
    }
  return best;
}

}  // namespace fruitlet
