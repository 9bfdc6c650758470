#include "fruitlet/evaluation.hpp"

#include <cmath>

#include "fruitlet/error.hpp"

namespace fruitlet {

namespace {

bool has_principal_frame(const PointCloud& cloud) {
  if (cloud.size() < 4) return false;
  try {
    compute_pca(cloud);
    return true;
  } catch (const NumericError&) {
    return false;
  } catch (const DataError&) {
    return false;
  }
}

}  // namespace

Ablation parse_ablation(std::string_view name) {
  if (name == "none") return Ablation::None;
  if (name == "no_shape") return Ablation::NoShape;
  if (name == "no_pos") return Ablation::NoPos;
  if (name == "no_pretrain") return Ablation::NoPretrain;
  throw UsageError("unknown ablation '" + std::string(name) + "' (expected none, no_shape, no_pos or no_pretrain)");
}

std::string_view to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::None: return "none";
    case Ablation::NoShape: return "no_shape";
    case Ablation::NoPos: return "no_pos";
    case Ablation::NoPretrain: return "no_pretrain";
  }
  return "none";
}

PointCloud filter_fruitlet(const PointCloud& cloud, const FilterParams& filters) {
  PointCloud out = radial_outlier_removal(cloud, filters.outlier_radius, filters.min_neighbors);
  if (!out.empty()) out = median_distance_filter(out, filters.median_k_sigma);
  return has_principal_frame(out) ? out : cloud;
}

LabeledClusterPair preprocess_pair(const LabeledClusterPair& pair, const FilterParams& filters) {
  LabeledClusterPair out = pair;
  for (ClusterObservation* obs : {&out.day_t, &out.day_t1}) {
    std::vector<PointCloud> clouds;
    for (const auto& f : obs->fruitlets) clouds.push_back(filter_fruitlet(f.cloud, filters));
    clouds = center_clouds(clouds);
    for (std::size_t k = 0; k < clouds.size(); ++k) obs->fruitlets[k].cloud = std::move(clouds[k]);
  }
  return out;
}

ThresholdSweep sweep_threshold(std::span<const std::vector<double>> assignments,
                               std::span<const CorrespondenceSet> truths, double lo, double hi, double step) {
  if (assignments.size() != truths.size()) throw std::invalid_argument("sweep_threshold: size mismatch");
  if (!(step > 0.0) || hi < lo) throw UsageError("sweep_threshold: invalid range");
  ThresholdSweep best;
  best.f1 = -1.0;
  const auto steps = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
  for (int s = 0; s <= steps; ++s) {
    const double tau = lo + step * s;
    std::vector<PairScore> scores;
    scores.reserve(truths.size());
    for (std::size_t k = 0; k < truths.size(); ++k) {
      const auto& p = assignments[k];
      const std::size_t m = truths[k].m, n = truths[k].n;
      if (p.size() != m * n) throw std::invalid_argument("sweep_threshold: assignment does not match truth size");
      scores.push_back(score_pair(mutual_max_matches(p, m, n, tau), truths[k]));
    }
    const double f1 = summarize(scores).f1;
    best.curve.emplace_back(tau, f1);
    if (f1 > best.f1) {
      best.f1 = f1;
      best.tau = tau;
    }
  }
  return best;
}

EvalReport evaluate_baseline(BaselineMethod method, std::span<const LabeledClusterPair> pairs,
                             const BaselineConfig& config) {
  std::vector<ScoredPair> scored;
  std::size_t excluded = 0;
  for (const auto& pair : pairs) {
    if (!pair.has_truth) {
      ++excluded;
      continue;
    }
    const auto a = pair.day_t.clouds(), b = pair.day_t1.clouds();
    const AssociationResult r =
        method == BaselineMethod::IcpAssoc ? icp_assoc(a, b, config.icp_assoc) : desc_assoc(a, b, config.desc_assoc);
    scored.push_back({pair.cluster_id, pair.day_gap, r.matches, pair.truth, {}});
  }
  return build_report(method == BaselineMethod::IcpAssoc ? "icp_assoc" : "desc_assoc", std::move(scored), excluded);
}

}  // namespace fruitlet
