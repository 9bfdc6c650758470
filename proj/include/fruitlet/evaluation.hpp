#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fruitlet/baselines.hpp"
#include "fruitlet/cluster.hpp"
#include "fruitlet/geometry.hpp"
#include "fruitlet/metrics.hpp"

namespace fruitlet {

enum class Ablation { None, NoShape, NoPos, NoPretrain };

Ablation parse_ablation(std::string_view name);
std::string_view to_string(Ablation ablation);

// Filter chain for unordered fruitlet clouds: radial outlier removal, then
// the median distance filter. A fruitlet the filters would leave without a
// valid principal frame keeps its raw points.
PointCloud filter_fruitlet(const PointCloud& cloud, const FilterParams& filters);

// Filters every fruitlet of both days and centers each day on its union centroid.
LabeledClusterPair preprocess_pair(const LabeledClusterPair& pair, const FilterParams& filters);

using ProgressLog = std::function<void(const std::string&)>;

struct ThresholdSweep {
  double tau = 0.1;
  double f1 = 0.0;
  std::vector<std::pair<double, double>> curve;  // (tau, macro F1)
};

// Sweeps tau over [lo, hi] in steps; the smallest tau wins ties.
// `assignments[k]` is the row-major final P of pair k.
ThresholdSweep sweep_threshold(std::span<const std::vector<double>> assignments,
                               std::span<const CorrespondenceSet> truths, double lo = 0.01, double hi = 0.5,
                               double step = 0.01);

enum class BaselineMethod { IcpAssoc, DescAssoc };

struct BaselineConfig {
  IcpAssocConfig icp_assoc;
  DescAssocConfig desc_assoc;
};

// Runs a baseline on preprocessed pairs; pairs without ground truth are skipped and counted.
EvalReport evaluate_baseline(BaselineMethod method, std::span<const LabeledClusterPair> pairs,
                             const BaselineConfig& config = {});

}  // namespace fruitlet
