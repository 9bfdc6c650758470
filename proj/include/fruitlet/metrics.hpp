#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fruitlet/correspondence.hpp"

namespace fruitlet {

struct PairScore {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Counts over match pairs. No predictions against a non-empty truth gives
// precision 0; an empty truth with no predictions scores 1 throughout.
PairScore score_pair(const CorrespondenceSet& predicted, const CorrespondenceSet& truth);

struct MetricSummary {
  double precision = 0.0, recall = 0.0, f1 = 0.0;  // macro: mean of per-pair values
  double micro_precision = 0.0, micro_recall = 0.0, micro_f1 = 0.0;
  std::size_t n_pairs = 0;
};

MetricSummary summarize(const std::vector<PairScore>& scores);

struct ScoredPair {
  std::string cluster_id;
  int day_gap = 0;
  CorrespondenceSet predicted, truth;
  PairScore score;
};

struct EvalReport {
  std::string method;
  MetricSummary overall;
  std::map<int, MetricSummary> by_day_gap;
  std::vector<ScoredPair> pairs;
  std::size_t excluded_without_truth = 0;
};

// Fills scores and summaries from pairs whose predicted/truth fields are set.
EvalReport build_report(std::string method, std::vector<ScoredPair> pairs, std::size_t excluded_without_truth = 0);

}  // namespace fruitlet
