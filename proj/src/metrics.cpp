#include "fruitlet/metrics.hpp"

#include <algorithm>
#include <set>

namespace fruitlet {

namespace {

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

PairScore score_pair(const CorrespondenceSet& predicted, const CorrespondenceSet& truth) {
  const std::set<Match> gt(truth.matches.begin(), truth.matches.end());
  PairScore s;
  for (const auto& m : predicted.matches) (gt.count(m) ? s.tp : s.fp)++;
  s.fn = gt.size() - s.tp;
  if (predicted.matches.empty() && gt.empty()) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  s.precision = predicted.matches.empty() ? 0.0 : static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
  s.recall = gt.empty() ? 1.0 : static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
  s.f1 = harmonic(s.precision, s.recall);
  return s;
}

MetricSummary summarize(const std::vector<PairScore>& scores) {
  MetricSummary out;
  out.n_pairs = scores.size();
  if (scores.empty()) return out;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& s : scores) {
    out.precision += s.precision;
    out.recall += s.recall;
    out.f1 += s.f1;
    tp += s.tp;
    fp += s.fp;
    fn += s.fn;
  }
  const double n = static_cast<double>(scores.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  out.micro_precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : (fn ? 0.0 : 1.0);
  out.micro_recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 1.0;
  out.micro_f1 = harmonic(out.micro_precision, out.micro_recall);
  return out;
}

EvalReport build_report(std::string method, std::vector<ScoredPair> pairs, std::size_t excluded_without_truth) {
  EvalReport report;
  report.method = std::move(method);
  report.excluded_without_truth = excluded_without_truth;
  std::vector<PairScore> all;
  std::map<int, std::vector<PairScore>> grouped;
  for (auto& p : pairs) {
    p.score = score_pair(p.predicted, p.truth);
    all.push_back(p.score);
    grouped[p.day_gap].push_back(p.score);
  }
  report.overall = summarize(all);
  for (const auto& [gap, scores] : grouped) report.by_day_gap[gap] = summarize(scores);
  report.pairs = std::move(pairs);
  return report;
}

}  // namespace fruitlet
