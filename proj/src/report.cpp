#include "fruitlet/report.hpp"

#include <cstdio>
#include <set>

#include "fruitlet/error.hpp"

namespace fruitlet {

using nlohmann::json;

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

json summary_to_json(const MetricSummary& s) {
  return {{"precision", s.precision},         {"recall", s.recall},
          {"f1", s.f1},                       {"micro_precision", s.micro_precision},
          {"micro_recall", s.micro_recall},   {"micro_f1", s.micro_f1},
          {"n_pairs", s.n_pairs}};
}

MetricSummary summary_from_json(const json& j) {
  MetricSummary s;
  s.precision = j.at("precision").get<double>();
  s.recall = j.at("recall").get<double>();
  s.f1 = j.at("f1").get<double>();
  s.micro_precision = j.at("micro_precision").get<double>();
  s.micro_recall = j.at("micro_recall").get<double>();
  s.micro_f1 = j.at("micro_f1").get<double>();
  s.n_pairs = j.at("n_pairs").get<std::size_t>();
  return s;
}

json matches_to_json(const CorrespondenceSet& c) {
  json out = json::array();
  for (const auto& [i, j] : c.matches) out.push_back({i, j});
  return out;
}

CorrespondenceSet matches_from_json(const json& j, std::size_t m, std::size_t n) {
  std::vector<Match> matches;
  for (const auto& pair : j) matches.emplace_back(pair.at(0).get<std::size_t>(), pair.at(1).get<std::size_t>());
  return CorrespondenceSet::from_matches(m, n, std::move(matches));
}

void row(std::ostream& out, const std::string& method, const std::string& gap, const MetricSummary& s) {
  out << method << ',' << gap << ',' << fixed(s.precision) << ',' << fixed(s.recall) << ',' << fixed(s.f1) << ','
      << s.n_pairs << '\n';
}

}  // namespace

json report_to_json(const EvalReport& report) {
  json by_gap = json::object();
  for (const auto& [gap, s] : report.by_day_gap) by_gap[std::to_string(gap)] = summary_to_json(s);
  json pairs = json::array();
  for (const auto& p : report.pairs)
    pairs.push_back({{"cluster_id", p.cluster_id},
                     {"day_gap", p.day_gap},
                     {"m", p.truth.m},
                     {"n", p.truth.n},
                     {"predicted", matches_to_json(p.predicted)},
                     {"truth", matches_to_json(p.truth)},
                     {"tp", p.score.tp},
                     {"fp", p.score.fp},
                     {"fn", p.score.fn},
                     {"precision", p.score.precision},
                     {"recall", p.score.recall},
                     {"f1", p.score.f1}});
  return {{"method", report.method},
          {"overall", summary_to_json(report.overall)},
          {"by_day_gap", by_gap},
          {"excluded_without_truth", report.excluded_without_truth},
          {"pairs", pairs}};
}

EvalReport report_from_json(const json& j) {
  try {
    std::vector<ScoredPair> pairs;
    for (const auto& p : j.at("pairs")) {
      const auto m = p.at("m").get<std::size_t>(), n = p.at("n").get<std::size_t>();
      pairs.push_back({p.at("cluster_id").get<std::string>(), p.at("day_gap").get<int>(),
                       matches_from_json(p.at("predicted"), m, n), matches_from_json(p.at("truth"), m, n), {}});
    }
    EvalReport r = build_report(j.at("method").get<std::string>(), std::move(pairs),
                                j.at("excluded_without_truth").get<std::size_t>());
    // A report saved without pair dumps still carries its summaries.
    if (r.pairs.empty()) {
      r.overall = summary_from_json(j.at("overall"));
      for (const auto& [gap, s] : j.at("by_day_gap").items()) r.by_day_gap[std::stoi(gap)] = summary_from_json(s);
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("evaluation report: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("evaluation report: ") + e.what());
  }
}

void write_report_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "method,day_gap,precision,recall,f1,n_pairs\n";
  for (const auto& r : reports) {
    for (const auto& [gap, s] : r.by_day_gap) row(out, r.method, std::to_string(gap), s);
    row(out, r.method, "all", r.overall);
  }
}

void write_comparison_table(std::ostream& out, std::span<const EvalReport> reports) {
  out << "method,precision,recall,f1,micro_precision,micro_recall,micro_f1,n_pairs\n";
  for (const auto& r : reports) {
    const auto& s = r.overall;
    out << r.method << ',' << fixed(s.precision) << ',' << fixed(s.recall) << ',' << fixed(s.f1) << ','
        << fixed(s.micro_precision) << ',' << fixed(s.micro_recall) << ',' << fixed(s.micro_f1) << ',' << s.n_pairs
        << '\n';
  }
}

void write_day_gap_curves(std::ostream& out, std::span<const EvalReport> reports) {
  std::set<int> gaps;
  for (const auto& r : reports)
    for (const auto& [gap, s] : r.by_day_gap) gaps.insert(gap);
  out << "day_gap";
  for (const auto& r : reports) out << ',' << r.method << "_f1";
  out << '\n';
  for (int gap : gaps) {
    out << gap;
    for (const auto& r : reports) {
      out << ',';
      if (auto it = r.by_day_gap.find(gap); it != r.by_day_gap.end()) out << fixed(it->second.f1);
    }
    out << '\n';
  }
}

}  // namespace fruitlet
