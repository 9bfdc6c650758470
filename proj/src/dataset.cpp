#include "fruitlet/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "fruitlet/error.hpp"
#include "json.hpp"

namespace fruitlet {

namespace {

using nlohmann::json;

struct LineContext {
  const std::string& source;
  std::size_t line;

  [[noreturn]] void fail(const std::string& path, const std::string& message) const {
    throw DataError(source + ":" + std::to_string(line) + ": " + path + ": " + message);
  }

  const json& field(const json& obj, const char* key, const std::string& path) const {
    auto it = obj.find(key);
    if (it == obj.end()) fail(path + "." + key, "missing");
    return *it;
  }

  std::string string_at(const json& obj, const char* key, const std::string& path) const {
    const json& v = field(obj, key, path);
    if (!v.is_string()) fail(path + "." + key, "expected a string");
    return v.get<std::string>();
  }

  int int_at(const json& obj, const char* key, const std::string& path) const {
    const json& v = field(obj, key, path);
    if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
    return v.get<int>();
  }
};

ClusterObservation parse_record(const json& j, const LineContext& ctx) {
  ClusterObservation rec;
  rec.cluster_id = ctx.string_at(j, "cluster_id", "$");
  rec.day = ctx.int_at(j, "day", "$");
  const json& fruitlets = ctx.field(j, "fruitlets", "$");
  if (!fruitlets.is_array() || fruitlets.empty()) ctx.fail("$.fruitlets", "expected a non-empty array");
  std::set<std::string> ids;
  for (std::size_t f = 0; f < fruitlets.size(); ++f) {
    const std::string path = "$.fruitlets[" + std::to_string(f) + "]";
    const json& fj = fruitlets[f];
    if (!fj.is_object()) ctx.fail(path, "expected an object");
    FruitletObservation obs;
    obs.fruitlet_id = ctx.string_at(fj, "fruitlet_id", path);
    if (!ids.insert(obs.fruitlet_id).second) ctx.fail(path + ".fruitlet_id", "duplicate id '" + obs.fruitlet_id + "'");
    const json& pts = ctx.field(fj, "points", path);
    if (!pts.is_array()) ctx.fail(path + ".points", "expected an array");
    obs.cloud.points.reserve(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const json& p = pts[k];
      const std::string ppath = path + ".points[" + std::to_string(k) + "]";
      if (!p.is_array() || p.size() != 3) ctx.fail(ppath, "expected [x, y, z]");
      Point3 q;
      for (int c = 0; c < 3; ++c) {
        if (!p[c].is_number()) ctx.fail(ppath, "expected numeric coordinates");
        q[c] = p[c].get<double>();
        if (!std::isfinite(q[c])) ctx.fail(ppath, "non-finite coordinate");
      }
      obs.cloud.points.push_back(q);
    }
    rec.fruitlets.push_back(std::move(obs));
  }
  return rec;
}

PairRecord parse_pair(const json& j, const LineContext& ctx) {
  PairRecord pr;
  pr.line = ctx.line;
  pr.cluster_id = ctx.string_at(j, "cluster_id", "$");
  pr.day_t = ctx.int_at(j, "day_t", "$");
  pr.day_t1 = ctx.int_at(j, "day_t1", "$");
  if (auto it = j.find("gt_matches"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) ctx.fail("$.gt_matches", "expected an array");
    std::vector<Match> matches;
    for (std::size_t k = 0; k < it->size(); ++k) {
      const json& m = (*it)[k];
      const std::string path = "$.gt_matches[" + std::to_string(k) + "]";
      if (!m.is_array() || m.size() != 2 || !m[0].is_number_unsigned() || !m[1].is_number_unsigned())
        ctx.fail(path, "expected [i, j] with non-negative integers");
      matches.emplace_back(m[0].get<std::size_t>(), m[1].get<std::size_t>());
    }
    pr.gt_matches = std::move(matches);
  }
  return pr;
}

void append_number(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, static_cast<float>(v));
  out.append(buf, res.ptr);
}

}  // namespace

Dataset parse_dataset(std::istream& in, const std::string& source) {
  Dataset ds;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const LineContext ctx{source, line};
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      ctx.fail("$", std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) ctx.fail("$", "expected an object");
    const std::string type = ctx.string_at(j, "type", "$");
    if (type == "record")
      ds.records.push_back(parse_record(j, ctx));
    else if (type == "pair")
      ds.pairs.push_back(parse_pair(j, ctx));
    else
      ctx.fail("$.type", "unknown type '" + type + "'");
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  return parse_dataset(in, path.string());
}

std::vector<LabeledClusterPair> resolve_pairs(const Dataset& dataset, const std::string& source) {
  std::map<std::pair<std::string, int>, const ClusterObservation*> index;
  for (const auto& r : dataset.records)
    if (!index.emplace(std::make_pair(r.cluster_id, r.day), &r).second)
      throw DataError(source + ": duplicate record for cluster '" + r.cluster_id + "' day " + std::to_string(r.day));
  std::vector<LabeledClusterPair> out;
  for (const auto& pr : dataset.pairs) {
    const LineContext ctx{source, pr.line};
    auto find = [&](int day, const char* field) {
      auto it = index.find({pr.cluster_id, day});
      if (it == index.end())
        ctx.fail(std::string("$.") + field,
                 "no record for cluster '" + pr.cluster_id + "' day " + std::to_string(day));
      return it->second;
    };
    LabeledClusterPair pair;
    pair.cluster_id = pr.cluster_id;
    pair.day_t = *find(pr.day_t, "day_t");
    pair.day_t1 = *find(pr.day_t1, "day_t1");
    pair.day_gap = pr.day_t1 - pr.day_t;
    pair.has_truth = pr.gt_matches.has_value();
    if (pair.has_truth) {
      try {
        pair.truth = CorrespondenceSet::from_matches(pair.day_t.fruitlets.size(), pair.day_t1.fruitlets.size(),
                                                     *pr.gt_matches);
      } catch (const std::invalid_argument& e) {
        ctx.fail("$.gt_matches", e.what());
      }
    }
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<LabeledClusterPair> load_pairs(const std::filesystem::path& path) {
  return resolve_pairs(load_dataset(path), path.string());
}

void write_pairs(std::ostream& out, std::span<const LabeledClusterPair> pairs) {
  std::string line;
  auto write_record = [&](const ClusterObservation& obs) {
    line = R"({"type":"record","cluster_id":)" + json(obs.cluster_id).dump() + ",\"day\":" + std::to_string(obs.day) +
           ",\"fruitlets\":[";
    for (std::size_t f = 0; f < obs.fruitlets.size(); ++f) {
      if (f) line += ',';
      line += "{\"fruitlet_id\":" + json(obs.fruitlets[f].fruitlet_id).dump() + ",\"points\":[";
      const auto& pts = obs.fruitlets[f].cloud.points;
      for (std::size_t k = 0; k < pts.size(); ++k) {
        if (k) line += ',';
        line += '[';
        for (int c = 0; c < 3; ++c) {
          if (c) line += ',';
          append_number(line, pts[k][c]);
        }
        line += ']';
      }
      line += "]}";
    }
    line += "]}\n";
    out << line;
  };
  std::set<std::pair<std::string, int>> written;
  for (const auto& p : pairs) {
    for (const ClusterObservation* obs : {&p.day_t, &p.day_t1})
      if (written.emplace(obs->cluster_id, obs->day).second) write_record(*obs);
    json pj = {{"type", "pair"}, {"cluster_id", p.cluster_id}, {"day_t", p.day_t.day}, {"day_t1", p.day_t1.day}};
    if (p.has_truth) {
      json gt = json::array();
      for (const auto& [i, j] : p.truth.matches) gt.push_back({i, j});
      pj["gt_matches"] = gt;
    }
    out << pj.dump() << '\n';
  }
}

void save_pairs(const std::filesystem::path& path, std::span<const LabeledClusterPair> pairs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset '" + path.string() + "'");
  write_pairs(out, pairs);
  if (!out) throw DataError("failed while writing dataset '" + path.string() + "'");
}

}  // namespace fruitlet
