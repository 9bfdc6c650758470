#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fruitlet/cluster.hpp"

namespace fruitlet {

struct PairRecord {
  std::string cluster_id;
  int day_t = 0, day_t1 = 0;
  std::optional<std::vector<Match>> gt_matches;
  std::size_t line = 0;
};

// JSON lines; each line is either
//   {"type":"record","cluster_id":..,"day":..,"fruitlets":[{"fruitlet_id":..,"points":[[x,y,z],..]},..]}
//   {"type":"pair","cluster_id":..,"day_t":..,"day_t1":..,"gt_matches":[[i,j],..]}   (gt_matches optional)
// Blank lines are ignored. Errors name the source, line and field path.
struct Dataset {
  std::vector<ClusterObservation> records;
  std::vector<PairRecord> pairs;
};

Dataset parse_dataset(std::istream& in, const std::string& source = "<stream>");
Dataset load_dataset(const std::filesystem::path& path);

// Joins pair lines with their records; pairs without gt_matches get has_truth = false.
std::vector<LabeledClusterPair> resolve_pairs(const Dataset& dataset, const std::string& source = "<dataset>");
std::vector<LabeledClusterPair> load_pairs(const std::filesystem::path& path);

// Coordinates are written as the shortest text of their float32 rounding.
void write_pairs(std::ostream& out, std::span<const LabeledClusterPair> pairs);
void save_pairs(const std::filesystem::path& path, std::span<const LabeledClusterPair> pairs);

}  // namespace fruitlet
