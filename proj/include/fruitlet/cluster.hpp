#pragma once

#include <string>
#include <vector>

#include "fruitlet/correspondence.hpp"
#include "fruitlet/geometry.hpp"

namespace fruitlet {

struct FruitletObservation {
  std::string fruitlet_id;
  PointCloud cloud;
};

// Same-day observation of one cluster.
struct ClusterObservation {
  std::string cluster_id;
  int day = 0;
  std::vector<FruitletObservation> fruitlets;

  std::vector<PointCloud> clouds() const {
    std::vector<PointCloud> out;
    out.reserve(fruitlets.size());
    for (const auto& f : fruitlets) out.push_back(f.cloud);
    return out;
  }
};

// Two observations of one cluster; truth indexes day_t.fruitlets x day_t1.fruitlets.
struct LabeledClusterPair {
  std::string cluster_id;
  int day_gap = 0;
  ClusterObservation day_t, day_t1;
  bool has_truth = true;
  CorrespondenceSet truth;
};

}  // namespace fruitlet
