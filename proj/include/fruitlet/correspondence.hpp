#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fruitlet {

using Match = std::pair<std::size_t, std::size_t>;

// One-to-one matches between a day-t set of size m and a day-t+1 set of size n.
// `matches` is sorted; the unmatched lists are sorted and complete the partition.
struct CorrespondenceSet {
  std::size_t m = 0, n = 0;
  std::vector<Match> matches;
  std::vector<std::size_t> unmatched_t, unmatched_t1;

  // Throws std::invalid_argument on an out-of-range or repeated index.
  static CorrespondenceSet from_matches(std::size_t m, std::size_t n, std::vector<Match> matches);

  // Empty string when every invariant holds, else a description of the first violation.
  std::string validate() const;

  bool operator==(const CorrespondenceSet&) const = default;
};

// (i, j) is kept iff p[i, j] is the strict maximum of row i and of column j
// and exceeds tau; exact ties yield no match. `p` is row-major m x n.
CorrespondenceSet mutual_max_matches(std::span<const double> p, std::size_t m, std::size_t n, double tau);

}  // namespace fruitlet
