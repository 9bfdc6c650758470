#include "fruitlet/correspondence.hpp"

#include <algorithm>
#include <stdexcept>

namespace fruitlet {

CorrespondenceSet CorrespondenceSet::from_matches(std::size_t m, std::size_t n, std::vector<Match> matches) {
  CorrespondenceSet out;
  out.m = m;
  out.n = n;
  std::vector<bool> used_t(m, false), used_t1(n, false);
  for (const auto& [i, j] : matches) {
    if (i >= m || j >= n)
      throw std::invalid_argument("match (" + std::to_string(i) + ", " + std::to_string(j) + ") out of range for " +
                                  std::to_string(m) + " x " + std::to_string(n));
    if (used_t[i] || used_t1[j])
      throw std::invalid_argument("match (" + std::to_string(i) + ", " + std::to_string(j) +
                                  ") reuses an already matched index");
    used_t[i] = used_t1[j] = true;
  }
  std::sort(matches.begin(), matches.end());
  out.matches = std::move(matches);
  for (std::size_t i = 0; i < m; ++i)
    if (!used_t[i]) out.unmatched_t.push_back(i);
  for (std::size_t j = 0; j < n; ++j)
    if (!used_t1[j]) out.unmatched_t1.push_back(j);
  return out;
}

std::string CorrespondenceSet::validate() const {
  std::vector<int> seen_t(m, 0), seen_t1(n, 0);
  for (const auto& [i, j] : matches) {
    if (i >= m || j >= n) return "match index out of range";
    ++seen_t[i];
    ++seen_t1[j];
  }
  for (auto i : unmatched_t) {
    if (i >= m) return "unmatched day-t index out of range";
    ++seen_t[i];
  }
  for (auto j : unmatched_t1) {
    if (j >= n) return "unmatched day-t+1 index out of range";
    ++seen_t1[j];
  }
  for (std::size_t i = 0; i < m; ++i)
    if (seen_t[i] != 1) return "day-t index " + std::to_string(i) + " appears " + std::to_string(seen_t[i]) + " times";
  for (std::size_t j = 0; j < n; ++j)
    if (seen_t1[j] != 1)
      return "day-t+1 index " + std::to_string(j) + " appears " + std::to_string(seen_t1[j]) + " times";
  return {};
}

CorrespondenceSet mutual_max_matches(std::span<const double> p, std::size_t m, std::size_t n, double tau) {
  if (p.size() != m * n) throw std::invalid_argument("mutual_max_matches: buffer size does not match m x n");
  std::vector<Match> matches;
  for (std::size_t i = 0; i < m && n > 0; ++i) {
    const double* row = p.data() + i * n;
    std::size_t best = 0;
    bool tied = false;
    for (std::size_t j = 1; j < n; ++j) {
      if (row[j] > row[best]) {
        best = j;
        tied = false;
      } else if (row[j] == row[best]) {
        tied = true;
      }
    }
    if (tied || !(row[best] > tau)) continue;
    bool column_max = true;
    for (std::size_t r = 0; r < m && column_max; ++r)
      if (r != i && p[r * n + best] >= row[best]) column_max = false;
    if (column_max) matches.emplace_back(i, best);
  }
  return CorrespondenceSet::from_matches(m, n, std::move(matches));
}

}  // namespace fruitlet
