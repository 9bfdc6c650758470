#pragma once

// Central finite-difference gradient checks. Meant for the double-precision
// build, where step 1e-3 leaves truncation error far below the tolerance.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fruitlet/autodiff.hpp"

namespace fruitlet::testing {

struct GradCheckResult {
  double worst = 0.0;  // largest |analytic - numeric| / max(|analytic|, |numeric|) among failing-scale entries
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::string first_failure;
};

// Passes when |a - n| <= rel * max(|a|, |n|) or |a - n| <= abs_floor.
inline GradCheckResult grad_check(const std::function<ad::Tensor()>& loss_fn, std::vector<ad::Tensor> leaves,
                                  double step = 1e-3, double rel = 1e-3, double abs_floor = 1e-5,
                                  std::size_t max_entries_per_leaf = 0) {
  for (auto& leaf : leaves) leaf.zero_grad();
  ad::backward(loss_fn());
  GradCheckResult out;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    ad::Tensor& leaf = leaves[l];
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad())
      for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = leaf.grad()[i];
    const std::size_t count =
        max_entries_per_leaf ? std::min(max_entries_per_leaf, leaf.numel()) : leaf.numel();
    // Spread sampled entries evenly over the tensor.
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t i = count == leaf.numel() ? s : s * leaf.numel() / count;
      auto data = leaf.mutable_data();
      const ad::Real keep = data[i];
      double numeric = 0.0;
      {
        ad::NoGradGuard guard;
        data[i] = keep + static_cast<ad::Real>(step);
        const double up = loss_fn().item();
        data[i] = keep - static_cast<ad::Real>(step);
        const double down = loss_fn().item();
        numeric = (up - down) / (2.0 * step);
      }
      data[i] = keep;
      const double a = analytic[i], diff = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      ++out.checked;
      if (diff > abs_floor) out.worst = std::max(out.worst, diff / scale);
      if (diff > rel * scale && diff > abs_floor) {
        if (out.failures++ == 0)
          out.first_failure = "leaf " + std::to_string(l) + " entry " + std::to_string(i) + ": analytic " +
                              std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

inline ad::Tensor random_tensor(std::mt19937_64& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0,
                                bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<ad::Real> v(ad::shape_numel(shape));
  for (auto& x : v) x = static_cast<ad::Real>(u(rng));
  return ad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Values bounded away from zero, for ops with a kink there.
inline ad::Tensor away_from_zero(std::mt19937_64& rng, ad::Shape shape, double margin = 0.05) {
  ad::Tensor t = random_tensor(rng, std::move(shape));
  for (auto& x : t.mutable_data())
    if (std::abs(x) < margin) x = x < 0 ? -static_cast<ad::Real>(margin) - x : static_cast<ad::Real>(margin) + x;
  return t;
}

// Contracts any tensor to a scalar with fixed random weights so every entry
// receives a distinct upstream gradient.
inline ad::Tensor weighted_sum(const ad::Tensor& x, uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ad::Tensor w = random_tensor(rng, x.shape(), -1.0, 1.0, false);
  return ad::sum(ad::mul(x, w));
}

}  // namespace fruitlet::testing
