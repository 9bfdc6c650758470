#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fruitlet/autodiff.hpp"
#include "fruitlet/correspondence.hpp"
#include "fruitlet/params.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN

struct MatcherConfig {
  std::size_t layers = 4;
  std::size_t heads = 8;
  std::size_t feature_dim = 256;
  std::size_t ffn_dim = 1024;
  double dropout = 0.1;
  double match_threshold = 0.1;

  void validate() const;
};

// Identifies one forward pass for dropout keying. Masks depend only on
// (seed, step, sample, site), never on evaluation order.
struct ForwardContext {
  bool training = false;
  uint64_t seed = 0;
  uint64_t step = 0;
  uint64_t sample = 0;
};

struct LayerPrediction {
  ad::Tensor scores;      // [M x N]
  ad::Tensor sigma_t;     // [M x 1]
  ad::Tensor sigma_t1;    // [N x 1]
  ad::Tensor assignment;  // [M x N]
};

struct MatcherOutput {
  ad::Tensor features_t, features_t1;   // final-layer features
  std::vector<LayerPrediction> layers;  // one per encoder layer

  const LayerPrediction& final_layer() const { return layers.back(); }
};

class Matcher {
 public:
  // Registers parameters under "matcher/".
  Matcher(const MatcherConfig& config, ParamStore& params, std::mt19937_64& rng);

  const MatcherConfig& config() const { return config_; }

  // Self-attention within each day, then symmetric cross-attention computed
  // from the post-self features of both days. An empty side skips the
  // cross-attention of its counterpart.
  std::pair<ad::Tensor, ad::Tensor> encoder_layer(std::size_t layer, const ad::Tensor& x_t, const ad::Tensor& x_t1,
                                                  const ForwardContext& ctx) const;

  ad::Tensor score_matrix(std::size_t layer, const ad::Tensor& x_t, const ad::Tensor& x_t1) const;
  ad::Tensor matchability(std::size_t layer, const ad::Tensor& x) const;  // [rows x 1]

  // x_t: [M x d], x_t1: [N x d]; either may have zero rows.
  MatcherOutput forward(const ad::Tensor& x_t, const ad::Tensor& x_t1, const ForwardContext& ctx) const;

 private:
  struct Affine {
    ad::Tensor weight, bias;
  };
  struct Norm {
    ad::Tensor gain, bias;
  };
  struct Block {
    Norm attn_norm, ffn_norm;
    Affine q, k, v, o, fc1, fc2;
  };
  struct Layer {
    Block self, cross;
    Affine score, match;
  };

  ad::Tensor attention(const Block& b, const ad::Tensor& query, const ad::Tensor& context) const;
  ad::Tensor feed_forward(const Block& b, const ad::Tensor& x, const ForwardContext& ctx, uint64_t site) const;
  ad::Tensor drop(const ad::Tensor& x, const ForwardContext& ctx, uint64_t site) const;

  MatcherConfig config_;
  std::vector<Layer> layers_;
};

// P = rowsoftmax(S) * colsoftmax(S) * sigma_t * sigma_t1^T, elementwise.
ad::Tensor partial_assignment(const ad::Tensor& scores, const ad::Tensor& sigma_t, const ad::Tensor& sigma_t1);

// Mutual strict row/column maxima of P that exceed tau. `p` is row-major m x n.
CorrespondenceSet extract_matches(std::span<const ad::Real> p, std::size_t m, std::size_t n, double tau);
CorrespondenceSet extract_matches(const ad::Tensor& p, double tau);

// Negative log-likelihood over ground-truth matches plus half-weighted
// unmatched terms per side, averaged over layers. Log arguments are clamped
// at 1e-7 and an empty set contributes nothing.
ad::Tensor match_loss(std::span<const LayerPrediction> layers, const CorrespondenceSet& gt);

FRUITLET_PRECISION_END
}  // namespace fruitlet
