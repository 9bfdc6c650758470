#include "fruitlet/matcher.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "fruitlet/error.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN

namespace {

constexpr ad::Real kLogFloor = ad::Real(1e-7);

// Dropout sites within one layer.
enum Site : uint64_t { kSelfAttnT, kSelfAttnT1, kSelfFfnT, kSelfFfnT1, kCrossAttnT, kCrossAttnT1, kCrossFfnT, kCrossFfnT1 };
constexpr uint64_t kSitesPerLayer = 16;

bool empty_rows(const ad::Tensor& x) { return x.rank() != 2 || x.rows() == 0; }

ad::Tensor log_clamped(const ad::Tensor& x) { return ad::log(ad::clamp(x, kLogFloor, ad::Real(1.0))); }

}  // namespace

void MatcherConfig::validate() const {
  if (layers == 0) throw UsageError("matcher: layers must be positive");
  if (heads == 0 || feature_dim == 0 || feature_dim % heads != 0)
    throw UsageError("matcher: feature_dim " + std::to_string(feature_dim) + " must be a positive multiple of heads " +
                     std::to_string(heads));
  if (ffn_dim == 0) throw UsageError("matcher: ffn_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("matcher: dropout must lie in [0, 1)");
  if (!(match_threshold > 0.0 && match_threshold < 1.0)) throw UsageError("matcher: match_threshold must lie in (0, 1)");
}

Matcher::Matcher(const MatcherConfig& config, ParamStore& params, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.feature_dim;
  auto affine = [&](const std::string& name, std::size_t in, std::size_t out) {
    return Affine{params.create_weight(name + "/weight", in, out, rng),
                  params.create_constant(name + "/bias", {1, out}, ad::Real(0.0))};
  };
  auto norm = [&](const std::string& name) {
    return Norm{params.create_constant(name + "/gain", {1, d}, ad::Real(1.0)),
                params.create_constant(name + "/bias", {1, d}, ad::Real(0.0))};
  };
  auto block = [&](const std::string& base) {
    Block b;
    b.attn_norm = norm(base + "/attn_norm");
    b.q = affine(base + "/q", d, d);
    b.k = affine(base + "/k", d, d);
    b.v = affine(base + "/v", d, d);
    b.o = affine(base + "/o", d, d);
    b.ffn_norm = norm(base + "/ffn_norm");
    b.fc1 = affine(base + "/ffn/fc1", d, config_.ffn_dim);
    b.fc2 = affine(base + "/ffn/fc2", config_.ffn_dim, d);
    return b;
  };
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string base = "matcher/layer" + std::to_string(l);
    Layer layer;
    layer.self = block(base + "/self");
    layer.cross = block(base + "/cross");
    layer.score = affine(base + "/head/score", d, d);
    layer.match = affine(base + "/head/match", d, 1);
    layers_.push_back(std::move(layer));
  }
}

ad::Tensor Matcher::drop(const ad::Tensor& x, const ForwardContext& ctx, uint64_t site) const {
  if (!ctx.training || config_.dropout == 0.0) return x;
  const uint64_t key = ad::mix_key(ad::mix_key(ctx.seed, ctx.step, ctx.sample), site, 0);
  return ad::dropout(x, static_cast<ad::Real>(config_.dropout), true, key);
}

ad::Tensor Matcher::attention(const Block& b, const ad::Tensor& query, const ad::Tensor& context) const {
  const std::size_t h = config_.heads, dh = config_.feature_dim / h;
  const ad::Tensor q = ad::linear(query, b.q.weight, b.q.bias);
  const ad::Tensor k = ad::linear(context, b.k.weight, b.k.bias);
  const ad::Tensor v = ad::linear(context, b.v.weight, b.v.bias);
  const ad::Real inv_sqrt = static_cast<ad::Real>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<ad::Tensor> heads;
  heads.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    const ad::Tensor qh = ad::slice(q, 1, i * dh, (i + 1) * dh);
    const ad::Tensor kh = ad::slice(k, 1, i * dh, (i + 1) * dh);
    const ad::Tensor vh = ad::slice(v, 1, i * dh, (i + 1) * dh);
    const ad::Tensor weights = ad::softmax(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt), 1);
    heads.push_back(ad::matmul(weights, vh));
  }
  const ad::Tensor merged = h == 1 ? heads.front() : ad::concat(heads, 1);
  return ad::linear(merged, b.o.weight, b.o.bias);
}

ad::Tensor Matcher::feed_forward(const Block& b, const ad::Tensor& x, const ForwardContext& ctx,
                                 uint64_t site) const {
  const ad::Tensor n = ad::add(ad::mul(ad::layer_norm(x), b.ffn_norm.gain), b.ffn_norm.bias);
  const ad::Tensor y = ad::linear(ad::gelu(ad::linear(n, b.fc1.weight, b.fc1.bias)), b.fc2.weight, b.fc2.bias);
  return ad::add(x, drop(y, ctx, site));
}

std::pair<ad::Tensor, ad::Tensor> Matcher::encoder_layer(std::size_t layer, const ad::Tensor& x_t,
                                                         const ad::Tensor& x_t1, const ForwardContext& ctx) const {
  const Layer& L = layers_.at(layer);
  const uint64_t base = layer * kSitesPerLayer;
  for (const ad::Tensor* x : {&x_t, &x_t1})
    if (x->rank() != 2 || x->cols() != config_.feature_dim)
      throw ShapeError("matcher: features " + ad::shape_str(x->shape()) + " do not have width " +
                       std::to_string(config_.feature_dim));
  auto norm = [](const Norm& n, const ad::Tensor& x) { return ad::add(ad::mul(ad::layer_norm(x), n.gain), n.bias); };

  ad::Tensor a = x_t, b = x_t1;
  if (!empty_rows(a)) {
    const ad::Tensor n = norm(L.self.attn_norm, a);
    a = feed_forward(L.self, ad::add(a, drop(attention(L.self, n, n), ctx, base + kSelfAttnT)), ctx,
                     base + kSelfFfnT);
  }
  if (!empty_rows(b)) {
    const ad::Tensor n = norm(L.self.attn_norm, b);
    b = feed_forward(L.self, ad::add(b, drop(attention(L.self, n, n), ctx, base + kSelfAttnT1)), ctx,
                     base + kSelfFfnT1);
  }
  if (empty_rows(a) || empty_rows(b)) return {a, b};

  const ad::Tensor na = norm(L.cross.attn_norm, a);
  const ad::Tensor nb = norm(L.cross.attn_norm, b);
  const ad::Tensor ca = ad::add(a, drop(attention(L.cross, na, nb), ctx, base + kCrossAttnT));
  const ad::Tensor cb = ad::add(b, drop(attention(L.cross, nb, na), ctx, base + kCrossAttnT1));
  return {feed_forward(L.cross, ca, ctx, base + kCrossFfnT), feed_forward(L.cross, cb, ctx, base + kCrossFfnT1)};
}

ad::Tensor Matcher::score_matrix(std::size_t layer, const ad::Tensor& x_t, const ad::Tensor& x_t1) const {
  if (empty_rows(x_t) || empty_rows(x_t1))
    return ad::Tensor::zeros({x_t.rank() == 2 ? x_t.rows() : 0, x_t1.rank() == 2 ? x_t1.rows() : 0});
  const Affine& s = layers_.at(layer).score;
  const ad::Tensor pa = ad::linear(x_t, s.weight, s.bias);
  const ad::Tensor pb = ad::linear(x_t1, s.weight, s.bias);
  const ad::Real inv_sqrt = static_cast<ad::Real>(1.0 / std::sqrt(static_cast<double>(config_.feature_dim)));
  return ad::scale(ad::matmul(pa, ad::transpose(pb)), inv_sqrt);
}

ad::Tensor Matcher::matchability(std::size_t layer, const ad::Tensor& x) const {
  if (empty_rows(x)) return ad::Tensor::zeros({0, 1});
  const Affine& m = layers_.at(layer).match;
  return ad::sigmoid(ad::linear(x, m.weight, m.bias));
}

MatcherOutput Matcher::forward(const ad::Tensor& x_t, const ad::Tensor& x_t1, const ForwardContext& ctx) const {
  MatcherOutput out;
  ad::Tensor a = x_t, b = x_t1;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    std::tie(a, b) = encoder_layer(l, a, b, ctx);
    LayerPrediction pred;
    pred.scores = score_matrix(l, a, b);
    pred.sigma_t = matchability(l, a);
    pred.sigma_t1 = matchability(l, b);
    pred.assignment = partial_assignment(pred.scores, pred.sigma_t, pred.sigma_t1);
    out.layers.push_back(std::move(pred));
  }
  out.features_t = a;
  out.features_t1 = b;
  return out;
}

ad::Tensor partial_assignment(const ad::Tensor& scores, const ad::Tensor& sigma_t, const ad::Tensor& sigma_t1) {
  if (scores.rank() != 2 || sigma_t.shape() != ad::Shape{scores.rows(), 1} ||
      sigma_t1.shape() != ad::Shape{scores.cols(), 1})
    throw ShapeError("partial_assignment: scores " + ad::shape_str(scores.shape()) + " vs matchabilities " +
                     ad::shape_str(sigma_t.shape()) + " and " + ad::shape_str(sigma_t1.shape()));
  if (scores.numel() == 0) return ad::Tensor::zeros(scores.shape());
  const ad::Tensor dual = ad::mul(ad::softmax(scores, 1), ad::softmax(scores, 0));
  return ad::mul(ad::mul(dual, sigma_t), ad::transpose(sigma_t1));
}

CorrespondenceSet extract_matches(std::span<const ad::Real> p, std::size_t m, std::size_t n, double tau) {
  const std::vector<double> wide(p.begin(), p.end());
  return mutual_max_matches(wide, m, n, tau);
}

CorrespondenceSet extract_matches(const ad::Tensor& p, double tau) {
  if (p.rank() != 2) throw ShapeError("extract_matches: expected a matrix, got " + ad::shape_str(p.shape()));
  return extract_matches(p.data(), p.rows(), p.cols(), tau);
}

ad::Tensor match_loss(std::span<const LayerPrediction> layers, const CorrespondenceSet& gt) {
  if (layers.empty()) throw std::invalid_argument("match_loss: no layer predictions");
  ad::Tensor total;
  auto accumulate = [&](const ad::Tensor& t) { total = total.defined() ? ad::add(total, t) : t; };
  for (const auto& pred : layers) {
    const std::size_t m = pred.assignment.rows(), n = pred.assignment.cols();
    if (gt.m != m || gt.n != n)
      throw std::invalid_argument("match_loss: ground truth is " + std::to_string(gt.m) + " x " +
                                  std::to_string(gt.n) + " but predictions are " + std::to_string(m) + " x " +
                                  std::to_string(n));
    if (const std::string problem = gt.validate(); !problem.empty())
      throw std::invalid_argument("match_loss: invalid ground truth: " + problem);
    if (!gt.matches.empty()) {
      std::vector<int64_t> idx;
      for (const auto& [i, j] : gt.matches) idx.push_back(static_cast<int64_t>(i * n + j));
      const ad::Tensor picked = ad::gather_rows(ad::reshape(pred.assignment, {m * n, 1}), idx, 1);
      accumulate(ad::mean(log_clamped(picked)));
    }
    auto unmatched_term = [&](const ad::Tensor& sigma, const std::vector<std::size_t>& unmatched) {
      if (unmatched.empty()) return;
      const std::vector<int64_t> idx(unmatched.begin(), unmatched.end());
      const ad::Tensor s = ad::gather_rows(sigma, idx, 1);
      accumulate(ad::scale(ad::mean(log_clamped(ad::add_scalar(ad::scale(s, ad::Real(-1.0)), ad::Real(1.0)))),
                           ad::Real(0.5)));
    };
    unmatched_term(pred.sigma_t, gt.unmatched_t);
    unmatched_term(pred.sigma_t1, gt.unmatched_t1);
  }
  if (!total.defined()) return ad::Tensor::scalar(ad::Real(0.0));
  return ad::scale(total, static_cast<ad::Real>(-1.0 / static_cast<double>(layers.size())));
}

FRUITLET_PRECISION_END
}  // namespace fruitlet
