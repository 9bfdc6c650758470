#include "fruitlet/shape_codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fruitlet/error.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN

namespace {

constexpr double kProbFloor = 1e-7;
constexpr int kStages = ShapeCodecConfig::kStages;

int64_t linear_index(int x, int y, int z, int side) {
  return (static_cast<int64_t>(z) * side + y) * side + x;
}

void unpack(int64_t idx, int side, int& x, int& y, int& z) {
  x = static_cast<int>(idx % side);
  y = static_cast<int>((idx / side) % side);
  z = static_cast<int>(idx / (static_cast<int64_t>(side) * side));
}

std::vector<int64_t> active_of(const std::vector<uint8_t>& occupancy) {
  std::vector<int64_t> out;
  for (std::size_t i = 0; i < occupancy.size(); ++i)
    if (occupancy[i]) out.push_back(static_cast<int64_t>(i));
  return out;
}

// Decoder stage i (0-based, coarse to fine) output width.
int decoder_width(const ShapeCodecConfig& c, int i) { return c.channels[std::max(kStages - 2 - i, 0)]; }

double bce_term(double y, double p) {
  p = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

}  // namespace

void ShapeCodecConfig::validate() const {
  if (resolution <= 0 || resolution % (1 << kStages) != 0)
    throw std::invalid_argument("ShapeCodecConfig: resolution " + std::to_string(resolution) +
                                " must be a positive multiple of " + std::to_string(1 << kStages));
  for (int c : channels)
    if (c < 2) throw std::invalid_argument("ShapeCodecConfig: channel widths must be >= 2");
  if (descriptor_dim < 1) throw std::invalid_argument("ShapeCodecConfig: descriptor_dim must be positive");
}

OccupancyPyramid build_pyramid(const VoxelGrid& grid, int stages) {
  OccupancyPyramid pyr;
  pyr.resolution = grid.resolution;
  pyr.levels.push_back(grid.occupancy);
  for (int level = 1; level <= stages; ++level) {
    const int side = grid.resolution >> level;
    const int child_side = side * 2;
    const auto& child = pyr.levels.back();
    std::vector<uint8_t> parent(static_cast<std::size_t>(side) * side * side, 0);
    for (int z = 0; z < child_side; ++z)
      for (int y = 0; y < child_side; ++y)
        for (int x = 0; x < child_side; ++x)
          if (child[linear_index(x, y, z, child_side)]) parent[linear_index(x / 2, y / 2, z / 2, side)] = 1;
    pyr.levels.push_back(std::move(parent));
  }
  return pyr;
}

EncoderInput prepare_encoder_input(const VoxelGrid& grid, int stages) {
  if (grid.occupied_count() == 0) throw DataError("encoder input: grid has no occupied voxel");
  const OccupancyPyramid pyr = build_pyramid(grid, stages);
  EncoderInput in;
  in.resolution = grid.resolution;
  for (const auto& level : pyr.levels) in.active.push_back(active_of(level));
  in.child_rows.emplace_back();  // level 0 has no children
  for (int level = 1; level <= stages; ++level) {
    const int side = pyr.side(level), child_side = side * 2;
    std::vector<int64_t> row_of(pyr.levels[level - 1].size(), -1);
    const auto& below = in.active[level - 1];
    for (std::size_t r = 0; r < below.size(); ++r) row_of[below[r]] = static_cast<int64_t>(r);
    std::vector<int64_t> rows;
    rows.reserve(in.active[level].size() * 8);
    for (int64_t idx : in.active[level]) {
      int x, y, z;
      unpack(idx, side, x, y, z);
      for (int k = 0; k < 8; ++k)
        rows.push_back(row_of[linear_index(2 * x + (k & 1), 2 * y + ((k >> 1) & 1), 2 * z + ((k >> 2) & 1), child_side)]);
    }
    in.child_rows.push_back(std::move(rows));
  }
  return in;
}

ShapeCodec::ShapeCodec(const ShapeCodecConfig& config, ParamStore& params, uint64_t seed, bool with_decoder)
    : config_(config), has_decoder_(with_decoder) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto& ch = config_.channels;
  auto make_norm = [&](const std::string& name, int width) {
    return Norm{params.create_constant(name + "/gain", {1, static_cast<std::size_t>(width)}, ad::Real(1.0)),
                params.create_constant(name + "/bias", {1, static_cast<std::size_t>(width)}, ad::Real(0.0))};
  };
  int in_ch = 1;
  for (int s = 0; s < kStages; ++s) {
    const std::string base = "shape_codec/enc/stage" + std::to_string(s);
    enc_w_[s] = params.create_weight(base + "/weight", 8 * static_cast<std::size_t>(in_ch), ch[s], rng);
    enc_b_[s] = params.create_constant(base + "/bias", {1, static_cast<std::size_t>(ch[s])}, ad::Real(0.0));
    enc_norm_[s] = make_norm(base + "/norm", ch[s]);
    in_ch = ch[s];
  }
  head_w_ = params.create_weight("shape_codec/enc/head/weight", ch[kStages - 1], config_.descriptor_dim, rng);
  head_b_ = params.create_constant("shape_codec/enc/head/bias", {1, static_cast<std::size_t>(config_.descriptor_dim)}, ad::Real(0.0));
  if (!with_decoder) return;

  const std::size_t cells = static_cast<std::size_t>(std::pow(config_.bottleneck_side(), 3));
  const std::size_t top = ch[kStages - 1];
  fc_w_ = params.create_weight("shape_codec/dec/fc/weight", config_.descriptor_dim, cells * top, rng);
  fc_b_ = params.create_constant("shape_codec/dec/fc/bias", {1, cells * top}, ad::Real(0.0));
  fc_norm_ = make_norm("shape_codec/dec/fc/norm", static_cast<int>(top));
  int width = static_cast<int>(top);
  for (int i = 0; i < kStages; ++i) {
    const std::string base = "shape_codec/dec/stage" + std::to_string(i);
    const int out = decoder_width(config_, i);
    up_w_[i] = params.create_weight(base + "/weight", width, 8 * static_cast<std::size_t>(out), rng);
    up_b_[i] = params.create_constant(base + "/bias", {1, static_cast<std::size_t>(out)}, ad::Real(0.0));
    up_norm_[i] = make_norm(base + "/norm", out);
    cls_w_[i] = params.create_weight(base + "/classifier/weight", out, 1, rng);
    cls_b_[i] = params.create_constant(base + "/classifier/bias", {1, 1}, ad::Real(0.0));
    width = out;
  }
}

// Layer normalization over every active voxel and channel of one sample,
// followed by a per-channel affine map.
ad::Tensor ShapeCodec::normalize(const ad::Tensor& h, const Norm& norm) const {
  if (h.rows() == 0) return h;
  const ad::Shape shape = h.shape();
  ad::Tensor flat = ad::layer_norm(ad::reshape(h, {1, h.numel()}));
  return ad::add(ad::mul(ad::reshape(flat, shape), norm.gain), norm.bias);
}

ad::Tensor ShapeCodec::encode(const EncoderInput& input) const {
  if (input.resolution != config_.resolution)
    throw std::invalid_argument("ShapeCodec::encode: grid resolution " + std::to_string(input.resolution) +
                                " does not match codec resolution " + std::to_string(config_.resolution));
  ad::Tensor h = ad::Tensor::filled({input.active[0].size(), 1}, ad::Real(1.0));
  for (int s = 0; s < kStages; ++s) {
    ad::Tensor gathered = ad::gather_rows(h, input.child_rows[s + 1], 8);
    h = ad::relu(normalize(ad::linear(gathered, enc_w_[s], enc_b_[s]), enc_norm_[s]));
  }
  return ad::linear(ad::mean(h, 0), head_w_, head_b_);
}

ad::Tensor ShapeCodec::encode(const VoxelGrid& grid) const { return encode(prepare_encoder_input(grid)); }

ShapeDescriptor ShapeCodec::describe(const VoxelGrid& grid) const {
  ad::NoGradGuard guard;
  const ad::Tensor d = encode(grid);
  return {{d.data().begin(), d.data().end()}};
}

DecoderOutput ShapeCodec::decode(const ad::Tensor& descriptor, const OccupancyPyramid* teacher) const {
  if (!has_decoder_) throw std::logic_error("ShapeCodec::decode: decoder was not constructed");
  if (descriptor.rank() != 2 || descriptor.rows() != 1 ||
      descriptor.cols() != static_cast<std::size_t>(config_.descriptor_dim))
    throw ShapeError("ShapeCodec::decode: descriptor shape " + ad::shape_str(descriptor.shape()));
  if (teacher && teacher->resolution != config_.resolution)
    throw std::invalid_argument("ShapeCodec::decode: teacher pyramid resolution mismatch");

  const int bside = config_.bottleneck_side();
  const std::size_t top = config_.channels[kStages - 1];
  std::vector<int64_t> parents(static_cast<std::size_t>(bside) * bside * bside);
  std::iota(parents.begin(), parents.end(), int64_t{0});
  ad::Tensor h = ad::reshape(ad::linear(descriptor, fc_w_, fc_b_), {parents.size(), top});
  h = ad::relu(normalize(h, fc_norm_));

  DecoderOutput out;
  int parent_side = bside;
  for (int i = 0; i < kStages; ++i) {
    const int side = parent_side * 2;
    const int level = kStages - 1 - i;
    const auto out_w = static_cast<std::size_t>(decoder_width(config_, i));
    DecoderStage stage;
    stage.level = level;
    stage.side = side;

    // Children of every surviving parent, sorted by linear index.
    std::vector<std::pair<int64_t, int64_t>> children;  // (linear index, parent_row * 8 + offset)
    children.reserve(parents.size() * 8);
    for (std::size_t r = 0; r < parents.size(); ++r) {
      int x, y, z;
      unpack(parents[r], parent_side, x, y, z);
      for (int k = 0; k < 8; ++k)
        children.emplace_back(linear_index(2 * x + (k & 1), 2 * y + ((k >> 1) & 1), 2 * z + ((k >> 2) & 1), side),
                              static_cast<int64_t>(r * 8 + k));
    }
    std::sort(children.begin(), children.end());
    std::vector<int64_t> rows;
    rows.reserve(children.size());
    for (const auto& [idx, row] : children) {
      stage.active.push_back(idx);
      rows.push_back(row);
    }

    if (children.empty()) {
      stage.probabilities = ad::Tensor::zeros({0, 1});
      out.stages.push_back(std::move(stage));
      parents.clear();
      parent_side = side;
      continue;
    }
    ad::Tensor up = ad::reshape(ad::matmul(h, up_w_[i]), {h.rows() * 8, out_w});
    ad::Tensor feat = ad::add(ad::gather_rows(up, rows, 1), up_b_[i]);
    feat = ad::relu(normalize(feat, up_norm_[i]));
    stage.probabilities = ad::sigmoid(ad::linear(feat, cls_w_[i], cls_b_[i]));

    // Pruning for the next stage.
    std::vector<int64_t> keep_rows;
    parents.clear();
    const auto probs = stage.probabilities.data();
    for (std::size_t r = 0; r < stage.active.size(); ++r) {
      const bool keep = teacher ? teacher->levels[level][stage.active[r]] != 0 : probs[r] >= ad::Real(0.5);
      if (keep) {
        keep_rows.push_back(static_cast<int64_t>(r));
        parents.push_back(stage.active[r]);
      }
    }
    if (i + 1 < kStages && !keep_rows.empty()) h = ad::gather_rows(feat, keep_rows, 1);
    out.stages.push_back(std::move(stage));
    parent_side = side;
  }
  return out;
}

std::vector<std::vector<ad::Real>> dense_probabilities(const DecoderOutput& output) {
  std::vector<std::vector<ad::Real>> grids;
  for (const auto& stage : output.stages) {
    std::vector<ad::Real> g(static_cast<std::size_t>(stage.side) * stage.side * stage.side, ad::Real(0.0));
    const auto p = stage.probabilities.data();
    for (std::size_t r = 0; r < stage.active.size(); ++r) g[stage.active[r]] = p[r];
    grids.push_back(std::move(g));
  }
  return grids;
}

double decoder_loss(const OccupancyPyramid& pyramid, std::span<const std::vector<ad::Real>> dense_predictions) {
  const int stages = pyramid.stages();
  if (static_cast<int>(dense_predictions.size()) != stages)
    throw std::invalid_argument("decoder_loss: " + std::to_string(dense_predictions.size()) +
                                " prediction stages for a pyramid with " + std::to_string(stages));
  double total = 0.0;
  for (int i = 0; i < stages; ++i) {
    const auto& truth = pyramid.levels[stages - 1 - i];
    const auto& pred = dense_predictions[i];
    if (pred.size() != truth.size()) throw std::invalid_argument("decoder_loss: stage size mismatch");
    double stage_sum = 0.0;
    for (std::size_t v = 0; v < truth.size(); ++v) stage_sum += bce_term(truth[v], pred[v]);
    total += stage_sum / static_cast<double>(truth.size());
  }
  return total / stages;
}

ad::Tensor decoder_loss(const OccupancyPyramid& pyramid, const DecoderOutput& output) {
  const int stages = pyramid.stages();
  if (static_cast<int>(output.stages.size()) != stages)
    throw std::invalid_argument("decoder_loss: stage count mismatch");
  const double pruned_pos = -std::log(kProbFloor);
  const double pruned_neg = -std::log1p(-kProbFloor);
  ad::Tensor total;
  double constant = 0.0;
  for (int i = 0; i < stages; ++i) {
    const auto& stage = output.stages[i];
    const auto& truth = pyramid.levels[stage.level];
    const double n_voxels = static_cast<double>(truth.size());
    std::size_t active_pos = 0;
    std::vector<ad::Real> y(stage.active.size()), not_y(stage.active.size());
    for (std::size_t r = 0; r < stage.active.size(); ++r) {
      y[r] = truth[stage.active[r]] ? ad::Real(1.0) : ad::Real(0.0);
      not_y[r] = ad::Real(1.0) - y[r];
      active_pos += truth[stage.active[r]] ? 1 : 0;
    }
    const std::size_t all_pos = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), uint8_t{1}));
    const std::size_t pruned = truth.size() - stage.active.size();
    const std::size_t pruned_p = all_pos - active_pos;
    constant += (pruned_p * pruned_pos + (pruned - pruned_p) * pruned_neg) / n_voxels;
    if (stage.active.empty()) continue;

    const ad::Tensor p = ad::clamp(stage.probabilities, static_cast<ad::Real>(kProbFloor),
                                   static_cast<ad::Real>(1.0 - kProbFloor));
    const std::size_t rows = y.size();
    const ad::Tensor yt = ad::Tensor::from({rows, 1}, std::move(y));
    const ad::Tensor nyt = ad::Tensor::from({rows, 1}, std::move(not_y));
    const ad::Tensor log_not_p = ad::log(ad::add_scalar(ad::scale(p, -ad::Real(1.0)), ad::Real(1.0)));
    const ad::Tensor ll = ad::add(ad::mul(ad::log(p), yt), ad::mul(log_not_p, nyt));
    const ad::Tensor term = ad::scale(ad::sum(ll), static_cast<ad::Real>(-1.0 / n_voxels));
    total = total.defined() ? ad::add(total, term) : term;
  }
  ad::Tensor c = ad::Tensor::scalar(static_cast<ad::Real>(constant));
  total = total.defined() ? ad::add(total, c) : c;
  return ad::scale(total, ad::Real(1.0) / static_cast<ad::Real>(stages));
}

double occupancy_iou(std::span<const uint8_t> truth, std::span<const ad::Real> probabilities) {
  if (truth.size() != probabilities.size()) throw std::invalid_argument("occupancy_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool a = truth[i] != 0, b = probabilities[i] >= ad::Real(0.5);
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

VoxelGrid voxelize_fruitlet(const PointCloud& cloud, int resolution) {
  return voxelize(normalize_cloud(cloud).cloud, resolution);
}

PretrainResult pretrain_shape_codec(std::span<const PointCloud> train, std::span<const PointCloud> val,
                                    const ShapeCodecConfig& codec_config, const PretrainConfig& config,
                                    const CloudAugmenter& augment) {
  if (train.empty()) throw DataError("pretrain_shape_codec: empty training set");
  if (config.batch_size == 0 || config.epochs == 0)
    throw std::invalid_argument("pretrain_shape_codec: epochs and batch size must be positive");
  ParamStore params;
  ShapeCodec codec(codec_config, params, config.seed, true);
  AdamState adam;
  std::mt19937_64 rng(ad::mix_key(config.seed, 0x5ba9e, 1));

  struct Prepared {
    OccupancyPyramid pyramid;
    EncoderInput input;
  };
  auto prepare = [&](const PointCloud& cloud) {
    const VoxelGrid grid = voxelize_fruitlet(cloud, codec_config.resolution);
    return Prepared{build_pyramid(grid), prepare_encoder_input(grid)};
  };
  std::vector<Prepared> val_set;
  for (const auto& c : val) val_set.push_back(prepare(c));

  LrScheduleConfig schedule;
  schedule.base_lr = config.base_lr;
  schedule.steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  schedule.total_epochs = config.epochs;
  schedule.decay_every_epochs = config.decay_every_epochs;
  schedule.decay_factor = config.decay_factor;

  PretrainResult result;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const PointCloud& raw = train[order[k]];
        Prepared sample;
        try {
          sample = prepare(augment ? augment(raw, rng) : raw);
        } catch (const NumericError&) {
          sample = prepare(raw);
        }
        const DecoderOutput out = codec.decode(codec.encode(sample.input), &sample.pyramid);
        const ad::Tensor loss = decoder_loss(sample.pyramid, out);
        epoch_loss += loss.item();
        ad::backward(ad::scale(loss, ad::Real(1.0) / static_cast<ad::Real>(end - start)));
      }
      adam_step(params, adam, lr_schedule(LrScheduleKind::StepDecay, step, schedule));
      ++step;
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));

    double val_loss = result.train_loss.back();
    if (!val_set.empty()) {
      ad::NoGradGuard guard;
      double sum = 0.0;
      for (const auto& s : val_set) sum += decoder_loss(s.pyramid, codec.decode(codec.encode(s.input), &s.pyramid)).item();
      val_loss = sum / static_cast<double>(val_set.size());
    }
    result.val_loss.push_back(val_loss);
    if (val_loss < best) {
      best = val_loss;
      result.best_epoch = epoch;
      result.params = params.clone();
    }
  }
  return result;
}

FRUITLET_PRECISION_END
}  // namespace fruitlet
