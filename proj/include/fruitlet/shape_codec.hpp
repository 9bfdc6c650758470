#pragma once

#include <array>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "fruitlet/autodiff.hpp"
#include "fruitlet/geometry.hpp"
#include "fruitlet/params.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN

struct ShapeCodecConfig {
  static constexpr int kStages = 4;
  int resolution = 64;
  std::array<int, kStages> channels{8, 16, 32, 64};
  int descriptor_dim = 256;

  void validate() const;
  int bottleneck_side() const { return resolution >> kStages; }
};

struct ShapeDescriptor {
  std::vector<ad::Real> values;
};

// Max-pool occupancy pyramid of a voxel grid. Level k has side resolution >> k;
// level 0 is the grid itself.
struct OccupancyPyramid {
  int resolution = 0;
  std::vector<std::vector<uint8_t>> levels;

  int side(int level) const { return resolution >> level; }
  int stages() const { return static_cast<int>(levels.size()) - 1; }
};

OccupancyPyramid build_pyramid(const VoxelGrid& grid, int stages = ShapeCodecConfig::kStages);

// Sparse bookkeeping for evaluating the stride-2 encoder on occupied voxels
// only. Unoccupied voxels carry zero features, so restricting the
// convolutions to the active set reproduces the zero-masked dense grid.
struct EncoderInput {
  int resolution = 0;
  std::vector<std::vector<int64_t>> active;     // per level, sorted linear indices
  std::vector<std::vector<int64_t>> child_rows;  // per stage s >= 1: 8 rows into level s-1 per active voxel
};

EncoderInput prepare_encoder_input(const VoxelGrid& grid, int stages = ShapeCodecConfig::kStages);

// Decoder predictions for one upsampling stage. Voxels outside `active` were
// pruned upstream and carry probability zero.
struct DecoderStage {
  int level = 0;
  int side = 0;
  std::vector<int64_t> active;
  ad::Tensor probabilities;  // [active x 1]
};

struct DecoderOutput {
  std::vector<DecoderStage> stages;  // coarse to fine
};

class ShapeCodec {
 public:
  // Registers parameters under "shape_codec/enc/" (and "shape_codec/dec/"
  // when with_decoder is set).
  ShapeCodec(const ShapeCodecConfig& config, ParamStore& params, uint64_t seed, bool with_decoder = true);

  const ShapeCodecConfig& config() const { return config_; }
  bool has_decoder() const { return has_decoder_; }

  ad::Tensor encode(const EncoderInput& input) const;  // [1 x descriptor_dim]
  ad::Tensor encode(const VoxelGrid& grid) const;
  ShapeDescriptor describe(const VoxelGrid& grid) const;

  // With a teacher pyramid, pruning between stages follows ground-truth
  // occupancy; otherwise voxels with p < 0.5 are pruned.
  DecoderOutput decode(const ad::Tensor& descriptor, const OccupancyPyramid* teacher = nullptr) const;

 private:
  struct Norm {
    ad::Tensor gain, bias;
  };
  ad::Tensor normalize(const ad::Tensor& h, const Norm& norm) const;

  ShapeCodecConfig config_;
  bool has_decoder_;
  std::array<ad::Tensor, ShapeCodecConfig::kStages> enc_w_, enc_b_;
  std::array<Norm, ShapeCodecConfig::kStages> enc_norm_;
  ad::Tensor head_w_, head_b_;
  ad::Tensor fc_w_, fc_b_;
  Norm fc_norm_;
  std::array<ad::Tensor, ShapeCodecConfig::kStages> up_w_, up_b_, cls_w_, cls_b_;
  std::array<Norm, ShapeCodecConfig::kStages> up_norm_;
};

// Dense per-stage probability grids (coarse to fine), zero where pruned.
std::vector<std::vector<ad::Real>> dense_probabilities(const DecoderOutput& output);

// Mean binary cross-entropy per stage over every voxel of that stage's grid,
// averaged over stages. Probabilities are clamped to [1e-7, 1 - 1e-7].
double decoder_loss(const OccupancyPyramid& pyramid, std::span<const std::vector<ad::Real>> dense_predictions);

// Differentiable form of decoder_loss for a decoder output; pruned voxels
// contribute their constant clamped-zero term.
ad::Tensor decoder_loss(const OccupancyPyramid& pyramid, const DecoderOutput& output);

double occupancy_iou(std::span<const uint8_t> truth, std::span<const ad::Real> probabilities);

struct PretrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double base_lr = 1e-3;
  std::size_t decay_every_epochs = 50;
  double decay_factor = 0.1;
  uint64_t seed = 7;
};

struct PretrainResult {
  ParamStore params;  // best-validation codec parameters (encoder and decoder)
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
};

using CloudAugmenter = std::function<PointCloud(const PointCloud&, std::mt19937_64&)>;

// Adam with step-decay schedule; one fresh augmentation draw per sample per
// epoch. Validation uses the clouds as given.
PretrainResult pretrain_shape_codec(std::span<const PointCloud> train, std::span<const PointCloud> val,
                                    const ShapeCodecConfig& codec_config, const PretrainConfig& config,
                                    const CloudAugmenter& augment);

// normalize_cloud + voxelize.
VoxelGrid voxelize_fruitlet(const PointCloud& cloud, int resolution);

FRUITLET_PRECISION_END
}  // namespace fruitlet
