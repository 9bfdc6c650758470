#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fruitlet/cluster.hpp"
#include "fruitlet/descriptors.hpp"
#include "fruitlet/evaluation.hpp"
#include "fruitlet/matcher.hpp"
#include "fruitlet/metrics.hpp"
#include "fruitlet/params.hpp"
#include "fruitlet/shape_codec.hpp"
#include "fruitlet/synth.hpp"
#include "json.hpp"

namespace fruitlet {

FRUITLET_PRECISION_BEGIN

struct ModelConfig {
  ShapeCodecConfig codec;
  MatcherConfig matcher;
  PositionalMode positional_mode = PositionalMode::MedianZ;
  double positional_input_scale = 100.0;
  Ablation ablation = Ablation::None;
  uint64_t init_seed = 7;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Throws DataError naming both values of the first differing dimension.
void check_compatible(const ModelConfig& expected, const ModelConfig& found);

struct PreparedFruitlet {
  EncoderInput voxels;
  PositionalKeypoints keypoints;
};

struct PreparedPair {
  std::vector<PreparedFruitlet> day_t, day_t1;
};

PreparedFruitlet prepare_fruitlet(const PointCloud& centered, const ModelConfig& config);
// Expects a preprocessed (filtered, centered) pair.
PreparedPair prepare_pair(const LabeledClusterPair& pair, const ModelConfig& config);

// Shape encoder, positional MLP, fusion and matcher over one parameter store.
// The ablation decides which descriptor branches exist.
class FruitletModel {
 public:
  explicit FruitletModel(const ModelConfig& config);
  FruitletModel(const FruitletModel&) = delete;
  FruitletModel& operator=(const FruitletModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  double match_threshold() const { return config_.matcher.match_threshold; }
  void set_match_threshold(double tau);

  bool uses_shape() const { return config_.ablation != Ablation::NoShape; }
  bool uses_position() const { return config_.ablation != Ablation::NoPos; }

  ad::Tensor initial_features(std::span<const PreparedFruitlet> fruitlets) const;  // [n x d]
  MatcherOutput forward(const PreparedPair& pair, const ForwardContext& ctx) const;
  std::vector<double> final_assignment(const PreparedPair& pair) const;  // row-major, eval mode
  CorrespondenceSet match(const PreparedPair& pair) const;

  // Copies "shape_codec/enc/" tensors from a pre-trained codec.
  void load_pretrained_encoder(const ParamStore& encoder);

  nlohmann::json checkpoint_config() const;
  static std::unique_ptr<FruitletModel> from_checkpoint(const nlohmann::json& config, const ParamStore& params);

 private:
  ModelConfig config_;
  ParamStore params_;
  std::optional<ShapeCodec> codec_;
  std::optional<PositionalMlp> positional_;
  std::optional<FeatureFusion> fusion_;
  std::optional<Matcher> matcher_;
};

struct CodecPretrainOptions {
  PretrainConfig schedule;
  ShapeAugmentConfig augment;
  std::size_t max_train_clouds = 0;  // 0 keeps every fruitlet
  std::size_t max_val_clouds = 0;
};

// Pre-trains on the fruitlets of preprocessed pairs; returns the encoder
// tensors only (the decoder is discarded).
ParamStore pretrain_encoder(std::span<const LabeledClusterPair> train, std::span<const LabeledClusterPair> val,
                            const ShapeCodecConfig& codec, const CodecPretrainOptions& options,
                            PretrainResult* details = nullptr);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  double base_lr = 1e-4;
  std::size_t warmup_epochs = 10;
  uint64_t seed = 7;
  bool augment = true;
  ClusterAugmentConfig augmentation;
  double tau_lo = 0.01, tau_hi = 0.5, tau_step = 0.01;
};

struct TrainResult {
  std::vector<double> train_loss;  // mean match loss per epoch
  std::vector<double> val_f1;      // best swept F1 per epoch
  std::size_t best_epoch = 0;
  double best_f1 = -1.0;
  double best_tau = 0.1;
};

// Trains every parameter of the model on preprocessed pairs. The model ends
// holding the best-validation parameters and threshold.
TrainResult train_matcher(FruitletModel& model, std::span<const LabeledClusterPair> train,
                          std::span<const LabeledClusterPair> val, const TrainConfig& config,
                          const ProgressLog& log = {});

ThresholdSweep sweep_model_threshold(const FruitletModel& model, std::span<const LabeledClusterPair> val,
                                     double lo = 0.01, double hi = 0.5, double step = 0.01);

// Pairs without ground truth are skipped and counted.
EvalReport evaluate_model(const FruitletModel& model, std::span<const LabeledClusterPair> pairs,
                          const std::string& method = "transformer");

FRUITLET_PRECISION_END

}  // namespace fruitlet
