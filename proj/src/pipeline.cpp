#include "fruitlet/pipeline.hpp"

#include <algorithm>
#include <numeric>

#include "fruitlet/error.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN

using nlohmann::json;

namespace {

// Stream ids for derived RNG keys.
constexpr uint64_t kShuffleStream = 0x5f0f;
constexpr uint64_t kAugmentStream = 0xa49e;

std::vector<double> widen(std::span<const ad::Real> values) { return {values.begin(), values.end()}; }

}  // namespace

json ModelConfig::to_json() const {
  return {{"codec",
           {{"resolution", codec.resolution},
            {"channels", codec.channels},
            {"descriptor_dim", codec.descriptor_dim}}},
          {"matcher",
           {{"layers", matcher.layers},
            {"heads", matcher.heads},
            {"feature_dim", matcher.feature_dim},
            {"ffn_dim", matcher.ffn_dim},
            {"dropout", matcher.dropout},
            {"match_threshold", matcher.match_threshold}}},
          {"positional_mode", std::string(to_string(positional_mode))},
          {"positional_input_scale", positional_input_scale},
          {"ablation", std::string(to_string(ablation))},
          {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  try {
    ModelConfig c;
    const json& codec = j.at("codec");
    c.codec.resolution = codec.at("resolution").get<int>();
    c.codec.channels = codec.at("channels").get<std::array<int, ShapeCodecConfig::kStages>>();
    c.codec.descriptor_dim = codec.at("descriptor_dim").get<int>();
    const json& m = j.at("matcher");
    c.matcher.layers = m.at("layers").get<std::size_t>();
    c.matcher.heads = m.at("heads").get<std::size_t>();
    c.matcher.feature_dim = m.at("feature_dim").get<std::size_t>();
    c.matcher.ffn_dim = m.at("ffn_dim").get<std::size_t>();
    c.matcher.dropout = m.at("dropout").get<double>();
    c.matcher.match_threshold = m.at("match_threshold").get<double>();
    c.positional_mode = parse_positional_mode(j.at("positional_mode").get<std::string>());
    c.positional_input_scale = j.at("positional_input_scale").get<double>();
    c.ablation = parse_ablation(j.at("ablation").get<std::string>());
    c.init_seed = j.at("init_seed").get<uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
}

void check_compatible(const ModelConfig& expected, const ModelConfig& found) {
  auto same = [](const char* name, const auto& want, const auto& got) {
    if (want != got)
      throw DataError(std::string("checkpoint/config mismatch in ") + name + ": checkpoint has " + json(got).dump() +
                      ", configuration expects " + json(want).dump());
  };
  same("codec.resolution", expected.codec.resolution, found.codec.resolution);
  same("codec.channels", expected.codec.channels, found.codec.channels);
  same("codec.descriptor_dim", expected.codec.descriptor_dim, found.codec.descriptor_dim);
  same("matcher.layers", expected.matcher.layers, found.matcher.layers);
  same("matcher.heads", expected.matcher.heads, found.matcher.heads);
  same("matcher.feature_dim", expected.matcher.feature_dim, found.matcher.feature_dim);
  same("matcher.ffn_dim", expected.matcher.ffn_dim, found.matcher.ffn_dim);
  same("positional_mode", std::string(to_string(expected.positional_mode)),
       std::string(to_string(found.positional_mode)));
  same("ablation", std::string(to_string(expected.ablation)), std::string(to_string(found.ablation)));
}

PreparedFruitlet prepare_fruitlet(const PointCloud& centered, const ModelConfig& config) {
  PreparedFruitlet out;
  out.voxels = prepare_encoder_input(voxelize_fruitlet(centered, config.codec.resolution));
  out.keypoints = positional_keypoints(centered, config.positional_mode);
  return out;
}

PreparedPair prepare_pair(const LabeledClusterPair& pair, const ModelConfig& config) {
  PreparedPair out;
  for (const auto& f : pair.day_t.fruitlets) out.day_t.push_back(prepare_fruitlet(f.cloud, config));
  for (const auto& f : pair.day_t1.fruitlets) out.day_t1.push_back(prepare_fruitlet(f.cloud, config));
  return out;
}

FruitletModel::FruitletModel(const ModelConfig& config) : config_(config) {
  config_.codec.validate();
  config_.matcher.validate();
  std::mt19937_64 rng(config_.init_seed);
  if (uses_shape()) {
    codec_.emplace(config_.codec, params_, config_.init_seed, false);
    fusion_.emplace(static_cast<std::size_t>(config_.codec.descriptor_dim), config_.matcher.feature_dim, params_, rng);
  }
  if (uses_position())
    positional_.emplace(config_.positional_mode, config_.matcher.feature_dim, params_, rng,
                        config_.positional_input_scale);
  matcher_.emplace(config_.matcher, params_, rng);
}

void FruitletModel::set_match_threshold(double tau) {
  MatcherConfig m = config_.matcher;
  m.match_threshold = tau;
  m.validate();
  config_.matcher.match_threshold = tau;
}

ad::Tensor FruitletModel::initial_features(std::span<const PreparedFruitlet> fruitlets) const {
  if (fruitlets.empty()) return ad::Tensor::zeros({0, config_.matcher.feature_dim});
  std::vector<ad::Tensor> rows;
  rows.reserve(fruitlets.size());
  for (const auto& f : fruitlets) {
    if (!uses_shape()) {
      rows.push_back(positional_->forward(f.keypoints));
      continue;
    }
    const ad::Tensor d = codec_->encode(f.voxels);
    rows.push_back(uses_position() ? fusion_->forward(d, positional_->forward(f.keypoints)) : fusion_->project(d));
  }
  return rows.size() == 1 ? rows.front() : ad::concat(rows, 0);
}

MatcherOutput FruitletModel::forward(const PreparedPair& pair, const ForwardContext& ctx) const {
  return matcher_->forward(initial_features(pair.day_t), initial_features(pair.day_t1), ctx);
}

std::vector<double> FruitletModel::final_assignment(const PreparedPair& pair) const {
  ad::NoGradGuard guard;
  return widen(forward(pair, {}).final_layer().assignment.data());
}

CorrespondenceSet FruitletModel::match(const PreparedPair& pair) const {
  return mutual_max_matches(final_assignment(pair), pair.day_t.size(), pair.day_t1.size(), match_threshold());
}

void FruitletModel::load_pretrained_encoder(const ParamStore& encoder) {
  if (!uses_shape()) return;
  params_.assign_from(encoder, "shape_codec/enc/");
}

json FruitletModel::checkpoint_config() const { return {{"kind", "matcher_model"}, {"model", config_.to_json()}}; }

std::unique_ptr<FruitletModel> FruitletModel::from_checkpoint(const json& config, const ParamStore& params) {
  if (!config.contains("kind") || config["kind"] != "matcher_model" || !config.contains("model"))
    throw DataError("checkpoint does not hold a matcher model");
  auto model = std::make_unique<FruitletModel>(ModelConfig::from_json(config["model"]));
  if (params.tensors().size() != model->params_.tensors().size())
    throw DataError("checkpoint holds " + std::to_string(params.tensors().size()) + " tensors, model expects " +
                    std::to_string(model->params_.tensors().size()));
  model->params_.assign_from(params);
  return model;
}

ParamStore pretrain_encoder(std::span<const LabeledClusterPair> train, std::span<const LabeledClusterPair> val,
                            const ShapeCodecConfig& codec, const CodecPretrainOptions& options,
                            PretrainResult* details) {
  auto collect = [](std::span<const LabeledClusterPair> pairs, std::size_t cap) {
    std::vector<PointCloud> out;
    for (const auto& p : pairs)
      for (const ClusterObservation* obs : {&p.day_t, &p.day_t1})
        for (const auto& f : obs->fruitlets) {
          if (cap && out.size() >= cap) return out;
          out.push_back(f.cloud);
        }
    return out;
  };
  const std::vector<PointCloud> train_clouds = collect(train, options.max_train_clouds);
  const std::vector<PointCloud> val_clouds = collect(val, options.max_val_clouds);
  const ShapeAugmentConfig aug = options.augment;
  PretrainResult result = pretrain_shape_codec(
      train_clouds, val_clouds, codec, options.schedule,
      [aug](const PointCloud& c, std::mt19937_64& rng) { return augment_shape(c, rng, aug); });
  ParamStore encoder = result.params.subset("shape_codec/enc/");
  if (details) *details = std::move(result);
  return encoder;
}

namespace {

PreparedPair prepare_training_sample(const LabeledClusterPair& pair, const ModelConfig& model, const TrainConfig& cfg,
                                     uint64_t epoch, uint64_t index) {
  if (!cfg.augment) return prepare_pair(pair, model);
  std::mt19937_64 rng(ad::mix_key(cfg.seed ^ kAugmentStream, epoch, index));
  try {
    return prepare_pair(augment_cluster(pair, rng, cfg.augmentation), model);
  } catch (const NumericError&) {
    return prepare_pair(pair, model);
  }
}

std::vector<const LabeledClusterPair*> with_truth(std::span<const LabeledClusterPair> pairs) {
  std::vector<const LabeledClusterPair*> out;
  for (const auto& p : pairs)
    if (p.has_truth) out.push_back(&p);
  return out;
}

}  // namespace

ThresholdSweep sweep_model_threshold(const FruitletModel& model, std::span<const LabeledClusterPair> val, double lo,
                                     double hi, double step) {
  std::vector<std::vector<double>> assignments;
  std::vector<CorrespondenceSet> truths;
  for (const auto* p : with_truth(val)) {
    assignments.push_back(model.final_assignment(prepare_pair(*p, model.config())));
    truths.push_back(p->truth);
  }
  if (truths.empty()) throw DataError("threshold sweep: no validation pair carries ground truth");
  return sweep_threshold(assignments, truths, lo, hi, step);
}

TrainResult train_matcher(FruitletModel& model, std::span<const LabeledClusterPair> train,
                          std::span<const LabeledClusterPair> val, const TrainConfig& config, const ProgressLog& log) {
  const auto train_set = with_truth(train);
  if (train_set.empty()) throw DataError("train_matcher: no training pair carries ground truth");
  if (config.epochs == 0 || config.batch_size == 0) throw UsageError("train_matcher: epochs and batch size must be positive");
  const auto val_set = with_truth(val);
  std::vector<PreparedPair> val_prepared;
  std::vector<CorrespondenceSet> val_truth;
  for (const auto* p : val_set) {
    val_prepared.push_back(prepare_pair(*p, model.config()));
    val_truth.push_back(p->truth);
  }
  std::vector<PreparedPair> fixed_train;
  if (!config.augment)
    for (const auto* p : train_set) fixed_train.push_back(prepare_pair(*p, model.config()));

  LrScheduleConfig schedule;
  schedule.base_lr = config.base_lr;
  schedule.steps_per_epoch = (train_set.size() + config.batch_size - 1) / config.batch_size;
  schedule.total_epochs = config.epochs;
  schedule.warmup_epochs = config.warmup_epochs;

  ParamStore& params = model.params();
  AdamState adam;
  TrainResult result;
  ParamStore best_params = params.clone();
  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(ad::mix_key(config.seed ^ kShuffleStream, epoch, 0));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const PreparedPair sample = config.augment
                                        ? prepare_training_sample(*train_set[idx], model.config(), config, epoch, idx)
                                        : fixed_train[idx];
        const ForwardContext ctx{true, config.seed, step, idx};
        const MatcherOutput out = model.forward(sample, ctx);
        const ad::Tensor loss = match_loss(out.layers, train_set[idx]->truth);
        loss_sum += loss.item();
        ad::backward(ad::scale(loss, ad::Real(1.0) / static_cast<ad::Real>(end - start)));
      }
      adam_step(params, adam, lr_schedule(LrScheduleKind::WarmupLinear, step, schedule));
      ++step;
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(train_set.size()));

    double f1 = -result.train_loss.back();
    double tau = model.match_threshold();
    if (!val_prepared.empty()) {
      std::vector<std::vector<double>> assignments;
      for (const auto& p : val_prepared) assignments.push_back(model.final_assignment(p));
      const ThresholdSweep sweep = sweep_threshold(assignments, val_truth, config.tau_lo, config.tau_hi, config.tau_step);
      f1 = sweep.f1;
      tau = sweep.tau;
    }
    result.val_f1.push_back(f1);
    if (f1 > result.best_f1) {
      result.best_f1 = f1;
      result.best_tau = tau;
      result.best_epoch = epoch;
      best_params = params.clone();
    }
    if (log)
      log("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) + " loss " +
          std::to_string(result.train_loss.back()) + " val_f1 " + std::to_string(f1) + " tau " + std::to_string(tau));
  }
  params.assign_from(best_params);
  model.set_match_threshold(result.best_tau);
  return result;
}

EvalReport evaluate_model(const FruitletModel& model, std::span<const LabeledClusterPair> pairs,
                          const std::string& method) {
  std::vector<ScoredPair> scored;
  std::size_t excluded = 0;
  for (const auto& pair : pairs) {
    if (!pair.has_truth) {
      ++excluded;
      continue;
    }
    scored.push_back({pair.cluster_id, pair.day_gap, model.match(prepare_pair(pair, model.config())), pair.truth, {}});
  }
  return build_report(method, std::move(scored), excluded);
}

FRUITLET_PRECISION_END
}  // namespace fruitlet
