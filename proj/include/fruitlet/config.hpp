#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "fruitlet/pipeline.hpp"
#include "json.hpp"

namespace fruitlet {

struct SplitConfig {
  std::size_t train = 2000, val = 400, test = 400;
};

FRUITLET_PRECISION_BEGIN

// Every tunable default, grouped the way the config file is. The top-level
// seed drives synthesis, initialization, pre-training and training.
struct RunConfig {
  uint64_t seed = 7;
  SynthConfig synth;
  SplitConfig split;
  FilterParams filters;
  ModelConfig model;
  CodecPretrainOptions pretrain;
  TrainConfig train;
  BaselineConfig baselines;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are a UsageError.
  static RunConfig from_json(const nlohmann::json& j);
};

// Applies "a.b.c=value" to a config tree. The value is parsed as JSON when
// possible and taken as a string otherwise.
void apply_override(nlohmann::json& tree, const std::string& assignment);

// Defaults, then the file, then overrides, then the seed environment value.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, std::span<const std::string> overrides,
                         const char* env_seed = nullptr);

inline constexpr const char* kSeedEnvVar = "FRUITLET_SEED";

FRUITLET_PRECISION_END

}  // namespace fruitlet
