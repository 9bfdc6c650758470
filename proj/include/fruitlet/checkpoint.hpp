#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "fruitlet/error.hpp"
#include "fruitlet/params.hpp"
#include "json.hpp"

namespace fruitlet {

class CheckpointDigestError : public DataError {
 public:
  using DataError::DataError;
};

class CheckpointVersionError : public DataError {
 public:
  using DataError::DataError;
};

FRUITLET_PRECISION_BEGIN

inline constexpr std::string_view kCheckpointMagic = "FRTLCKPT";
inline constexpr uint32_t kCheckpointVersion = 1;

// Layout: magic, u32 version, u32 length + canonical config JSON, tensor
// payload, then the SHA-256 of every preceding byte.
struct Checkpoint {
  nlohmann::json config;
  ParamStore params;
};

std::string encode_checkpoint(const ParamStore& params, const nlohmann::json& config);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<checkpoint>");

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const nlohmann::json& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

FRUITLET_PRECISION_END

}  // namespace fruitlet
