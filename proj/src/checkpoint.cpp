#include "fruitlet/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fruitlet/digest.hpp"

namespace fruitlet {

namespace {

using Digest = Sha256Digest;

void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

uint32_t get_u32(std::string_view bytes, std::size_t at) {
  uint32_t v = 0;
  std::memcpy(&v, bytes.data() + at, 4);
  return v;
}

}  // namespace

FRUITLET_PRECISION_BEGIN

std::string encode_checkpoint(const ParamStore& params, const nlohmann::json& config) {
  std::string out(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  const std::string text = config.dump();
  put_u32(out, static_cast<uint32_t>(text.size()));
  out += text;
  std::ostringstream payload;
  write_tensor_payload(payload, params);
  out += payload.str();
  const Digest d = sha256(out);
  out.append(reinterpret_cast<const char*>(d.data()), d.size());
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw DataError(source + ": not a checkpoint (bad magic)");
  const Digest expected = [&] {
    Digest d{};
    if (bytes.size() >= kCheckpointMagic.size() + d.size())
      std::memcpy(d.data(), bytes.data() + bytes.size() - d.size(), d.size());
    return d;
  }();
  const std::size_t body_len = bytes.size() >= kCheckpointMagic.size() + 32 ? bytes.size() - 32 : 0;
  if (body_len < kCheckpointMagic.size() + 8 || sha256(bytes.substr(0, body_len)) != expected)
    throw CheckpointDigestError(source + ": digest mismatch (file truncated or corrupted)");
  std::size_t at = kCheckpointMagic.size();
  const uint32_t version = get_u32(bytes, at);
  at += 4;
  if (version != kCheckpointVersion)
    throw CheckpointVersionError(source + ": checkpoint format version " + std::to_string(version) +
                                 ", this build reads version " + std::to_string(kCheckpointVersion));
  const uint32_t len = get_u32(bytes, at);
  at += 4;
  if (at + len > body_len) throw DataError(source + ": config block overruns the file");
  Checkpoint ck;
  try {
    ck.config = nlohmann::json::parse(bytes.substr(at, len));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(source + ": malformed config block: " + e.what());
  }
  at += len;
  std::istringstream payload(std::string(bytes.substr(at, body_len - at)));
  ck.params = read_tensor_payload(payload);
  if (payload.peek() != std::char_traits<char>::eof()) throw DataError(source + ": trailing bytes after payload");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const nlohmann::json& config) {
  const std::string bytes = encode_checkpoint(params, config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed while writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str(), path.string());
}

FRUITLET_PRECISION_END

}  // namespace fruitlet
