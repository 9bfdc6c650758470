#pragma once

#include <array>
#include <string>
#include <string_view>

namespace fruitlet {

using Sha256Digest = std::array<unsigned char, 32>;

Sha256Digest sha256(std::string_view bytes);
std::string sha256_hex(std::string_view bytes);

}  // namespace fruitlet
