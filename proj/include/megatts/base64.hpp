#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace megatts::base64 {

std::string encode(const std::vector<std::uint8_t>& bytes);
// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> decode(std::string_view text);

// Little-endian IEEE-754 binary32 packing.
std::string encode_f32(const std::vector<float>& values);
std::vector<float> decode_f32(std::string_view text);

}  // namespace megatts::base64
