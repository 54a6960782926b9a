#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mvp::util {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

// First 8 bytes of SHA-256, big-endian. Stable across platforms and builds.
std::uint64_t stable_hash64(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws Error(Parse) on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace mvp::util
