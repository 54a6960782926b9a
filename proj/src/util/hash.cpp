#include "mvp/util/hash.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <array>
#include <vector>

#include "mvp/error.hpp"

namespace mvp::util {

namespace {

std::array<std::uint8_t, SHA256_DIGEST_LENGTH> digest(const void* data, std::size_t size) {
  std::array<std::uint8_t, SHA256_DIGEST_LENGTH> out{};
  SHA256(static_cast<const unsigned char*>(data), size, out.data());
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xF]);
  }
  return s;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  return to_hex(digest(bytes.data(), bytes.size()));
}

std::string sha256_hex(std::string_view text) {
  return to_hex(digest(text.data(), text.size()));
}

std::uint64_t stable_hash64(std::string_view text) {
  const auto d = digest(text.data(), text.size());
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) h = (h << 8) | d[i];
  return h;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::vector<unsigned char> out(4 * ((bytes.size() + 2) / 3) + 1);
  const int n = EVP_EncodeBlock(out.data(), bytes.data(), static_cast<int>(bytes.size()));
  return std::string(reinterpret_cast<const char*>(out.data()), static_cast<std::size_t>(n));
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorKind::Parse, "base64 length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4 + 1);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorKind::Parse, "malformed base64");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock counts padding bytes as output.
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() > 1 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

}  // namespace mvp::util
