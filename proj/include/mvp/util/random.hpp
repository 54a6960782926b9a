#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mvp::util {

// Stateless 64-bit mixer (SplitMix64 finalizer). Used to derive child seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t salt) noexcept {
  return mix64(parent ^ mix64(salt));
}

// The standard distributions are implementation-defined, so anything that
// feeds a persisted artifact draws through these helpers instead; the
// mt19937_64 output sequence itself is fixed by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Deterministic unit vector of the requested dimension.
std::vector<double> random_unit_vector(std::uint64_t seed, std::size_t dim);

}  // namespace mvp::util
