#pragma once

#include <cstdint>
#include <vector>

namespace mvp::render {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
};

// Deterministic PNG encoding (fixed compression settings, no timestamps).
std::vector<std::uint8_t> encode_png(const RgbImage& image);

}  // namespace mvp::render
