#pragma once

#include <filesystem>

#include "mvp/audio/types.hpp"

namespace mvp::audio {

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  bool is_float = false;
  std::size_t frames = 0;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(frames) / sample_rate : 0.0;
  }
};

// Reads only the header chunks.
WavInfo probe_wav(const std::filesystem::path& path);

// PCM 16/24/32-bit integer or 32-bit float; channels are averaged to mono.
AudioBuffer read_wav(const std::filesystem::path& path);

// 16-bit PCM mono.
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

// Linear-interpolation resampler.
AudioBuffer resample(const AudioBuffer& audio, int target_rate);

// read_wav + resample to the analysis rate.
AudioBuffer load_for_analysis(const std::filesystem::path& path);

}  // namespace mvp::audio
