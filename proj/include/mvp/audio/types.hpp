#pragma once

#include <cstddef>
#include <vector>

namespace mvp::audio {

// Defaults for the whole rhythm pipeline.
inline constexpr int kSampleRate = 22050;
inline constexpr int kWindowSamples = 2048;
inline constexpr int kHopSamples = 512;
inline constexpr int kMelBands = 128;
inline constexpr int kTempogramWindow = 384;

// Mono PCM in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  double duration() const noexcept {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

// Validates the AudioBuffer invariants (finite samples, positive rate).
void validate(const AudioBuffer& audio);

// Magnitude STFT, stored frame-major: frames() x bins().
struct Spectrogram {
  std::vector<float> magnitudes;
  std::size_t n_frames = 0;
  std::size_t n_bins = 0;
  int sample_rate = kSampleRate;
  int window_samples = kWindowSamples;
  int hop_samples = kHopSamples;

  float at(std::size_t frame, std::size_t bin) const { return magnitudes[frame * n_bins + bin]; }
  double frame_rate() const { return static_cast<double>(sample_rate) / hop_samples; }
  double bin_hz(std::size_t bin) const {
    return static_cast<double>(bin) * sample_rate / window_samples;
  }
};

struct OnsetEnvelope {
  std::vector<double> values;
  double frame_rate = static_cast<double>(kSampleRate) / kHopSamples;

  double hop_seconds() const { return 1.0 / frame_rate; }
  double duration() const { return static_cast<double>(values.size()) / frame_rate; }
};

struct PulseCurve {
  std::vector<double> values;
  double frame_rate = static_cast<double>(kSampleRate) / kHopSamples;
};

struct BeatGrid {
  std::vector<double> beat_times;
};

// Fallback emotion feature vector, in this fixed order.
inline constexpr std::size_t kFeatureDim = 8;
inline constexpr const char* kFeatureNames[kFeatureDim] = {
    "rms_mean",     "rms_std",           "centroid_mean", "centroid_std",
    "flux_mean",    "flux_std",          "zcr_mean",      "rolloff_mean",
};

struct WindowFeatures {
  double window_start = 0.0;
  double window_length = 5.0;
  std::vector<double> vector;
};

}  // namespace mvp::audio
