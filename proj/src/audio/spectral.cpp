#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mvp/audio/analysis.hpp"
#include "mvp/error.hpp"
#include "real_fft.hpp"

namespace mvp::audio {

namespace {

// Slaney mel scale: linear below 1 kHz, logarithmic above.
constexpr double kMinLogHz = 1000.0;
constexpr double kLinearStep = 200.0 / 3.0;
constexpr double kMinLogMel = kMinLogHz / kLinearStep;
const double kLogStep = std::log(6.4) / 27.0;

double hz_to_mel(double hz) {
  if (hz < kMinLogHz) return hz / kLinearStep;
  return kMinLogMel + std::log(hz / kMinLogHz) / kLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kMinLogMel) return mel * kLinearStep;
  return kMinLogHz * std::exp(kLogStep * (mel - kMinLogMel));
}

// numpy-style reflect padding (edge sample not repeated).
float padded_sample(const std::vector<float>& x, long i) {
  const long n = static_cast<long>(x.size());
  if (i < 0) i = -i;
  if (i >= n) i = 2 * (n - 1) - i;
  return x[static_cast<std::size_t>(i)];
}

}  // namespace

Spectrogram compute_spectrogram(const AudioBuffer& audio, int window_samples, int hop_samples) {
  if (hop_samples <= 0 || window_samples < hop_samples) {
    throw Error(ErrorKind::InvalidArgument, "require window_samples >= hop_samples > 0");
  }
  validate(audio);
  if (audio.samples.size() < static_cast<std::size_t>(window_samples)) {
    throw Error(ErrorKind::AudioTooShort,
                "audio too short: " + std::to_string(audio.samples.size()) +
                    " samples, need at least one window of " + std::to_string(window_samples));
  }

  const auto n = static_cast<long>(audio.samples.size());
  const long pad = window_samples / 2;
  Spectrogram spec;
  spec.sample_rate = audio.sample_rate;
  spec.window_samples = window_samples;
  spec.hop_samples = hop_samples;
  spec.n_frames = static_cast<std::size_t>(n / hop_samples) + 1;
  spec.n_bins = static_cast<std::size_t>(window_samples / 2 + 1);
  spec.magnitudes.resize(spec.n_frames * spec.n_bins);

  detail::RealFft fft(static_cast<std::size_t>(window_samples));
  std::vector<double> window(static_cast<std::size_t>(window_samples));
  detail::hann(window);
  std::vector<double> mags(spec.n_bins);
  auto in = fft.input();
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    const long start = static_cast<long>(t) * hop_samples - pad;
    for (long i = 0; i < window_samples; ++i) {
      in[static_cast<std::size_t>(i)] =
          window[static_cast<std::size_t>(i)] * padded_sample(audio.samples, start + i);
    }
    fft.magnitudes(mags);
    std::transform(mags.begin(), mags.end(), spec.magnitudes.begin() + t * spec.n_bins,
                   [](double m) { return static_cast<float>(m); });
  }
  return spec;
}

std::vector<double> mel_filterbank(int sample_rate, int window_samples, int mel_bands) {
  if (mel_bands <= 0) throw Error(ErrorKind::InvalidArgument, "mel_bands must be > 0");
  const std::size_t n_bins = static_cast<std::size_t>(window_samples / 2 + 1);
  const double max_mel = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(mel_bands) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(max_mel * static_cast<double>(i) / static_cast<double>(mel_bands + 1));
  }
  std::vector<double> fb(static_cast<std::size_t>(mel_bands) * n_bins, 0.0);
  for (std::size_t b = 0; b < static_cast<std::size_t>(mel_bands); ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    const double norm = 2.0 / (hi - lo);
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / window_samples;
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      const double w = std::max(0.0, std::min(rise, fall));
      fb[b * n_bins + k] = w * norm;
    }
  }
  return fb;
}

OnsetEnvelope onset_strength(const Spectrogram& spec, int mel_bands) {
  if (spec.n_frames == 0 || spec.n_bins == 0) {
    throw Error(ErrorKind::InvalidArgument, "empty spectrogram");
  }
  const auto fb = mel_filterbank(spec.sample_rate, spec.window_samples, mel_bands);
  const auto bands = static_cast<std::size_t>(mel_bands);

  OnsetEnvelope env;
  env.frame_rate = spec.frame_rate();
  env.values.assign(spec.n_frames, 0.0);

  std::vector<double> prev(bands), cur(bands), power(spec.n_bins);
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    for (std::size_t k = 0; k < spec.n_bins; ++k) {
      const double m = spec.at(t, k);
      power[k] = m * m;
    }
    for (std::size_t b = 0; b < bands; ++b) {
      const double* row = fb.data() + b * spec.n_bins;
      double acc = 0.0;
      for (std::size_t k = 0; k < spec.n_bins; ++k) acc += row[k] * power[k];
      cur[b] = std::log1p(acc);
    }
    if (t > 0) {
      double flux = 0.0;
      for (std::size_t b = 0; b < bands; ++b) flux += std::max(0.0, cur[b] - prev[b]);
      env.values[t] = flux;
    }
    std::swap(prev, cur);
  }
  return env;
}

}  // namespace mvp::audio
