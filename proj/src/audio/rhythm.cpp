#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "mvp/audio/analysis.hpp"
#include "mvp/error.hpp"
#include "real_fft.hpp"

namespace mvp::audio {

PulseCurve predominant_local_pulse(const OnsetEnvelope& onset, const PulseOptions& options) {
  if (!(options.tempo_min > 0.0) || !(options.tempo_min < options.tempo_max)) {
    throw Error(ErrorKind::InvalidArgument, "require 0 < tempo_min < tempo_max");
  }
  const int win = options.window_frames;
  if (win < 4 || win % 2 != 0) {
    throw Error(ErrorKind::InvalidArgument, "tempogram window must be even and >= 4");
  }
  const std::size_t n = onset.values.size();
  if (n < static_cast<std::size_t>(win)) {
    throw Error(ErrorKind::InsufficientFrames,
                "insufficient frames: onset envelope has " + std::to_string(n) +
                    " frames, tempogram window needs " + std::to_string(win));
  }

  if (options.oversample < 1) throw Error(ErrorKind::InvalidArgument, "oversample must be >= 1");

  // Tempo grid inside the requested BPM range, in (fractional) DFT bins.
  const double bpm_per_bin = onset.frame_rate * 60.0 / win;
  std::vector<double> bins;
  for (int k = 1; k < (win / 2) * options.oversample; ++k) {
    const double bin = static_cast<double>(k) / options.oversample;
    const double bpm = bin * bpm_per_bin;
    if (bpm >= options.tempo_min && bpm <= options.tempo_max) bins.push_back(bin);
  }
  if (bins.empty()) {
    throw Error(ErrorKind::InvalidArgument, "no tempogram bin inside the tempo range");
  }

  const auto w = static_cast<std::size_t>(win);
  const long half = win / 2;
  std::vector<double> window(w);
  detail::hann(window);
  // basis[b][i] = exp(-2 pi i * bin_b * i / win), split into cos/sin tables.
  std::vector<double> cos_table(bins.size() * w), sin_table(bins.size() * w);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    for (std::size_t i = 0; i < w; ++i) {
      const double a = 2.0 * std::numbers::pi * bins[b] * static_cast<double>(i) / win;
      cos_table[b * w + i] = std::cos(a);
      sin_table[b * w + i] = std::sin(a);
    }
  }

  std::vector<double> pulse(n, 0.0);
  std::vector<double> norm(n, 0.0);
  std::vector<double> segment(w);
  for (std::size_t m = 0; m < n; ++m) {
    const long start = static_cast<long>(m) - half;
    for (std::size_t i = 0; i < w; ++i) {
      const long j = start + static_cast<long>(i);
      segment[i] = (j >= 0 && j < static_cast<long>(n))
                       ? window[i] * onset.values[static_cast<std::size_t>(j)]
                       : 0.0;
    }

    std::size_t best_bin = 0;
    std::complex<double> best{0.0, 0.0};
    double best_mag = -1.0;
    for (std::size_t b = 0; b < bins.size(); ++b) {
      const double* c = cos_table.data() + b * w;
      const double* s = sin_table.data() + b * w;
      double re = 0.0, im = 0.0;
      for (std::size_t i = 0; i < w; ++i) {
        re += segment[i] * c[i];
        im -= segment[i] * s[i];
      }
      const double mag = std::hypot(re, im);
      if (mag > best_mag) {
        best_mag = mag;
        best_bin = b;
        best = {re, im};
      }
    }

    // Unit-magnitude coefficient at the measured phase; zero for silence.
    const std::complex<double> coef = best_mag > 0.0 ? best / best_mag : std::complex<double>{};
    const double* c = cos_table.data() + best_bin * w;
    const double* s = sin_table.data() + best_bin * w;
    for (std::size_t i = 0; i < w; ++i) {
      const long j = start + static_cast<long>(i);
      if (j >= 0 && j < static_cast<long>(n)) {
        // Re(coef * exp(+2 pi i f i / win)); s holds +sin.
        const double kernel = (2.0 / win) * (coef.real() * c[i] - coef.imag() * s[i]);
        pulse[static_cast<std::size_t>(j)] += window[i] * kernel;
        norm[static_cast<std::size_t>(j)] += window[i] * window[i];
      }
    }
  }

  double peak = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double v = norm[j] > 1e-12 ? pulse[j] / norm[j] : 0.0;
    v = std::max(0.0, v);
    pulse[j] = v;
    peak = std::max(peak, v);
  }
  if (peak > 0.0) {
    for (auto& v : pulse) v = std::min(1.0, v / peak);
  }
  return PulseCurve{std::move(pulse), onset.frame_rate};
}

BeatGrid extract_beats(const PulseCurve& plp, double threshold) {
  if (!(threshold >= 0.0 && threshold < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "beat threshold must be in [0, 1)");
  }
  BeatGrid grid;
  const auto& p = plp.values;
  for (std::size_t i = 1; i + 1 < p.size(); ++i) {
    if (!(p[i] > threshold && p[i] > p[i - 1] && p[i] >= p[i + 1])) continue;
    const double a = p[i - 1], b = p[i], c = p[i + 1];
    const double denom = a - 2.0 * b + c;
    double offset = denom != 0.0 ? 0.5 * (a - c) / denom : 0.0;
    offset = std::clamp(offset, -0.5, 0.5);
    const double t = (static_cast<double>(i) + offset) / plp.frame_rate;
    if (grid.beat_times.empty() || t > grid.beat_times.back()) grid.beat_times.push_back(t);
  }
  return grid;
}

}  // namespace mvp::audio
