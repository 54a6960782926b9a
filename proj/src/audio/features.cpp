#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mvp/audio/analysis.hpp"
#include "mvp/error.hpp"
#include "mvp/util/files.hpp"
#include "real_fft.hpp"

namespace mvp::audio {

namespace {

constexpr int kFeatureFrame = 2048;
constexpr int kFeatureHop = 512;
constexpr double kRolloffFraction = 0.85;

struct MeanStd {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double stddev() const {
    if (n == 0) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - m * m));
  }
};

std::vector<double> window_vector(const float* x, std::size_t len, int sample_rate,
                                  detail::RealFft& fft, const std::vector<double>& hann_window,
                                  double window_gain) {
  const std::size_t bins = fft.bins();
  const double nyquist = sample_rate / 2.0;
  std::vector<double> mags(bins), prev(bins, 0.0);
  MeanStd rms, centroid, flux, zcr, rolloff;
  auto in = fft.input();
  bool first = true;
  for (std::size_t start = 0; start + kFeatureFrame <= len; start += kFeatureHop) {
    const float* frame = x + start;
    double energy = 0.0;
    std::size_t crossings = 0;
    for (std::size_t i = 0; i < kFeatureFrame; ++i) {
      energy += static_cast<double>(frame[i]) * frame[i];
      if (i > 0 && (frame[i] >= 0.0f) != (frame[i - 1] >= 0.0f)) ++crossings;
      in[i] = hann_window[i] * frame[i];
    }
    rms.add(std::sqrt(energy / kFeatureFrame));
    zcr.add(static_cast<double>(crossings) / (kFeatureFrame - 1));

    fft.magnitudes(mags);
    double mag_sum = 0.0, weighted = 0.0, power_sum = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      mags[k] /= window_gain;
      const double hz = static_cast<double>(k) * sample_rate / kFeatureFrame;
      mag_sum += mags[k];
      weighted += hz * mags[k];
      power_sum += mags[k] * mags[k];
    }
    centroid.add(mag_sum > 0.0 ? weighted / mag_sum / nyquist : 0.0);

    double roll = 0.0;
    if (power_sum > 0.0) {
      double cumulative = 0.0;
      for (std::size_t k = 0; k < bins; ++k) {
        cumulative += mags[k] * mags[k];
        if (cumulative >= kRolloffFraction * power_sum) {
          roll = static_cast<double>(k) * sample_rate / kFeatureFrame / nyquist;
          break;
        }
      }
    }
    rolloff.add(roll);

    if (!first) {
      double f = 0.0;
      for (std::size_t k = 0; k < bins; ++k) {
        const double d = std::max(0.0, mags[k] - prev[k]);
        f += d * d;
      }
      flux.add(std::sqrt(f));
    }
    first = false;
    std::swap(prev, mags);
  }
  return {rms.mean(),  rms.stddev(),  centroid.mean(), centroid.stddev(),
          flux.mean(), flux.stddev(), zcr.mean(),      rolloff.mean()};
}

}  // namespace

std::vector<WindowFeatures> window_features(const AudioBuffer& audio, double window_seconds,
                                            std::vector<std::string>* warnings) {
  if (!(window_seconds > 0.0)) throw Error(ErrorKind::InvalidArgument, "window must be > 0");
  validate(audio);
  const auto window_len =
      static_cast<std::size_t>(std::llround(window_seconds * audio.sample_rate));
  const std::size_t count = window_len > 0 ? audio.samples.size() / window_len : 0;
  std::vector<WindowFeatures> out;
  if (count == 0 || window_len < kFeatureFrame) {
    if (warnings) {
      warnings->push_back("audio shorter than one " + std::to_string(window_seconds) +
                          " s feature window; no emotion features extracted");
    }
    return out;
  }

  detail::RealFft fft(kFeatureFrame);
  std::vector<double> hann_window(kFeatureFrame);
  detail::hann(hann_window);
  double gain = 0.0;
  for (double v : hann_window) gain += v;

  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    WindowFeatures f;
    f.window_start = static_cast<double>(w * window_len) / audio.sample_rate;
    f.window_length = window_seconds;
    f.vector = window_vector(audio.samples.data() + w * window_len, window_len, audio.sample_rate,
                             fft, hann_window, gain);
    out.push_back(std::move(f));
  }
  return out;
}

AnalysisBundle analyze(const AudioBuffer& audio, const AnalysisOptions& options) {
  AnalysisBundle bundle;
  bundle.duration = audio.duration();
  bundle.sample_rate = audio.sample_rate;
  bundle.hop_samples = kHopSamples;
  const Spectrogram spec = compute_spectrogram(audio, kWindowSamples, kHopSamples);
  bundle.onset = onset_strength(spec, kMelBands);
  bundle.pulse = predominant_local_pulse(bundle.onset, options.pulse);
  bundle.beats = extract_beats(bundle.pulse, options.beat_threshold);
  bundle.windows = window_features(audio, options.feature_window, &bundle.warnings);
  return bundle;
}

nlohmann::json to_json(const AnalysisBundle& b) {
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : b.windows) {
    windows.push_back(
        {{"window_start", w.window_start}, {"window_length", w.window_length}, {"vector", w.vector}});
  }
  std::vector<std::string> names(std::begin(kFeatureNames), std::end(kFeatureNames));
  return {
      {"duration", b.duration},
      {"sample_rate", b.sample_rate},
      {"hop_samples", b.hop_samples},
      {"onset", {{"frame_rate", b.onset.frame_rate}, {"values", b.onset.values}}},
      {"pulse", {{"frame_rate", b.pulse.frame_rate}, {"values", b.pulse.values}}},
      {"beats", b.beats.beat_times},
      {"feature_names", names},
      {"windows", windows},
      {"warnings", b.warnings},
  };
}

AnalysisBundle analysis_from_json(const nlohmann::json& doc) {
  try {
    AnalysisBundle b;
    b.duration = doc.at("duration").get<double>();
    b.sample_rate = doc.at("sample_rate").get<int>();
    b.hop_samples = doc.at("hop_samples").get<int>();
    b.onset.frame_rate = doc.at("onset").at("frame_rate").get<double>();
    b.onset.values = doc.at("onset").at("values").get<std::vector<double>>();
    b.pulse.frame_rate = doc.at("pulse").at("frame_rate").get<double>();
    b.pulse.values = doc.at("pulse").at("values").get<std::vector<double>>();
    b.beats.beat_times = doc.at("beats").get<std::vector<double>>();
    for (const auto& w : doc.at("windows")) {
      b.windows.push_back({w.at("window_start").get<double>(), w.at("window_length").get<double>(),
                           w.at("vector").get<std::vector<double>>()});
    }
    if (doc.contains("warnings")) b.warnings = doc["warnings"].get<std::vector<std::string>>();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("analysis bundle: ") + e.what());
  }
}

std::vector<WindowFeatures> load_feature_file(const std::string& path) {
  const auto doc = util::read_json(path);
  std::vector<WindowFeatures> out;
  try {
    for (const auto& w : doc) {
      out.push_back({w.at("window_start").get<double>(), w.value("window_length", 5.0),
                     w.at("vector").get<std::vector<double>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path + ": " + e.what());
  }
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (!(out[i].window_start > out[i - 1].window_start)) {
      throw Error(ErrorKind::Validation,
                  path + ": window_start not ascending at index " + std::to_string(i));
    }
  }
  return out;
}

}  // namespace mvp::audio
