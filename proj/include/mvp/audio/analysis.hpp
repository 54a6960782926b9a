#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/audio/types.hpp"

namespace mvp::audio {

// Center-padded (reflect) Hann-windowed STFT magnitude. Frame t is centred on
// sample t * hop, so frame count is floor(n / hop) + 1.
Spectrogram compute_spectrogram(const AudioBuffer& audio, int window_samples = kWindowSamples,
                                int hop_samples = kHopSamples);

// Slaney-style mel filterbank, shape mel_bands x (window/2 + 1), row-major.
std::vector<double> mel_filterbank(int sample_rate, int window_samples, int mel_bands);

// Per frame: sum over mel bands of max(0, L[b,t] - L[b,t-1]) with
// L = log(1 + mel power). The first frame is 0.
OnsetEnvelope onset_strength(const Spectrogram& spec, int mel_bands = kMelBands);

struct PulseOptions {
  double tempo_min = 30.0;
  double tempo_max = 300.0;
  int window_frames = kTempogramWindow;
  // Tempogram frequency grid density relative to the plain DFT bins
  // (zero-padding factor). Keeps an off-bin fundamental from losing to an
  // on-bin harmonic.
  int oversample = 4;
};

// Predominant local pulse: per onset frame, the strongest in-range tempo bin
// of a Hann-windowed Fourier tempogram is resynthesised as a unit-magnitude
// windowed sinusoid at its measured phase; kernels are overlap-added,
// half-wave rectified, and max-normalised.
PulseCurve predominant_local_pulse(const OnsetEnvelope& onset, const PulseOptions& options = {});

// Local maxima above threshold, refined to sub-frame precision by parabolic
// interpolation, in seconds.
BeatGrid extract_beats(const PulseCurve& plp, double threshold = 0.1);

// One vector per full window; the trailing partial window is dropped.
std::vector<WindowFeatures> window_features(const AudioBuffer& audio, double window_seconds = 5.0,
                                            std::vector<std::string>* warnings = nullptr);

struct AnalysisOptions {
  PulseOptions pulse;
  double beat_threshold = 0.1;
  double feature_window = 5.0;
};

struct AnalysisBundle {
  double duration = 0.0;
  int sample_rate = kSampleRate;
  int hop_samples = kHopSamples;
  OnsetEnvelope onset;
  PulseCurve pulse;
  BeatGrid beats;
  std::vector<WindowFeatures> windows;
  std::vector<std::string> warnings;
};

// Full rhythm + feature analysis of (already resampled) audio.
AnalysisBundle analyze(const AudioBuffer& audio, const AnalysisOptions& options = {});

nlohmann::json to_json(const AnalysisBundle& bundle);
AnalysisBundle analysis_from_json(const nlohmann::json& doc);

// Feature file produced by an external extractor: a JSON array of
// {window_start, window_length, vector}.
std::vector<WindowFeatures> load_feature_file(const std::string& path);

}  // namespace mvp::audio
