#include "mvp/emotion/emotion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mvp/error.hpp"
#include "mvp/util/files.hpp"
#include "mvp/util/http.hpp"

namespace mvp::emotion {

Quadrant quadrant(double valence, double arousal) noexcept {
  const bool positive_v = valence >= 0.0;
  const bool high_a = arousal >= 0.0;
  if (high_a) return positive_v ? Quadrant::Euphoric : Quadrant::Tense;
  return positive_v ? Quadrant::Serene : Quadrant::Melancholy;
}

std::string_view to_string(Quadrant q) noexcept {
  switch (q) {
    case Quadrant::Melancholy: return "Melancholy";
    case Quadrant::Serene: return "Serene";
    case Quadrant::Tense: return "Tense";
    case Quadrant::Euphoric: return "Euphoric";
  }
  return "Serene";
}

Quadrant quadrant_from_string(std::string_view name) {
  for (auto q : {Quadrant::Melancholy, Quadrant::Serene, Quadrant::Tense, Quadrant::Euphoric}) {
    if (to_string(q) == name) return q;
  }
  throw Error(ErrorKind::Parse, "unknown emotion quadrant '" + std::string(name) + "'");
}

ValenceArousal ValenceArousal::clamped(double valence, double arousal) {
  if (!std::isfinite(valence) || !std::isfinite(arousal)) {
    throw Error(ErrorKind::Domain, "non-finite valence/arousal");
  }
  return {std::clamp(valence, -1.0, 1.0), std::clamp(arousal, -1.0, 1.0)};
}

std::optional<EmotionEvent> update_position(EmotionState& state, const ValenceArousal& va,
                                            double window_start, const TrackerOptions& options) {
  if (state.last_window_start && !(window_start > *state.last_window_start)) {
    throw Error(ErrorKind::Protocol, "emotion windows out of order: " +
                                         std::to_string(window_start) + " after " +
                                         std::to_string(*state.last_window_start));
  }
  state.valence_sum = options.decay * state.valence_sum + va.valence;
  state.arousal_sum = options.decay * state.arousal_sum + va.arousal;
  state.last_window_start = window_start;
  ++state.windows_seen;
  const Quadrant q = quadrant(state.valence_sum, state.arousal_sum);
  if (state.current == q) return std::nullopt;
  state.current = q;
  return EmotionEvent{window_start, q};
}

AffineRegressor::AffineRegressor(std::size_t input_dim, std::vector<double> weights_row_major,
                                 std::array<double, 2> bias)
    : input_dim_(input_dim), weights_(std::move(weights_row_major)), bias_(bias) {
  if (weights_.size() != 2 * input_dim_) {
    throw Error(ErrorKind::Config, "regressor weights: expected 2 x " + std::to_string(input_dim_) +
                                       " = " + std::to_string(2 * input_dim_) + " values, got " +
                                       std::to_string(weights_.size()));
  }
}

AffineRegressor AffineRegressor::from_json(const nlohmann::json& doc) {
  try {
    const auto dim = doc.at("input_dim").get<std::size_t>();
    auto bias = doc.at("bias").get<std::vector<double>>();
    if (bias.size() != 2) throw Error(ErrorKind::Config, "regressor bias must have 2 values");
    return AffineRegressor(dim, doc.at("weights").get<std::vector<double>>(), {bias[0], bias[1]});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("regressor weights file: ") + e.what());
  }
}

AffineRegressor AffineRegressor::load(const std::string& path) {
  return from_json(util::read_json(path));
}

ValenceArousal AffineRegressor::predict(const audio::WindowFeatures& features) const {
  if (features.vector.size() != input_dim_) {
    throw Error(ErrorKind::Config, "feature dimension " + std::to_string(features.vector.size()) +
                                       " does not match regressor input dimension " +
                                       std::to_string(input_dim_));
  }
  double out[2] = {bias_[0], bias_[1]};
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < input_dim_; ++c) {
      out[r] += weights_[r * input_dim_ + c] * features.vector[c];
    }
  }
  return ValenceArousal::clamped(out[0], out[1]);
}

AffineRegressor baseline_regressor() {
  // rms mean/std, centroid mean/std, flux mean/std, zcr mean, rolloff mean
  return AffineRegressor(audio::kFeatureDim,
                         {0.0, 0.0, 3.0, 0.0, 0.0, 0.0, -1.0, 1.0,
                          4.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0},
                         {-0.45, -0.6});
}

VaTrackRegressor::VaTrackRegressor(std::vector<Entry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    if (!(entries_[i].window_start > entries_[i - 1].window_start)) {
      throw Error(ErrorKind::Validation,
                  "VA track not ascending at index " + std::to_string(i));
    }
  }
}

VaTrackRegressor VaTrackRegressor::load(const std::string& path) {
  const auto doc = util::read_json(path);
  std::vector<Entry> entries;
  try {
    for (const auto& e : doc) {
      entries.push_back({e.at("window_start").get<double>(),
                         ValenceArousal::clamped(e.at("valence").get<double>(),
                                                 e.at("arousal").get<double>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path + ": " + e.what());
  }
  return VaTrackRegressor(std::move(entries));
}

ValenceArousal VaTrackRegressor::predict(const audio::WindowFeatures& features) const {
  // Exact start match, tolerant of float formatting in the track file.
  auto it = std::lower_bound(entries_.begin(), entries_.end(), features.window_start - 1e-6,
                             [](const Entry& e, double t) { return e.window_start < t; });
  if (it == entries_.end() || std::abs(it->window_start - features.window_start) > 1e-6) {
    throw Error(ErrorKind::NotFound,
                "VA track has no entry for window " + std::to_string(features.window_start));
  }
  return it->va;
}

HttpRegressor::HttpRegressor(std::string url, int timeout_ms)
    : url_(std::move(url)), timeout_ms_(timeout_ms) {}

ValenceArousal HttpRegressor::predict(const audio::WindowFeatures& features) const {
  const auto reply = util::post_json(
      url_, {{"window_start", features.window_start}, {"features", features.vector}}, timeout_ms_);
  try {
    return ValenceArousal::clamped(reply.at("valence").get<double>(),
                                   reply.at("arousal").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, url_ + ": " + e.what());
  }
}

std::vector<EmotionEvent> emotion_track(const VaRegressor& regressor,
                                        const std::vector<audio::WindowFeatures>& features,
                                        const TrackerOptions& options) {
  EmotionState state;
  std::vector<EmotionEvent> events;
  for (const auto& f : features) {
    if (auto ev = update_position(state, regressor.predict(f), f.window_start, options)) {
      events.push_back(*ev);
    }
  }
  return events;
}

nlohmann::json to_json(const std::vector<EmotionEvent>& events) {
  auto out = nlohmann::json::array();
  for (const auto& e : events) {
    out.push_back({{"time", e.time}, {"quadrant", std::string(to_string(e.quadrant))}});
  }
  return out;
}

}  // namespace mvp::emotion
