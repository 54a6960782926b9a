#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/audio/types.hpp"

namespace mvp::emotion {

// Circumplex quadrants. Axis values (v == 0 or a == 0) resolve to the
// non-negative side.
enum class Quadrant { Melancholy, Serene, Tense, Euphoric };

Quadrant quadrant(double valence, double arousal) noexcept;
std::string_view to_string(Quadrant q) noexcept;
Quadrant quadrant_from_string(std::string_view name);

// Both components clamped to [-1, 1] on construction.
struct ValenceArousal {
  double valence = 0.0;
  double arousal = 0.0;

  static ValenceArousal clamped(double valence, double arousal);
};

struct EmotionEvent {
  double time = 0.0;  // window start, seconds
  Quadrant quadrant = Quadrant::Serene;

  bool operator==(const EmotionEvent&) const = default;
};

struct EmotionState {
  double valence_sum = 0.0;
  double arousal_sum = 0.0;
  std::optional<Quadrant> current;
  std::size_t windows_seen = 0;
  std::optional<double> last_window_start;
};

// Running-sum tracker. decay = 1 is the literal undecayed sum; values below
// 1 shrink the accumulated position before each new window is added.
struct TrackerOptions {
  double decay = 1.0;
};

// Adds va to the running position. Emits an event for the first window and
// whenever the position's quadrant changes. Windows must arrive in strictly
// ascending window_start order.
std::optional<EmotionEvent> update_position(EmotionState& state, const ValenceArousal& va,
                                            double window_start,
                                            const TrackerOptions& options = {});

class VaRegressor {
 public:
  virtual ~VaRegressor() = default;
  virtual ValenceArousal predict(const audio::WindowFeatures& features) const = 0;
};

// out = clamp(W x + b), W is 2 x D.
class AffineRegressor final : public VaRegressor {
 public:
  AffineRegressor(std::size_t input_dim, std::vector<double> weights_row_major,
                  std::array<double, 2> bias);

  // {"input_dim": D, "weights": [2*D numbers, row-major, valence row first],
  //  "bias": [bv, ba]}
  static AffineRegressor from_json(const nlohmann::json& doc);
  static AffineRegressor load(const std::string& path);

  std::size_t input_dim() const { return input_dim_; }
  ValenceArousal predict(const audio::WindowFeatures& features) const override;

 private:
  std::size_t input_dim_;
  std::vector<double> weights_;
  std::array<double, 2> bias_;
};

// Hand-set affine weights over the fallback feature set (brightness drives
// valence, loudness and flux drive arousal). Same numbers as
// data/va_baseline.json. Used when no trained regressor is configured.
AffineRegressor baseline_regressor();

// Precomputed VA per window, looked up by window start.
class VaTrackRegressor final : public VaRegressor {
 public:
  struct Entry {
    double window_start;
    ValenceArousal va;
  };
  explicit VaTrackRegressor(std::vector<Entry> entries);

  // JSON array of {window_start, valence, arousal}.
  static VaTrackRegressor load(const std::string& path);

  ValenceArousal predict(const audio::WindowFeatures& features) const override;
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

// Remote inference service: POST {"features": [...]} -> {"valence", "arousal"}.
class HttpRegressor final : public VaRegressor {
 public:
  HttpRegressor(std::string url, int timeout_ms);
  ValenceArousal predict(const audio::WindowFeatures& features) const override;

 private:
  std::string url_;
  int timeout_ms_;
};

// Fold of update_position over regressor predictions.
std::vector<EmotionEvent> emotion_track(const VaRegressor& regressor,
                                        const std::vector<audio::WindowFeatures>& features,
                                        const TrackerOptions& options = {});

nlohmann::json to_json(const std::vector<EmotionEvent>& events);

}  // namespace mvp::emotion
