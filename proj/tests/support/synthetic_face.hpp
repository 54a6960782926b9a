#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "mvp/charcha/charcha.hpp"

namespace mvp::testing {

using charcha::ActionKind;
using charcha::LandmarkFrame;

using SecondMask = std::array<bool, charcha::kSecondsPerAction>;

inline SecondMask all_seconds() {
  SecondMask m;
  m.fill(true);
  return m;
}

// First `n` seconds performed, the rest neutral.
inline SecondMask first_seconds(int n) {
  SecondMask m{};
  for (int i = 0; i < n && i < static_cast<int>(m.size()); ++i) m[static_cast<std::size_t>(i)] = true;
  return m;
}

struct AttemptPlan {
  std::array<SecondMask, charcha::kActionsPerAttempt> seconds{
      all_seconds(), all_seconds(), all_seconds(), all_seconds(), all_seconds(), all_seconds()};
  // Fraction of calibration frames sent without a face (evenly spread).
  double calibration_drop = 0.0;
};

struct TracePlan {
  std::uint64_t rng_seed = 1;
  std::uint64_t noise_seed = 99;
  int hz = 20;
  double jitter = 0.0005;
  std::vector<AttemptPlan> attempts{AttemptPlan{}};
  std::optional<std::int64_t> truncate_ms;  // no frames at or after this time
  std::int64_t tail_ms = 1000;               // frames kept after the last verdict
  // From this time on, every landmark is scaled about the face centre.
  std::optional<std::int64_t> scale_from_ms;
  double scale = 1.0;
};

// What the protocol timing implies for the plan, worked out independently
// of the session state machine.
struct ExpectedTiming {
  std::vector<std::int64_t> attempt_start_ms;
  std::vector<std::int64_t> verdict_ms;
  std::vector<std::array<int, charcha::kActionsPerAttempt>> scores;
};

LandmarkFrame neutral_face(std::int64_t t_ms);
void apply_action(LandmarkFrame& frame, ActionKind action);
void add_jitter(LandmarkFrame& frame, std::uint64_t seed, double sigma);

// Frames on a fixed grid starting at t = 0. The user performs each prompted
// action during the seconds set in the plan and holds a neutral face
// otherwise. Attempt k follows select_actions(attempt_seed(rng_seed, k)).
charcha::Trace make_trace(const TracePlan& plan, ExpectedTiming* timing = nullptr);

}  // namespace mvp::testing
