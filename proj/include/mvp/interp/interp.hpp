#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/audio/types.hpp"
#include "mvp/timeline/timeline.hpp"

namespace mvp::interp {

struct LatentVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  double norm() const;

  bool operator==(const LatentVector&) const = default;
};

// |cos theta| above this falls back to normalised linear interpolation.
inline constexpr double kParallelThreshold = 1.0 - 1e-7;

// Great-circle interpolation. t = 0 and t = 1 return the endpoints exactly.
// Throws Domain on zero vectors, dimension mismatch, t outside [0, 1], or
// an antipodal pair whose linear fallback passes through the origin.
LatentVector slerp(const LatentVector& v0, const LatentVector& v1, double t);

// 1e-3 of the slice maximum, or 1e-6 for a silent slice.
double default_floor(std::span<const double> envelope_slice);

// Cumulative onset mass, re-based so weights run exactly from 0 to 1:
//   w_k = (C_k - C_0) / (C_{n-1} - C_0),  C_k = sum_{i<=k} (o_i + floor)
// where o is the slice linearly resampled to n_frames points.
std::vector<double> onset_weights(std::span<const double> envelope_slice, std::size_t n_frames,
                                  double floor);
std::vector<double> onset_weights(std::span<const double> envelope_slice, std::size_t n_frames);

struct ScheduleEntry {
  double time = 0.0;
  std::size_t segment_index = 0;
  std::pair<std::size_t, std::size_t> keyframe_pair{0, 1};
  double weight = 0.0;

  bool operator==(const ScheduleEntry&) const = default;
};

struct FrameSchedule {
  double fps = 12.0;
  std::vector<ScheduleEntry> entries;
  std::size_t keyframe_count = 0;  // segments + 1 closing keyframe

  bool operator==(const FrameSchedule&) const = default;
};

long round_half_up(double x);

// Frames for segment i span global indices [B_i, B_{i+1}) with
// B_i = round_half_up(start_i * fps) and the last boundary pinned to
// round_half_up(duration * fps); every segment keeps at least one frame.
// Segment i interpolates keyframe i -> i + 1; the final segment heads to a
// closing keyframe (index = segment count).
FrameSchedule build_frame_schedule(const timeline::PromptScript& script, double fps,
                                   const audio::OnsetEnvelope& envelope);

nlohmann::json to_json(const FrameSchedule& schedule);
FrameSchedule schedule_from_json(const nlohmann::json& doc);

}  // namespace mvp::interp
