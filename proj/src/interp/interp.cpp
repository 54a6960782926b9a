#include "mvp/interp/interp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mvp/error.hpp"

namespace mvp::interp {

double LatentVector::norm() const {
  double s = 0.0;
  for (double x : values) s += x * x;
  return std::sqrt(s);
}

LatentVector slerp(const LatentVector& v0, const LatentVector& v1, double t) {
  if (v0.dim() != v1.dim()) {
    throw Error(ErrorKind::Domain, "slerp dimension mismatch: " + std::to_string(v0.dim()) +
                                       " vs " + std::to_string(v1.dim()));
  }
  if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorKind::Domain, "slerp t must be in [0, 1]");
  const double n0 = v0.norm(), n1 = v1.norm();
  if (n0 == 0.0 || n1 == 0.0) throw Error(ErrorKind::Domain, "slerp of a zero vector");
  if (t == 0.0) return v0;
  if (t == 1.0) return v1;

  double dot = 0.0;
  for (std::size_t i = 0; i < v0.dim(); ++i) dot += v0.values[i] * v1.values[i];
  const double cos_theta = std::clamp(dot / (n0 * n1), -1.0, 1.0);

  LatentVector out;
  out.values.resize(v0.dim());
  if (std::abs(cos_theta) > kParallelThreshold) {
    for (std::size_t i = 0; i < v0.dim(); ++i) {
      out.values[i] = (1.0 - t) * v0.values[i] + t * v1.values[i];
    }
    const double n = out.norm();
    if (n < 1e-12 * std::max(n0, n1)) {
      throw Error(ErrorKind::Domain, "slerp between antipodal vectors is undefined at this t");
    }
    const double scale = ((1.0 - t) * n0 + t * n1) / n;
    for (auto& x : out.values) x *= scale;
    return out;
  }

  const double theta = std::acos(cos_theta);
  const double sin_theta = std::sin(theta);
  const double a = std::sin((1.0 - t) * theta) / sin_theta;
  const double b = std::sin(t * theta) / sin_theta;
  for (std::size_t i = 0; i < v0.dim(); ++i) {
    out.values[i] = a * v0.values[i] + b * v1.values[i];
  }
  return out;
}

double default_floor(std::span<const double> slice) {
  double peak = 0.0;
  for (double v : slice) peak = std::max(peak, v);
  return peak > 0.0 ? 1e-3 * peak : 1e-6;
}

std::vector<double> onset_weights(std::span<const double> slice, std::size_t n_frames,
                                  double floor) {
  if (n_frames == 0) throw Error(ErrorKind::InvalidArgument, "n_frames must be >= 1");
  if (!(floor > 0.0)) throw Error(ErrorKind::InvalidArgument, "floor must be > 0");
  if (n_frames == 1) return {1.0};

  std::vector<double> mass(n_frames, 0.0);
  if (!slice.empty()) {
    const double span = static_cast<double>(slice.size() - 1);
    for (std::size_t k = 0; k < n_frames; ++k) {
      const double pos = span * static_cast<double>(k) / static_cast<double>(n_frames - 1);
      const auto i0 = static_cast<std::size_t>(pos);
      const std::size_t i1 = std::min(i0 + 1, slice.size() - 1);
      const double frac = pos - static_cast<double>(i0);
      mass[k] = std::max(0.0, (1.0 - frac) * slice[i0] + frac * slice[i1]);
    }
  }

  std::vector<double> cumulative(n_frames);
  double acc = 0.0;
  for (std::size_t k = 0; k < n_frames; ++k) {
    acc += mass[k] + floor;
    cumulative[k] = acc;
  }
  const double base = cumulative.front();
  const double total = cumulative.back() - base;
  std::vector<double> w(n_frames);
  for (std::size_t k = 0; k < n_frames; ++k) w[k] = (cumulative[k] - base) / total;
  w.front() = 0.0;
  w.back() = 1.0;
  return w;
}

std::vector<double> onset_weights(std::span<const double> slice, std::size_t n_frames) {
  return onset_weights(slice, n_frames, default_floor(slice));
}

long round_half_up(double x) { return static_cast<long>(std::floor(x + 0.5)); }

FrameSchedule build_frame_schedule(const timeline::PromptScript& script, double fps,
                                   const audio::OnsetEnvelope& envelope) {
  if (!(fps > 0.0)) throw Error(ErrorKind::InvalidArgument, "fps must be > 0");
  timeline::validate_tiling(script);
  const double hop = envelope.hop_seconds();
  if (envelope.duration() + 1e-9 < script.duration - hop) {
    throw Error(ErrorKind::Validation,
                "onset envelope covers " + std::to_string(envelope.duration()) +
                    " s, shorter than the script duration " + std::to_string(script.duration) +
                    " s");
  }

  const auto& segs = script.segments;
  const std::size_t n_seg = segs.size();
  const long total = std::max<long>(static_cast<long>(n_seg), round_half_up(script.duration * fps));

  // Frame-space boundaries, nondecreasing with >= 1 frame per segment.
  std::vector<long> bounds(n_seg + 1);
  bounds[0] = 0;
  for (std::size_t i = 1; i < n_seg; ++i) {
    const long ideal = round_half_up(segs[i].start * fps);
    const long lo = bounds[i - 1] + 1;
    const long hi = total - static_cast<long>(n_seg - i);
    bounds[i] = std::clamp(ideal, lo, hi);
  }
  bounds[n_seg] = total;

  FrameSchedule schedule;
  schedule.fps = fps;
  schedule.keyframe_count = n_seg + 1;
  schedule.entries.reserve(static_cast<std::size_t>(total));
  const auto& env = envelope.values;
  for (std::size_t i = 0; i < n_seg; ++i) {
    const auto n_frames = static_cast<std::size_t>(bounds[i + 1] - bounds[i]);
    const double fr = envelope.frame_rate;
    auto lo = static_cast<std::size_t>(std::max(0.0, std::floor(segs[i].start * fr)));
    auto hi = static_cast<std::size_t>(std::max(0.0, std::ceil(segs[i].end * fr)));
    lo = std::min(lo, env.size() ? env.size() - 1 : 0);
    hi = std::clamp(hi, lo + 1, std::max<std::size_t>(env.size(), lo + 1));
    std::span<const double> slice;
    if (!env.empty()) slice = std::span<const double>(env).subspan(lo, std::min(hi, env.size()) - lo);
    const auto weights = onset_weights(slice, n_frames);
    for (std::size_t k = 0; k < n_frames; ++k) {
      const long g = bounds[i] + static_cast<long>(k);
      schedule.entries.push_back({static_cast<double>(g) / fps, i, {i, i + 1}, weights[k]});
    }
  }
  return schedule;
}

nlohmann::json to_json(const FrameSchedule& schedule) {
  auto entries = nlohmann::json::array();
  for (const auto& e : schedule.entries) {
    entries.push_back({{"time", e.time},
                       {"segment", e.segment_index},
                       {"pair", {e.keyframe_pair.first, e.keyframe_pair.second}},
                       {"weight", e.weight}});
  }
  return {{"fps", schedule.fps},
          {"keyframe_count", schedule.keyframe_count},
          {"entries", entries}};
}

FrameSchedule schedule_from_json(const nlohmann::json& doc) {
  try {
    FrameSchedule s;
    s.fps = doc.at("fps").get<double>();
    s.keyframe_count = doc.at("keyframe_count").get<std::size_t>();
    for (const auto& e : doc.at("entries")) {
      s.entries.push_back({e.at("time").get<double>(), e.at("segment").get<std::size_t>(),
                           {e.at("pair")[0].get<std::size_t>(), e.at("pair")[1].get<std::size_t>()},
                           e.at("weight").get<double>()});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("frame schedule: ") + e.what());
  }
}

}  // namespace mvp::interp
