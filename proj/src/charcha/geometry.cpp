#include <algorithm>
#include <cmath>

#include "mvp/charcha/charcha.hpp"
#include "mvp/error.hpp"
#include "mvp/util/random.hpp"

namespace mvp::charcha {

namespace {

constexpr std::string_view kLandmarkNames[kLandmarkCount] = {
    "nose_tip",           "chin",
    "left_eye_outer",     "left_eye_inner",
    "right_eye_outer",    "right_eye_inner",
    "left_upper_eyelid",  "left_lower_eyelid",
    "right_upper_eyelid", "right_lower_eyelid",
    "left_mouth_corner",  "right_mouth_corner",
    "upper_lip_center",   "lower_lip_center",
    "left_eyebrow_center", "right_eyebrow_center",
    "face_oval_left",     "face_oval_right",
};

constexpr std::string_view kActionNames[kActionCount] = {
    "TurnLeft", "TurnRight", "LookUp", "Smile", "OpenMouth", "RaiseEyebrows", "Wink"};

double dist(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

Point mid(const Point& a, const Point& b) { return {(a.x + b.x) / 2, (a.y + b.y) / 2, (a.z + b.z) / 2}; }

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string_view landmark_name(Landmark l) noexcept {
  return kLandmarkNames[static_cast<std::size_t>(l)];
}

std::optional<Landmark> landmark_from_name(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    if (kLandmarkNames[i] == name) return static_cast<Landmark>(i);
  }
  return std::nullopt;
}

std::string_view to_string(ActionKind a) noexcept { return kActionNames[static_cast<std::size_t>(a)]; }

ActionKind action_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kActionCount; ++i) {
    if (kActionNames[i] == name) return static_cast<ActionKind>(i);
  }
  throw Error(ErrorKind::Parse, "unknown action \"" + std::string(name) + "\"");
}

std::optional<Measures> measure(const LandmarkFrame& f) {
  if (!f.face_present) return std::nullopt;
  using L = Landmark;
  const Point le = mid(f[L::LeftEyeOuter], f[L::LeftEyeInner]);
  const Point re = mid(f[L::RightEyeOuter], f[L::RightEyeInner]);
  const double io = dist(le, re);
  const double mouth_w = dist(f[L::LeftMouthCorner], f[L::RightMouthCorner]);
  const double lw = dist(f[L::LeftEyeOuter], f[L::LeftEyeInner]);
  const double rw = dist(f[L::RightEyeOuter], f[L::RightEyeInner]);
  if (!(io > 1e-6) || !(mouth_w > 1e-6) || !(lw > 1e-6) || !(rw > 1e-6)) return std::nullopt;

  Measures m;
  m.interocular = io;
  const Point eyes = mid(le, re);
  m.yaw = (f[L::NoseTip].x - eyes.x) / io;
  m.pitch = (eyes.y - f[L::NoseTip].y) / io;
  m.mouth_aspect_ratio = dist(f[L::UpperLipCenter], f[L::LowerLipCenter]) / mouth_w;
  m.ear_left = dist(f[L::LeftUpperEyelid], f[L::LeftLowerEyelid]) / lw;
  m.ear_right = dist(f[L::RightUpperEyelid], f[L::RightLowerEyelid]) / rw;
  m.brow_left = (le.y - f[L::LeftEyebrowCenter].y) / io;
  m.brow_right = (re.y - f[L::RightEyebrowCenter].y) / io;
  m.smile_width = mouth_w / io;
  for (double v : {m.yaw, m.pitch, m.mouth_aspect_ratio, m.ear_left, m.ear_right, m.brow_left,
                   m.brow_right, m.smile_width}) {
    if (!std::isfinite(v)) return std::nullopt;
  }
  return m;
}

nlohmann::json CalibrationProfile::to_json() const {
  return {{"neutral_yaw", neutral_yaw},   {"neutral_pitch", neutral_pitch},
          {"mouth_aspect_ratio", mouth_aspect_ratio},
          {"ear_left", ear_left},         {"ear_right", ear_right},
          {"brow_left", brow_left},       {"brow_right", brow_right},
          {"smile_width", smile_width},   {"interocular", interocular}};
}

std::optional<CalibrationProfile> calibrate_measures(std::vector<Measures> ms,
                                                     std::size_t min_frames) {
  if (ms.size() < std::max<std::size_t>(1, min_frames)) return std::nullopt;
  auto med = [&](double Measures::*field) {
    std::vector<double> v;
    v.reserve(ms.size());
    for (const auto& m : ms) v.push_back(m.*field);
    return median(std::move(v));
  };
  CalibrationProfile p;
  p.neutral_yaw = med(&Measures::yaw);
  p.neutral_pitch = med(&Measures::pitch);
  p.mouth_aspect_ratio = med(&Measures::mouth_aspect_ratio);
  p.ear_left = med(&Measures::ear_left);
  p.ear_right = med(&Measures::ear_right);
  p.brow_left = med(&Measures::brow_left);
  p.brow_right = med(&Measures::brow_right);
  p.smile_width = med(&Measures::smile_width);
  p.interocular = med(&Measures::interocular);
  for (double v : {p.mouth_aspect_ratio, p.ear_left, p.ear_right, p.brow_left, p.brow_right,
                   p.smile_width, p.interocular}) {
    if (!(v > 0.0) || !std::isfinite(v)) return std::nullopt;
  }
  return p;
}

std::optional<CalibrationProfile> calibrate(const std::vector<LandmarkFrame>& frames,
                                            std::size_t min_frames) {
  std::vector<Measures> ms;
  for (const auto& f : frames) {
    if (auto m = measure(f)) ms.push_back(*m);
  }
  return calibrate_measures(std::move(ms), min_frames);
}

Thresholds Thresholds::from_json(const nlohmann::json& doc) {
  Thresholds t;
  if (!doc.is_object()) throw Error(ErrorKind::Config, "charcha thresholds must be an object");
  auto get = [&](const char* key, double& out) {
    if (!doc.contains(key)) return;
    if (!doc[key].is_number() || !(doc[key].get<double>() > 0.0)) {
      throw Error(ErrorKind::Config, std::string("charcha threshold ") + key + " must be > 0");
    }
    out = doc[key].get<double>();
  };
  get("yaw", t.yaw);
  get("pitch", t.pitch);
  get("smile_width", t.smile_width);
  get("open_mouth", t.open_mouth);
  get("brow", t.brow);
  get("wink_closed", t.wink_closed);
  get("wink_open", t.wink_open);
  return t;
}

nlohmann::json Thresholds::to_json() const {
  return {{"yaw", yaw},   {"pitch", pitch},       {"smile_width", smile_width},
          {"open_mouth", open_mouth}, {"brow", brow}, {"wink_closed", wink_closed},
          {"wink_open", wink_open}};
}

bool detect_action(const Measures& m, const CalibrationProfile& p, ActionKind kind,
                   const Thresholds& t) {
  switch (kind) {
    case ActionKind::TurnLeft: return m.yaw - p.neutral_yaw <= -t.yaw;
    case ActionKind::TurnRight: return m.yaw - p.neutral_yaw >= t.yaw;
    case ActionKind::LookUp: return m.pitch - p.neutral_pitch >= t.pitch;
    case ActionKind::Smile:
      return m.smile_width >= t.smile_width * p.smile_width &&
             m.mouth_aspect_ratio < t.open_mouth * p.mouth_aspect_ratio;
    case ActionKind::OpenMouth: return m.mouth_aspect_ratio >= t.open_mouth * p.mouth_aspect_ratio;
    case ActionKind::RaiseEyebrows:
      return m.brow_left >= t.brow * p.brow_left && m.brow_right >= t.brow * p.brow_right;
    case ActionKind::Wink: {
      const bool left = m.ear_left <= t.wink_closed * p.ear_left &&
                        m.ear_right >= t.wink_open * p.ear_right;
      const bool right = m.ear_right <= t.wink_closed * p.ear_right &&
                         m.ear_left >= t.wink_open * p.ear_left;
      return left || right;
    }
  }
  return false;
}

bool detect_action(const LandmarkFrame& frame, const CalibrationProfile& profile, ActionKind kind,
                   const Thresholds& thresholds) {
  const auto m = measure(frame);
  return m && detect_action(*m, profile, kind, thresholds);
}

std::array<ActionKind, kActionsPerAttempt> select_actions(std::uint64_t seed) {
  std::array<ActionKind, kActionCount> all{};
  for (std::size_t i = 0; i < kActionCount; ++i) all[i] = static_cast<ActionKind>(i);
  util::Rng rng(seed);
  for (std::size_t i = kActionCount - 1; i > 0; --i) {
    std::swap(all[i], all[rng.below(i + 1)]);
  }
  std::array<ActionKind, kActionsPerAttempt> out{};
  std::copy_n(all.begin(), kActionsPerAttempt, out.begin());
  return out;
}

nlohmann::json ActionScore::to_json() const {
  return {{"action", to_string(action)},
          {"per_second", std::vector<bool>(per_second.begin(), per_second.end())},
          {"score", score},
          {"passed", passed}};
}

ActionScore score_action(ActionKind action, const std::array<bool, kSecondsPerAction>& per_second,
                         int pass_score) {
  ActionScore s;
  s.action = action;
  s.per_second = per_second;
  s.score = static_cast<int>(std::count(per_second.begin(), per_second.end(), true));
  s.passed = s.score >= pass_score;
  return s;
}

std::vector<std::string> spoof_checks(const std::vector<LandmarkFrame>& frames,
                                      const SpoofOptions& options) {
  std::vector<std::string> flags;
  if (frames.empty()) return flags;

  // Static input: over runs of consecutive face-present frames, the variance
  // of frame-to-frame coordinate differences inside any window spanning at
  // least static_window_ms. Prefix sums make each window O(1).
  bool is_static = false;
  std::size_t run_start = 0;
  while (!is_static && run_start < frames.size()) {
    if (!frames[run_start].face_present) {
      ++run_start;
      continue;
    }
    std::size_t run_end = run_start;
    while (run_end + 1 < frames.size() && frames[run_end + 1].face_present) ++run_end;
    // d_k for k in (run_start, run_end]: per-frame sums over all coordinates.
    const std::size_t n = run_end - run_start + 1;
    std::vector<double> s1(n, 0.0), s2(n, 0.0);  // prefix sums of sum(d) and sum(d^2)
    for (std::size_t k = 1; k < n; ++k) {
      const auto& a = frames[run_start + k - 1];
      const auto& b = frames[run_start + k];
      double sd = 0.0, sd2 = 0.0;
      for (std::size_t i = 0; i < kLandmarkCount; ++i) {
        for (double d : {b.points[i].x - a.points[i].x, b.points[i].y - a.points[i].y}) {
          sd += d;
          sd2 += d * d;
        }
      }
      s1[k] = s1[k - 1] + sd;
      s2[k] = s2[k - 1] + sd2;
    }
    std::size_t lo = 0;
    for (std::size_t hi = 1; hi < n && !is_static; ++hi) {
      const auto t_hi = frames[run_start + hi].t_ms;
      // Smallest window ending at hi that still spans the full duration.
      while (lo + 1 < hi && t_hi - frames[run_start + lo + 1].t_ms >= options.static_window_ms) ++lo;
      if (t_hi - frames[run_start + lo].t_ms < options.static_window_ms) continue;
      const double count = static_cast<double>(hi - lo) * kLandmarkCount * 2;
      const double mean = (s1[hi] - s1[lo]) / count;
      const double var = (s2[hi] - s2[lo]) / count - mean * mean;
      if (var < options.static_floor) is_static = true;
    }
    run_start = run_end + 1;
  }
  if (is_static) flags.emplace_back(kFlagStatic);

  const auto present = std::count_if(frames.begin(), frames.end(),
                                     [](const LandmarkFrame& f) { return f.face_present; });
  if (static_cast<double>(present) < options.min_presence * static_cast<double>(frames.size())) {
    flags.emplace_back(kFlagIntermittent);
  }

  std::optional<double> prev_io;
  for (const auto& f : frames) {
    const auto m = measure(f);
    if (!m) continue;
    if (prev_io && std::abs(m->interocular / *prev_io - 1.0) > options.max_interocular_jump) {
      flags.emplace_back(kFlagFaceSwap);
      break;
    }
    prev_io = m->interocular;
  }
  return flags;
}

}  // namespace mvp::charcha
