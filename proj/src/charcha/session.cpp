#include <algorithm>

#include "mvp/charcha/charcha.hpp"
#include "mvp/error.hpp"
#include "mvp/util/random.hpp"

namespace mvp::charcha {

namespace {

constexpr std::uint64_t kRetrySalt = 0xC4A2C4A2ULL;

std::string attempt_tag(int attempt, std::string_view name) {
  return std::to_string(attempt) + "-" + std::string(name);
}

}  // namespace

std::uint64_t attempt_seed(std::uint64_t session_seed, int attempt) {
  if (attempt <= 1) return session_seed;
  return util::derive_seed(session_seed, kRetrySalt + static_cast<std::uint64_t>(attempt));
}

std::string_view to_string(Phase p) noexcept {
  switch (p) {
    case Phase::Idle: return "Idle";
    case Phase::Calibrating: return "Calibrating";
    case Phase::Prepare: return "Prepare";
    case Phase::ActionWindow: return "ActionWindow";
    case Phase::BetweenAttempts: return "BetweenAttempts";
    case Phase::Passed: return "Passed";
    case Phase::Failed: return "Failed";
  }
  return "Failed";
}

SessionConfig SessionConfig::from_json(const nlohmann::json& doc) {
  SessionConfig c;
  if (!doc.is_object()) throw Error(ErrorKind::Config, "charcha config must be an object");
  if (doc.contains("thresholds")) c.thresholds = Thresholds::from_json(doc["thresholds"]);
  auto ms = [&](const char* key, std::int64_t& out) {
    if (!doc.contains(key)) return;
    if (!doc[key].is_number_integer() || doc[key].get<std::int64_t>() <= 0) {
      throw Error(ErrorKind::Config, std::string("charcha ") + key + " must be a positive integer");
    }
    out = doc[key].get<std::int64_t>();
  };
  ms("calibration_ms", c.calibration_ms);
  ms("prepare_ms", c.prepare_ms);
  ms("second_ms", c.second_ms);
  ms("max_gap_ms", c.max_gap_ms);
  if (doc.contains("pass_score")) {
    c.pass_score = doc["pass_score"].get<int>();
    if (c.pass_score < 1 || c.pass_score > static_cast<int>(kSecondsPerAction)) {
      throw Error(ErrorKind::Config, "charcha pass_score must be in [1, 10]");
    }
  }
  if (doc.contains("second_hit_fraction")) {
    c.second_hit_fraction = doc["second_hit_fraction"].get<double>();
    if (!(c.second_hit_fraction > 0.0 && c.second_hit_fraction <= 1.0)) {
      throw Error(ErrorKind::Config, "charcha second_hit_fraction must be in (0, 1]");
    }
  }
  if (doc.contains("min_calibration_frames")) {
    c.min_calibration_frames = doc["min_calibration_frames"].get<std::size_t>();
  }
  if (doc.contains("spoof")) {
    const auto& s = doc["spoof"];
    c.spoof.static_window_ms = s.value("static_window_ms", c.spoof.static_window_ms);
    c.spoof.static_floor = s.value("static_floor", c.spoof.static_floor);
    c.spoof.min_presence = s.value("min_presence", c.spoof.min_presence);
    c.spoof.max_interocular_jump = s.value("max_interocular_jump", c.spoof.max_interocular_jump);
  }
  return c;
}

nlohmann::json SessionConfig::to_json() const {
  return {{"thresholds", thresholds.to_json()},
          {"calibration_ms", calibration_ms},
          {"prepare_ms", prepare_ms},
          {"second_ms", second_ms},
          {"pass_score", pass_score},
          {"second_hit_fraction", second_hit_fraction},
          {"min_calibration_frames", min_calibration_frames},
          {"max_gap_ms", max_gap_ms},
          {"spoof",
           {{"static_window_ms", spoof.static_window_ms},
            {"static_floor", spoof.static_floor},
            {"min_presence", spoof.min_presence},
            {"max_interocular_jump", spoof.max_interocular_jump}}}};
}

nlohmann::json Verdict::to_json() const {
  nlohmann::json scores_json = nlohmann::json::array();
  for (const auto& s : scores) scores_json.push_back(s.to_json());
  nlohmann::json actions_json = nlohmann::json::array();
  for (auto a : actions) actions_json.push_back(to_string(a));
  return {{"type", "verdict"},
          {"passed", passed},
          {"final", final},
          {"attempt", attempt},
          {"reason", reason},
          {"actions", actions_json},
          {"scores", scores_json},
          {"spoof_flags", spoof_flags},
          {"duration_ms", duration_ms()}};
}

nlohmann::json SessionEvent::to_json() const {
  switch (type) {
    case Type::Prompt:
      return {{"type", "prompt"},
              {"action", charcha::to_string(action)},
              {"deadline_ms", deadline_ms},
              {"window_start_ms", window_start_ms},
              {"index", index},
              {"attempt", attempt}};
    case Type::SecondScore:
      return {{"type", "second_score"},
              {"second", second},
              {"hit", hit},
              {"action", charcha::to_string(action)},
              {"index", index},
              {"attempt", attempt}};
    case Type::CaptureRequest:
      return {{"type", "capture_request"}, {"tag", tag}};
    case Type::Verdict:
      return verdict ? verdict->to_json() : nlohmann::json{{"type", "verdict"}};
  }
  return {};
}

Session::Session(std::string id, std::uint64_t rng_seed, SessionConfig config)
    : id_(std::move(id)), seed_(rng_seed), config_(std::move(config)) {}

std::optional<Verdict> Session::final_verdict() const {
  if (!terminal() || verdicts_.empty()) return std::nullopt;
  return verdicts_.back();
}

std::vector<std::string> Session::spoof_flags() const {
  auto flags = spoof_checks(frames_, config_.spoof);
  if (stream_gap_) flags.emplace_back(kFlagStreamGap);
  return flags;
}

void Session::start_attempt(std::int64_t t, std::vector<SessionEvent>&) {
  ++attempt_;
  actions_ = select_actions(attempt_seed(seed_, attempt_));
  action_index_ = 0;
  scores_.clear();
  profile_.reset();
  calibration_.clear();
  calibration_retried_ = false;
  attempt_start_ = t;
  phase_start_ = t;
  phase_ = Phase::Calibrating;
}

void Session::capture(std::int64_t t, std::optional<ActionKind> action,
                      std::vector<SessionEvent>& out) {
  Snapshot s;
  s.attempt = attempt_;
  s.action = action;
  s.t_ms = t;
  s.tag = attempt_tag(attempt_, action ? to_string(*action) : "neutral");
  SessionEvent ev;
  ev.type = SessionEvent::Type::CaptureRequest;
  ev.t_ms = t;
  ev.attempt = attempt_;
  ev.index = static_cast<int>(action_index_);
  ev.tag = s.tag;
  if (action) ev.action = *action;
  snapshots_.push_back(std::move(s));
  out.push_back(std::move(ev));
}

void Session::end_calibration(std::int64_t t, std::vector<SessionEvent>& out) {
  profile_ = calibrate_measures(std::move(calibration_), config_.min_calibration_frames);
  calibration_.clear();
  if (!profile_) {
    if (!calibration_retried_) {
      calibration_retried_ = true;
      phase_start_ = t;  // same phase, fresh window
      return;
    }
    decide(t, false, "no stable face", true, out);
    return;
  }
  capture(t, std::nullopt, out);
  start_prepare(t, out);
}

void Session::start_prepare(std::int64_t t, std::vector<SessionEvent>& out) {
  phase_ = Phase::Prepare;
  phase_start_ = t;
  SessionEvent ev;
  ev.type = SessionEvent::Type::Prompt;
  ev.t_ms = t;
  ev.attempt = attempt_;
  ev.index = static_cast<int>(action_index_);
  ev.action = actions_[action_index_];
  ev.window_start_ms = t + config_.prepare_ms;
  ev.deadline_ms = ev.window_start_ms + config_.second_ms * static_cast<std::int64_t>(kSecondsPerAction);
  out.push_back(std::move(ev));
}

void Session::close_second(std::vector<SessionEvent>& out) {
  const bool hit = second_frames_ > 0 && static_cast<double>(second_hits_) >=
                                             config_.second_hit_fraction * static_cast<double>(second_frames_);
  per_second_[second_] = hit;
  SessionEvent ev;
  ev.type = SessionEvent::Type::SecondScore;
  ev.t_ms = phase_start_ + config_.second_ms * static_cast<std::int64_t>(second_ + 1);
  ev.attempt = attempt_;
  ev.index = static_cast<int>(action_index_);
  ev.action = actions_[action_index_];
  ev.second = static_cast<int>(second_);
  ev.hit = hit;
  out.push_back(std::move(ev));
  ++second_;
  second_frames_ = 0;
  second_hits_ = 0;
  const auto passes = std::count(per_second_.begin(), per_second_.end(), true);
  if (passes >= config_.pass_score || second_ == kSecondsPerAction) {
    end_window(phase_start_ + config_.second_ms * static_cast<std::int64_t>(second_), out);
  }
}

void Session::end_window(std::int64_t t, std::vector<SessionEvent>& out) {
  // Seconds never reached after an early finish stay false.
  scores_.push_back(score_action(actions_[action_index_], per_second_, config_.pass_score));
  ++action_index_;
  if (action_index_ < kActionsPerAttempt) {
    start_prepare(t, out);
    return;
  }
  const bool passed = std::all_of(scores_.begin(), scores_.end(),
                                  [](const ActionScore& s) { return s.passed; });
  decide(t, passed, passed ? "" : "action score below threshold", false, out);
}

void Session::decide(std::int64_t t, bool passed, const std::string& reason, bool force_final,
                     std::vector<SessionEvent>& out) {
  Verdict v;
  v.passed = passed;
  v.attempt = std::max(attempt_, 1);
  v.reason = reason;
  if (attempt_ > 0) v.actions.assign(actions_.begin(), actions_.end());
  v.scores = scores_;
  v.spoof_flags = spoof_flags();
  v.started_ms = attempt_start_;
  v.decided_ms = t;
  if (passed) {
    phase_ = Phase::Passed;
    v.final = true;
  } else if (attempt_ < 2 && !force_final) {
    phase_ = Phase::BetweenAttempts;
    v.final = false;
  } else {
    phase_ = Phase::Failed;
    v.final = true;
  }
  verdicts_.push_back(v);
  SessionEvent ev;
  ev.type = SessionEvent::Type::Verdict;
  ev.t_ms = t;
  ev.attempt = v.attempt;
  ev.verdict = std::move(v);
  out.push_back(std::move(ev));
}

void Session::advance(std::int64_t t, std::vector<SessionEvent>& out) {
  for (;;) {
    switch (phase_) {
      case Phase::Calibrating:
        if (t < phase_start_ + config_.calibration_ms) return;
        end_calibration(phase_start_ + config_.calibration_ms, out);
        break;
      case Phase::Prepare:
        if (t < phase_start_ + config_.prepare_ms) return;
        phase_ = Phase::ActionWindow;
        phase_start_ += config_.prepare_ms;
        second_ = 0;
        second_frames_ = 0;
        second_hits_ = 0;
        per_second_.fill(false);
        captured_in_window_ = false;
        break;
      case Phase::ActionWindow:
        if (t < phase_start_ + config_.second_ms * static_cast<std::int64_t>(second_ + 1)) return;
        window_touched_ = true;
        close_second(out);
        break;
      default:
        return;
    }
  }
}

std::vector<SessionEvent> Session::on_tick(std::int64_t t_ms) {
  std::vector<SessionEvent> out;
  if (terminal()) return out;
  if (last_t_ && t_ms < *last_t_) {
    decide(*last_t_, false, "clock violation", true, out);
    return out;
  }
  if (phase_ == Phase::Idle || phase_ == Phase::BetweenAttempts) return out;
  if (last_t_ && t_ms - *last_t_ > config_.max_gap_ms && phase_ == Phase::ActionWindow) {
    stream_gap_ = true;
  }
  advance(t_ms, out);
  last_t_ = t_ms;
  return out;
}

std::vector<SessionEvent> Session::on_frame(const LandmarkFrame& frame) {
  std::vector<SessionEvent> out;
  if (terminal()) return out;
  const std::int64_t t = frame.t_ms;
  if (last_t_ && t < *last_t_) {
    decide(*last_t_, false, "clock violation", true, out);
    return out;
  }
  if (phase_ == Phase::Idle || phase_ == Phase::BetweenAttempts) start_attempt(t, out);

  const bool long_gap = last_t_ && t - *last_t_ > config_.max_gap_ms;
  const bool was_in_window = phase_ == Phase::ActionWindow;
  window_touched_ = false;
  advance(t, out);
  if (long_gap && (was_in_window || window_touched_ || phase_ == Phase::ActionWindow)) {
    stream_gap_ = true;
  }
  last_t_ = t;
  frames_.push_back(frame);

  switch (phase_) {
    case Phase::Calibrating:
      if (auto m = measure(frame)) calibration_.push_back(*m);
      break;
    case Phase::ActionWindow: {
      ++second_frames_;
      const auto m = measure(frame);
      if (m && profile_ &&
          detect_action(*m, *profile_, actions_[action_index_], config_.thresholds)) {
        ++second_hits_;
        if (!captured_in_window_) {
          captured_in_window_ = true;
          capture(t, actions_[action_index_], out);
        }
      }
      break;
    }
    default:
      break;
  }
  return out;
}

std::vector<SessionEvent> Session::finish(const std::string& reason) {
  std::vector<SessionEvent> out;
  if (terminal()) return out;
  decide(last_t_.value_or(0), false, reason, true, out);
  return out;
}

}  // namespace mvp::charcha
