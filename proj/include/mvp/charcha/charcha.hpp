#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace mvp::charcha {

// Semantic landmarks the client must send for a face-present frame.
enum class Landmark {
  NoseTip,
  Chin,
  LeftEyeOuter,
  LeftEyeInner,
  RightEyeOuter,
  RightEyeInner,
  LeftUpperEyelid,
  LeftLowerEyelid,
  RightUpperEyelid,
  RightLowerEyelid,
  LeftMouthCorner,
  RightMouthCorner,
  UpperLipCenter,
  LowerLipCenter,
  LeftEyebrowCenter,
  RightEyebrowCenter,
  FaceOvalLeft,
  FaceOvalRight,
};
inline constexpr std::size_t kLandmarkCount = 18;

// Wire names: nose_tip, chin, left_eye_outer, ...
std::string_view landmark_name(Landmark l) noexcept;
std::optional<Landmark> landmark_from_name(std::string_view name) noexcept;

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct LandmarkFrame {
  std::int64_t t_ms = 0;
  bool face_present = false;
  std::array<Point, kLandmarkCount> points{};  // meaningful only when face_present

  const Point& operator[](Landmark l) const { return points[static_cast<std::size_t>(l)]; }
  Point& operator[](Landmark l) { return points[static_cast<std::size_t>(l)]; }
};

enum class ActionKind { TurnLeft, TurnRight, LookUp, Smile, OpenMouth, RaiseEyebrows, Wink };
inline constexpr std::size_t kActionCount = 7;
inline constexpr std::size_t kActionsPerAttempt = 6;
inline constexpr std::size_t kSecondsPerAction = 10;

std::string_view to_string(ActionKind a) noexcept;
ActionKind action_from_string(std::string_view name);

// Per-frame pose/expression measures. Distances are normalised by the
// interocular distance (eye-centre to eye-centre) so they do not depend on
// how far the user sits from the camera. Image y grows downwards.
struct Measures {
  double yaw = 0.0;    // (nose.x - eye midpoint x) / interocular
  double pitch = 0.0;  // (eye line y - nose.y) / interocular; grows when looking up
  double mouth_aspect_ratio = 0.0;  // lip gap / mouth width
  double ear_left = 0.0;            // eyelid gap / eye width
  double ear_right = 0.0;
  double brow_left = 0.0;  // (eye centre y - brow y) / interocular
  double brow_right = 0.0;
  double smile_width = 0.0;  // mouth width / interocular
  double interocular = 0.0;
};

// nullopt for faceless frames or degenerate geometry.
std::optional<Measures> measure(const LandmarkFrame& frame);

struct CalibrationProfile {
  double neutral_yaw = 0.0;
  double neutral_pitch = 0.0;
  double mouth_aspect_ratio = 0.0;
  double ear_left = 0.0;
  double ear_right = 0.0;
  double brow_left = 0.0;
  double brow_right = 0.0;
  double smile_width = 0.0;
  double interocular = 0.0;

  nlohmann::json to_json() const;
};

// Median of each measure over face-present frames; nullopt when fewer than
// min_frames usable frames or a ratio baseline is not positive.
std::optional<CalibrationProfile> calibrate(const std::vector<LandmarkFrame>& frames,
                                            std::size_t min_frames = 10);
std::optional<CalibrationProfile> calibrate_measures(std::vector<Measures> measures,
                                                     std::size_t min_frames = 10);

struct Thresholds {
  double yaw = 0.25;              // |yaw - neutral| beyond this, sign picks the side
  double pitch = 0.20;            // pitch - neutral at least this
  double smile_width = 1.15;      // x baseline
  double open_mouth = 2.0;        // MAR x baseline
  double brow = 1.25;             // x baseline, both brows
  double wink_closed = 0.45;      // closed eye EAR <= this x its baseline
  double wink_open = 0.8;         // other eye EAR >= this x its baseline

  static Thresholds from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

// TurnRight is the nose moving towards image +x.
bool detect_action(const LandmarkFrame& frame, const CalibrationProfile& profile, ActionKind kind,
                   const Thresholds& thresholds = {});
bool detect_action(const Measures& m, const CalibrationProfile& profile, ActionKind kind,
                   const Thresholds& thresholds = {});

// Uniform random ordering of 6 of the 7 actions, fixed by the seed.
std::array<ActionKind, kActionsPerAttempt> select_actions(std::uint64_t seed);
// Seed for an attempt's action draw: the session seed itself for attempt 1,
// a derived one for the retry.
std::uint64_t attempt_seed(std::uint64_t session_seed, int attempt);

struct ActionScore {
  ActionKind action = ActionKind::TurnLeft;
  std::array<bool, kSecondsPerAction> per_second{};
  int score = 0;
  bool passed = false;

  nlohmann::json to_json() const;
};

ActionScore score_action(ActionKind action, const std::array<bool, kSecondsPerAction>& per_second,
                         int pass_score = 6);

struct SpoofOptions {
  std::int64_t static_window_ms = 3000;
  // Variance of frame-to-frame landmark motion below this over a full window
  // reads as a held photo.
  double static_floor = 1e-8;
  double min_presence = 0.7;
  double max_interocular_jump = 0.4;
};

inline constexpr std::string_view kFlagStatic = "static input";
inline constexpr std::string_view kFlagIntermittent = "intermittent presence";
inline constexpr std::string_view kFlagFaceSwap = "face swap discontinuity";
inline constexpr std::string_view kFlagStreamGap = "stream gap";

std::vector<std::string> spoof_checks(const std::vector<LandmarkFrame>& frames,
                                      const SpoofOptions& options = {});

struct SessionConfig {
  Thresholds thresholds;
  SpoofOptions spoof;
  std::int64_t calibration_ms = 2000;
  std::int64_t prepare_ms = 5000;
  std::int64_t second_ms = 1000;
  int pass_score = 6;
  double second_hit_fraction = 0.5;
  std::size_t min_calibration_frames = 10;
  std::int64_t max_gap_ms = 3000;

  static SessionConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

enum class Phase { Idle, Calibrating, Prepare, ActionWindow, BetweenAttempts, Passed, Failed };
std::string_view to_string(Phase p) noexcept;

struct Verdict {
  bool passed = false;
  bool final = false;
  int attempt = 1;
  std::string reason;  // empty when passed
  std::vector<ActionKind> actions;
  std::vector<ActionScore> scores;
  std::vector<std::string> spoof_flags;
  std::int64_t started_ms = 0;  // attempt calibration start, FSM clock
  std::int64_t decided_ms = 0;

  std::int64_t duration_ms() const { return decided_ms - started_ms; }
  nlohmann::json to_json() const;  // the wire "verdict" message
};

struct SessionEvent {
  enum class Type { Prompt, SecondScore, CaptureRequest, Verdict };
  Type type = Type::Prompt;
  std::int64_t t_ms = 0;  // FSM time the event belongs to
  int attempt = 1;
  int index = 0;  // action index within the attempt
  ActionKind action = ActionKind::TurnLeft;
  std::int64_t window_start_ms = 0;
  std::int64_t deadline_ms = 0;
  int second = 0;
  bool hit = false;
  std::string tag;
  std::optional<Verdict> verdict;

  nlohmann::json to_json() const;
};

struct Snapshot {
  std::string tag;  // "<attempt>-neutral" or "<attempt>-<Action>"
  int attempt = 1;
  std::optional<ActionKind> action;
  std::int64_t t_ms = 0;
};

// One CHARCHA session. Single writer: feed frames in t_ms order from one
// thread. Attempt 1 uses select_actions(rng_seed); a retry draws a fresh
// sequence from a seed derived from rng_seed.
class Session {
 public:
  Session(std::string id, std::uint64_t rng_seed, SessionConfig config = {});

  std::vector<SessionEvent> on_frame(const LandmarkFrame& frame);
  // Advances the clock without a frame (closes elapsed seconds and phases).
  std::vector<SessionEvent> on_tick(std::int64_t t_ms);
  // End of stream or forced stop: a non-terminal session fails with reason.
  std::vector<SessionEvent> finish(const std::string& reason = "stream ended");

  const std::string& id() const { return id_; }
  std::uint64_t rng_seed() const { return seed_; }
  Phase phase() const { return phase_; }
  int attempt() const { return attempt_; }
  std::size_t action_index() const { return action_index_; }
  const std::array<ActionKind, kActionsPerAttempt>& actions() const { return actions_; }
  const std::vector<ActionScore>& scores() const { return scores_; }
  const std::optional<CalibrationProfile>& profile() const { return profile_; }
  const std::vector<Snapshot>& snapshots() const { return snapshots_; }
  // One verdict per finished attempt; the last is final once terminal.
  const std::vector<Verdict>& verdicts() const { return verdicts_; }
  bool terminal() const { return phase_ == Phase::Passed || phase_ == Phase::Failed; }
  std::optional<Verdict> final_verdict() const;
  std::vector<std::string> spoof_flags() const;

 private:
  void start_attempt(std::int64_t t, std::vector<SessionEvent>& out);
  void advance(std::int64_t t, std::vector<SessionEvent>& out);
  void end_calibration(std::int64_t t, std::vector<SessionEvent>& out);
  void start_prepare(std::int64_t t, std::vector<SessionEvent>& out);
  void close_second(std::vector<SessionEvent>& out);
  void end_window(std::int64_t t, std::vector<SessionEvent>& out);
  void decide(std::int64_t t, bool passed, const std::string& reason, bool force_final,
              std::vector<SessionEvent>& out);
  void capture(std::int64_t t, std::optional<ActionKind> action, std::vector<SessionEvent>& out);

  std::string id_;
  std::uint64_t seed_;
  SessionConfig config_;

  Phase phase_ = Phase::Idle;
  int attempt_ = 0;
  std::array<ActionKind, kActionsPerAttempt> actions_{};
  std::size_t action_index_ = 0;
  std::int64_t phase_start_ = 0;
  std::int64_t attempt_start_ = 0;
  bool calibration_retried_ = false;
  std::vector<Measures> calibration_;
  std::optional<CalibrationProfile> profile_;

  std::size_t second_ = 0;
  std::size_t second_frames_ = 0;
  std::size_t second_hits_ = 0;
  std::array<bool, kSecondsPerAction> per_second_{};
  bool captured_in_window_ = false;
  bool window_touched_ = false;

  std::vector<ActionScore> scores_;
  std::vector<Snapshot> snapshots_;
  std::vector<Verdict> verdicts_;
  std::vector<LandmarkFrame> frames_;  // whole session, for spoof checks
  bool stream_gap_ = false;
  std::optional<std::int64_t> last_t_;
};

// Wire parsing ----------------------------------------------------------

struct ClockTick {
  std::int64_t t_ms = 0;
};
using ClientMessage = std::variant<LandmarkFrame, ClockTick>;

// {"type":"frame","t_ms":N,"face_present":B,"points":{"nose_tip":[x,y,z],...}}
// or {"type":"tick","t_ms":N}. Throws Error(Protocol) with the reason.
ClientMessage parse_client_message(const nlohmann::json& msg);
nlohmann::json to_json(const LandmarkFrame& frame);

struct Trace {
  std::optional<std::uint64_t> rng_seed;  // from a {"type":"header"} line
  std::vector<ClientMessage> messages;
};

// Newline-delimited JSON. Blank lines are skipped; a bad line throws
// Error(Parse) naming its 1-based line number.
Trace parse_trace(std::istream& in);
Trace load_trace(const std::string& path);
void write_trace(std::ostream& out, const Trace& trace);

struct ReplayResult {
  Verdict verdict;
  std::vector<SessionEvent> events;
  std::vector<Snapshot> snapshots;
  std::vector<Verdict> attempts;

  // Deterministic JSON report: final verdict plus every attempt.
  nlohmann::json report() const;
};

// Feeds the trace through a fresh Session and finishes it. seed overrides
// the trace header; with neither, the seed is 0.
ReplayResult replay_trace(const Trace& trace, std::optional<std::uint64_t> seed = {},
                          const SessionConfig& config = {});

}  // namespace mvp::charcha
