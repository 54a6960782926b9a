#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/audio/types.hpp"
#include "mvp/emotion/emotion.hpp"

namespace mvp::timeline {

using emotion::Quadrant;

struct LyricEvent {
  double start = 0.0;
  double end = 0.0;
  std::string text;

  bool operator==(const LyricEvent&) const = default;
};

struct TranscriptResult {
  std::vector<LyricEvent> events;
  std::vector<std::string> warnings;
};

// Accepts the ASR tool's native shape ({"segments": [{start, end, text}]})
// or a bare array of segments. Whitespace-only texts are dropped; an
// overlap is clipped (end := next start) with a warning; negative or
// non-monotonic timestamps are a validation error naming every offending
// index.
TranscriptResult parse_transcript(const nlohmann::json& document);
TranscriptResult load_transcript(const std::string& path);

struct MergeOptions {
  double snap_tolerance = 0.25;
  double min_segment = 0.5;
};

struct MergedInterval {
  double start = 0.0;
  double end = 0.0;
  std::optional<std::string> lyric;
  Quadrant emotion = Quadrant::Serene;

  bool operator==(const MergedInterval&) const = default;
};

// Boundary set before snapping: {0, duration} plus every lyric start/end and
// emotion event time, clamped to [0, duration], sorted and deduplicated.
std::vector<double> raw_boundaries(const std::vector<LyricEvent>& lyrics,
                                   const std::vector<emotion::EmotionEvent>& emotions,
                                   double duration);

// Tiles [0, duration]. Interior boundaries move to the nearest beat within
// snap_tolerance; colliding boundaries merge; intervals shorter than
// min_segment are absorbed into the previous one (the first into the next).
std::vector<MergedInterval> merge_events(const std::vector<LyricEvent>& lyrics,
                                         const std::vector<emotion::EmotionEvent>& emotions,
                                         const audio::BeatGrid& beats, double duration,
                                         const MergeOptions& options = {});

struct PromptItem {
  double timestamp = 0.0;
  std::optional<std::string> lyric;
  Quadrant emotion = Quadrant::Serene;
};

struct PromptRequest {
  std::string system;
  std::vector<PromptItem> items;

  // The user turn: numbered items, one per line.
  std::string user_message() const;
};

struct PromptResponse {
  std::vector<std::string> prompts;
};

PromptRequest build_prompt_request(const std::vector<PromptItem>& items,
                                   const std::optional<std::string>& narrative_hint = {});
std::vector<PromptItem> to_prompt_items(const std::vector<MergedInterval>& merged);

// Parses an LLM reply into scene lines: a JSON array of strings, or one
// numbered line per item ("1. ...", "2) ...").
PromptResponse parse_prompt_reply(const std::string& text);

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual PromptResponse complete(const PromptRequest& request) = 0;
};

// Offline stand-in: "Scene: <lyric|mood> in <emotion> light" per item.
class MockLlmClient final : public LlmClient {
 public:
  PromptResponse complete(const PromptRequest& request) override;
};

// Chat-completion style endpoint: POST {"system", "user"} returning
// {"text": ...} or an OpenAI-shaped {"choices": [{"message": {"content"}}]}.
class HttpLlmClient final : public LlmClient {
 public:
  HttpLlmClient(std::string url, int timeout_ms);
  PromptResponse complete(const PromptRequest& request) override;

 private:
  std::string url_;
  int timeout_ms_;
};

struct LoraRef {
  std::string id;
  double scale = 0.8;

  bool operator==(const LoraRef&) const = default;
};

struct ScriptConfig {
  std::string style_preset = "realistic";
  std::optional<std::string> character_token;
  std::string checkpoint_id = "realistic-vision-v5.1";
  std::optional<LoraRef> lora;
  std::string negative_prompt;  // empty -> default_negative_prompt()
  std::uint64_t job_seed = 0;
};

struct TimelineSegment {
  double start = 0.0;
  double end = 0.0;
  std::optional<std::string> lyric;
  Quadrant emotion = Quadrant::Serene;
  std::string prompt;
  std::string negative_prompt;
  std::vector<std::string> style_tags;
  std::uint64_t seed = 0;

  bool operator==(const TimelineSegment&) const = default;
};

struct PromptScript {
  double duration = 0.0;
  std::vector<TimelineSegment> segments;
  std::string style_preset;
  std::optional<std::string> character_token;
  std::string checkpoint_id;
  std::optional<LoraRef> lora;
  bool degraded = false;
  std::vector<std::string> warnings;

  bool operator==(const PromptScript&) const = default;
};

const std::string& default_negative_prompt();
// Terms the default negative prompt is guaranteed to contain.
const std::vector<std::string>& safety_terms();
std::string_view emotion_descriptor(Quadrant q);
std::vector<std::string> style_tags(const std::string& preset);
std::uint64_t segment_seed(std::uint64_t job_seed, std::size_t index);

// Assembles per-segment prompts. A missing response or one whose size does
// not match the merged intervals falls back to "<emotion> scene: <lyric>"
// templates and marks the script degraded.
PromptScript compile_script(const std::vector<MergedInterval>& merged,
                            const std::optional<PromptResponse>& response,
                            const ScriptConfig& config);

nlohmann::json to_json(const PromptScript& script);
PromptScript script_from_json(const nlohmann::json& doc);

// Checks the tiling invariant; throws Validation on failure.
void validate_tiling(const PromptScript& script);

}  // namespace mvp::timeline
