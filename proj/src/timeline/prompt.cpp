#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <regex>
#include <sstream>

#include "mvp/error.hpp"
#include "mvp/timeline/timeline.hpp"
#include "mvp/util/http.hpp"
#include "mvp/util/random.hpp"

namespace mvp::timeline {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string clock_label(double seconds) {
  const auto total_cs = static_cast<long>(std::llround(seconds * 100.0));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02ld:%02ld.%02ld", total_cs / 6000, (total_cs / 100) % 60,
                total_cs % 100);
  return buf;
}

std::string mood_phrase(Quadrant q) {
  switch (q) {
    case Quadrant::Melancholy: return "a quiet, lonely moment";
    case Quadrant::Serene: return "a calm, peaceful moment";
    case Quadrant::Tense: return "a restless, uneasy moment";
    case Quadrant::Euphoric: return "a joyful, energetic moment";
  }
  return "a calm, peaceful moment";
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

std::string PromptRequest::user_message() const {
  std::ostringstream out;
  out << "Song items (" << items.size() << "):\n";
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    out << (i + 1) << ". [" << clock_label(it.timestamp) << "] (" << emotion::to_string(it.emotion)
        << ") ";
    if (it.lyric) {
      out << '"' << *it.lyric << '"';
    } else {
      out << "[instrumental] no lyric; describe a mood-only scene";
    }
    out << '\n';
  }
  return out.str();
}

PromptRequest build_prompt_request(const std::vector<PromptItem>& items,
                                   const std::optional<std::string>& narrative_hint) {
  if (items.empty()) throw Error(ErrorKind::InvalidArgument, "prompt request needs at least one item");
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (items[i].timestamp < items[i - 1].timestamp) {
      throw Error(ErrorKind::InvalidArgument, "prompt items must be time-ordered");
    }
  }
  const std::string n = std::to_string(items.size());
  std::string system =
      "You write storyboards for music videos. You receive the timed lyric lines of one song, "
      "each tagged with the emotion of the music at that moment. For every numbered item write "
      "exactly one visual scene description to be used as a text-to-image prompt. Tell one "
      "continuous story across the items so consecutive scenes read as a single narrative with "
      "the same main character. Describe what the viewer sees: setting, subject, action, "
      "lighting and mood. Do not quote or literally restate the lyric; interpret it. Items "
      "marked [instrumental] have no lyric: describe a mood-only scene that fits their emotion "
      "and the surrounding story.\n"
      "Reply with exactly " + n + " lines, numbered 1 to " + n +
      ", one scene per line, and nothing else.";
  if (narrative_hint && !narrative_hint->empty()) {
    system += "\nStory guidance: " + *narrative_hint;
  }
  return PromptRequest{std::move(system), items};
}

std::vector<PromptItem> to_prompt_items(const std::vector<MergedInterval>& merged) {
  std::vector<PromptItem> items;
  items.reserve(merged.size());
  for (const auto& m : merged) items.push_back({m.start, m.lyric, m.emotion});
  return items;
}

PromptResponse parse_prompt_reply(const std::string& text) {
  PromptResponse out;
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '[') {
    try {
      for (const auto& s : nlohmann::json::parse(body)) out.prompts.push_back(trim(s.get<std::string>()));
      return out;
    } catch (const nlohmann::json::exception&) {
      out.prompts.clear();
    }
  }
  static const std::regex numbering(R"(^\s*\d+\s*[.):\-]\s*)");
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(std::regex_replace(line, numbering, ""));
    if (!line.empty()) out.prompts.push_back(std::move(line));
  }
  return out;
}

PromptResponse MockLlmClient::complete(const PromptRequest& request) {
  PromptResponse out;
  for (const auto& item : request.items) {
    const std::string subject = item.lyric ? *item.lyric : mood_phrase(item.emotion);
    out.prompts.push_back("Scene: " + subject + " in " + lower(emotion::to_string(item.emotion)) +
                          " light");
  }
  return out;
}

HttpLlmClient::HttpLlmClient(std::string url, int timeout_ms)
    : url_(std::move(url)), timeout_ms_(timeout_ms) {}

PromptResponse HttpLlmClient::complete(const PromptRequest& request) {
  const auto reply =
      util::post_json(url_, {{"system", request.system}, {"user", request.user_message()}},
                      timeout_ms_);
  std::string text;
  if (reply.contains("text")) {
    text = reply["text"].get<std::string>();
  } else if (reply.contains("choices") && !reply["choices"].empty()) {
    text = reply["choices"][0].at("message").at("content").get<std::string>();
  } else {
    throw Error(ErrorKind::Parse, url_ + ": reply has neither \"text\" nor \"choices\"");
  }
  return parse_prompt_reply(text);
}

const std::string& default_negative_prompt() {
  static const std::string kPrompt =
      "nsfw, nudity, explicit content, sexualized, gore, violence, harmful stereotypes, "
      "racial stereotypes, whitewashing, caricature, lowres, blurry, deformed, watermark, text";
  return kPrompt;
}

const std::vector<std::string>& safety_terms() {
  static const std::vector<std::string> kTerms = {"nsfw", "nudity", "explicit content",
                                                  "harmful stereotypes", "whitewashing"};
  return kTerms;
}

std::string_view emotion_descriptor(Quadrant q) {
  switch (q) {
    case Quadrant::Melancholy: return "melancholic, somber muted tones";
    case Quadrant::Serene: return "serene, calm soft light";
    case Quadrant::Tense: return "tense, dramatic atmosphere";
    case Quadrant::Euphoric: return "euphoric, vibrant joyful colors";
  }
  return "serene, calm soft light";
}

std::vector<std::string> style_tags(const std::string& preset) {
  static const std::map<std::string, std::vector<std::string>> kPresets = {
      {"realistic", {"photorealistic", "highly detailed", "cinematic lighting", "diversity"}},
      {"sketch", {"monochrome pencil sketch", "grayscale illustration", "diversity"}},
      {"western-animation", {"western animation", "cartoon screencap", "bold outlines", "diversity"}},
      {"toon", {"3d cartoon", "soft shading", "diversity"}},
      {"none", {}},
  };
  auto it = kPresets.find(preset);
  if (it == kPresets.end()) {
    std::string known;
    for (const auto& [id, tags] : kPresets) known += (known.empty() ? "" : ", ") + id;
    throw Error(ErrorKind::Config, "unknown style preset '" + preset + "' (known: " + known + ")");
  }
  return it->second;
}

std::uint64_t segment_seed(std::uint64_t job_seed, std::size_t index) {
  return util::derive_seed(job_seed, 0x5E6D0000ULL + index);
}

PromptScript compile_script(const std::vector<MergedInterval>& merged,
                            const std::optional<PromptResponse>& response,
                            const ScriptConfig& config) {
  if (merged.empty()) throw Error(ErrorKind::InvalidArgument, "no merged intervals to compile");
  if (config.character_token.has_value() != config.lora.has_value()) {
    throw Error(ErrorKind::Config,
                "character_token must be set exactly when a character LoRA is configured");
  }
  if (config.lora && !(config.lora->scale > 0.0 && config.lora->scale <= 1.0)) {
    throw Error(ErrorKind::Config, "lora scale must be in (0, 1]");
  }

  PromptScript script;
  script.duration = merged.back().end;
  script.style_preset = config.style_preset;
  script.character_token = config.character_token;
  script.checkpoint_id = config.checkpoint_id;
  script.lora = config.lora;

  bool usable = response.has_value() && response->prompts.size() == merged.size();
  if (usable) {
    usable = std::none_of(response->prompts.begin(), response->prompts.end(),
                          [](const std::string& p) { return trim(p).empty(); });
  }
  if (!usable) {
    script.degraded = true;
    script.warnings.push_back(
        response ? "LLM returned " + std::to_string(response->prompts.size()) + " prompts for " +
                       std::to_string(merged.size()) + " segments; using template prompts"
                 : std::string("LLM unavailable; using template prompts"));
  }

  const auto tags = style_tags(config.style_preset);
  const std::string negative =
      config.negative_prompt.empty() ? default_negative_prompt() : config.negative_prompt;
  for (std::size_t i = 0; i < merged.size(); ++i) {
    const auto& m = merged[i];
    std::string scene = usable ? trim(response->prompts[i])
                               : std::string(emotion::to_string(m.emotion)) +
                                     " scene: " + m.lyric.value_or("instrumental");
    std::vector<std::string> parts;
    if (config.character_token) parts.push_back(*config.character_token);
    parts.push_back(std::move(scene));
    parts.emplace_back(emotion_descriptor(m.emotion));
    parts.insert(parts.end(), tags.begin(), tags.end());

    TimelineSegment seg;
    seg.start = m.start;
    seg.end = m.end;
    seg.lyric = m.lyric;
    seg.emotion = m.emotion;
    seg.prompt = join(parts, ", ");
    seg.negative_prompt = negative;
    seg.style_tags = tags;
    seg.seed = segment_seed(config.job_seed, i);
    script.segments.push_back(std::move(seg));
  }
  validate_tiling(script);
  return script;
}

void validate_tiling(const PromptScript& script) {
  const auto& s = script.segments;
  if (s.empty()) throw Error(ErrorKind::Validation, "script has no segments");
  if (s.front().start != 0.0) throw Error(ErrorKind::Validation, "first segment must start at 0");
  if (s.back().end != script.duration) {
    throw Error(ErrorKind::Validation, "last segment must end at the script duration");
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s[i].start < s[i].end)) {
      throw Error(ErrorKind::Validation, "segment " + std::to_string(i) + " has start >= end");
    }
    if (i + 1 < s.size() && s[i].end != s[i + 1].start) {
      throw Error(ErrorKind::Validation, "gap or overlap after segment " + std::to_string(i));
    }
    if (s[i].prompt.empty()) {
      throw Error(ErrorKind::Validation, "segment " + std::to_string(i) + " has an empty prompt");
    }
  }
}

nlohmann::json to_json(const PromptScript& script) {
  auto segments = nlohmann::json::array();
  for (const auto& s : script.segments) {
    segments.push_back({
        {"start", s.start},
        {"end", s.end},
        {"lyric", s.lyric ? nlohmann::json(*s.lyric) : nlohmann::json(nullptr)},
        {"emotion", std::string(emotion::to_string(s.emotion))},
        {"prompt", s.prompt},
        {"negative_prompt", s.negative_prompt},
        {"style_tags", s.style_tags},
        {"seed", s.seed},
    });
  }
  nlohmann::json lora = nullptr;
  if (script.lora) lora = {{"id", script.lora->id}, {"scale", script.lora->scale}};
  return {
      {"duration", script.duration},
      {"segments", segments},
      {"global",
       {{"style_preset", script.style_preset},
        {"character_token",
         script.character_token ? nlohmann::json(*script.character_token) : nlohmann::json(nullptr)},
        {"checkpoint", script.checkpoint_id},
        {"lora", lora}}},
      {"metadata", {{"degraded", script.degraded}, {"warnings", script.warnings}}},
  };
}

PromptScript script_from_json(const nlohmann::json& doc) {
  try {
    PromptScript s;
    s.duration = doc.at("duration").get<double>();
    for (const auto& j : doc.at("segments")) {
      TimelineSegment seg;
      seg.start = j.at("start").get<double>();
      seg.end = j.at("end").get<double>();
      if (!j.at("lyric").is_null()) seg.lyric = j["lyric"].get<std::string>();
      seg.emotion = emotion::quadrant_from_string(j.at("emotion").get<std::string>());
      seg.prompt = j.at("prompt").get<std::string>();
      seg.negative_prompt = j.at("negative_prompt").get<std::string>();
      seg.style_tags = j.at("style_tags").get<std::vector<std::string>>();
      seg.seed = j.at("seed").get<std::uint64_t>();
      s.segments.push_back(std::move(seg));
    }
    const auto& g = doc.at("global");
    s.style_preset = g.at("style_preset").get<std::string>();
    if (!g.at("character_token").is_null()) s.character_token = g["character_token"].get<std::string>();
    s.checkpoint_id = g.at("checkpoint").get<std::string>();
    if (!g.at("lora").is_null()) {
      s.lora = LoraRef{g["lora"].at("id").get<std::string>(), g["lora"].at("scale").get<double>()};
    }
    if (doc.contains("metadata")) {
      s.degraded = doc["metadata"].value("degraded", false);
      s.warnings = doc["metadata"].value("warnings", std::vector<std::string>{});
    }
    validate_tiling(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("prompt script: ") + e.what());
  }
}

}  // namespace mvp::timeline
