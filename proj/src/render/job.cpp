#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "mvp/audio/wav.hpp"
#include "mvp/error.hpp"
#include "mvp/render/render.hpp"
#include "mvp/util/files.hpp"

namespace mvp::render {

namespace {

constexpr JobStatus kOrder[] = {JobStatus::Pending, JobStatus::Analyzing, JobStatus::Compiling,
                                JobStatus::Generating, JobStatus::Done, JobStatus::Failed};

int rank(JobStatus s) {
  return static_cast<int>(std::find(std::begin(kOrder), std::end(kOrder), s) - std::begin(kOrder));
}

std::string resolve(const std::string& path, const fs::path& base) {
  if (path.empty() || base.empty()) return path;
  fs::path p(path);
  return p.is_absolute() ? path : (base / p).lexically_normal().string();
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

}  // namespace

std::string_view to_string(JobStatus s) noexcept {
  switch (s) {
    case JobStatus::Pending: return "Pending";
    case JobStatus::Analyzing: return "Analyzing";
    case JobStatus::Compiling: return "Compiling";
    case JobStatus::Generating: return "Generating";
    case JobStatus::Done: return "Done";
    case JobStatus::Failed: return "Failed";
  }
  return "Failed";
}

JobStatus job_status_from_string(std::string_view s) {
  for (JobStatus st : kOrder) {
    if (to_string(st) == s) return st;
  }
  throw Error(ErrorKind::Parse, "unknown job status \"" + std::string(s) + "\"");
}

bool is_terminal(JobStatus s) noexcept { return s == JobStatus::Done || s == JobStatus::Failed; }

JobConfig JobConfig::parse(const nlohmann::json& doc, const fs::path& base_dir,
                           std::vector<FieldError>& errors) {
  JobConfig c;
  if (!doc.is_object()) {
    errors.push_back({"", "job config must be a JSON object"});
    return c;
  }
  auto str = [&](const char* key, bool required) -> std::optional<std::string> {
    if (!doc.contains(key) || doc[key].is_null()) {
      if (required) errors.push_back({key, "required"});
      return std::nullopt;
    }
    if (!doc[key].is_string()) {
      errors.push_back({key, "must be a string"});
      return std::nullopt;
    }
    return doc[key].get<std::string>();
  };

  if (auto v = str("audio", true)) {
    if (v->empty()) errors.push_back({"audio", "must not be empty"});
    c.audio = resolve(*v, base_dir);
  }
  if (auto v = str("transcript", false)) c.transcript = resolve(*v, base_dir);
  if (doc.contains("fps")) {
    if (!doc["fps"].is_number()) {
      errors.push_back({"fps", "must be a number"});
    } else {
      c.fps = doc["fps"].get<double>();
      if (!(c.fps > 0.0 && c.fps <= 120.0)) errors.push_back({"fps", "must be in (0, 120]"});
    }
  }
  if (doc.contains("master_seed")) {
    if (!doc["master_seed"].is_number_unsigned() && !(doc["master_seed"].is_number_integer() &&
                                                      doc["master_seed"].get<long long>() >= 0)) {
      errors.push_back({"master_seed", "must be a non-negative integer"});
    } else {
      c.master_seed = doc["master_seed"].get<std::uint64_t>();
    }
  }
  if (auto v = str("checkpoint", false)) c.checkpoint = *v;
  if (doc.contains("lora") && !doc["lora"].is_null()) {
    const auto& l = doc["lora"];
    if (!l.is_object() || !l.contains("id") || !l["id"].is_string()) {
      errors.push_back({"lora.id", "required string"});
    } else {
      timeline::LoraRef ref{l["id"].get<std::string>(), 0.8};
      if (l.contains("scale")) {
        if (!l["scale"].is_number()) {
          errors.push_back({"lora.scale", "must be a number"});
        } else {
          ref.scale = l["scale"].get<double>();
          if (!(ref.scale > 0.0 && ref.scale <= 1.0)) {
            errors.push_back({"lora.scale", "must be in (0, 1]"});
          }
        }
      }
      c.lora = ref;
    }
  }
  c.character_session = str("character_session", false);
  c.character_token = str("character_token", false);
  if (auto v = str("style_preset", false)) c.style_preset = *v;
  c.narrative_hint = str("narrative_hint", false);
  if (auto v = str("negative_prompt", false)) c.negative_prompt = *v;
  if (auto v = str("va_weights", false)) c.va_weights = resolve(*v, base_dir);
  if (auto v = str("va_track", false)) c.va_track = resolve(*v, base_dir);
  if (auto v = str("features_file", false)) c.features_file = resolve(*v, base_dir);

  static const char* known[] = {"audio",           "transcript",     "fps",
                                "master_seed",     "checkpoint",     "lora",
                                "character_session", "character_token", "style_preset",
                                "narrative_hint",  "negative_prompt", "va_weights",
                                "va_track",        "features_file"};
  for (const auto& [key, _] : doc.items()) {
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return key == k; }) == std::end(known)) {
      errors.push_back({key, "unknown field"});
    }
  }
  return c;
}

JobConfig JobConfig::from_json(const nlohmann::json& doc, const fs::path& base_dir) {
  std::vector<FieldError> errors;
  JobConfig c = parse(doc, base_dir, errors);
  if (!errors.empty()) {
    std::string msg = "invalid job config:";
    for (const auto& e : errors) msg += " " + (e.field.empty() ? "" : e.field + ": ") + e.message + ";";
    msg.pop_back();
    throw Error(ErrorKind::Validation, msg);
  }
  return c;
}

nlohmann::json JobConfig::to_json() const {
  nlohmann::json j{{"audio", audio},           {"fps", fps},
                   {"master_seed", master_seed}, {"checkpoint", checkpoint},
                   {"style_preset", style_preset}};
  if (transcript) j["transcript"] = *transcript;
  if (lora) j["lora"] = {{"id", lora->id}, {"scale", lora->scale}};
  if (character_session) j["character_session"] = *character_session;
  if (character_token) j["character_token"] = *character_token;
  if (narrative_hint) j["narrative_hint"] = *narrative_hint;
  if (!negative_prompt.empty()) j["negative_prompt"] = negative_prompt;
  if (va_weights) j["va_weights"] = *va_weights;
  if (va_track) j["va_track"] = *va_track;
  if (features_file) j["features_file"] = *features_file;
  return j;
}

const LoraEntry* ModelRegistry::find_lora(const std::string& id) const {
  for (const auto& l : loras) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

bool ModelRegistry::has_checkpoint(const std::string& id) const {
  return std::find(checkpoints.begin(), checkpoints.end(), id) != checkpoints.end();
}

ModelRegistry ModelRegistry::defaults() {
  ModelRegistry r;
  r.checkpoints = {"realistic-vision-v5.1", "dreamshaper-8", "toonyou-beta6",
                   "western-animation-diffusion"};
  return r;
}

ModelRegistry ModelRegistry::from_json(const nlohmann::json& doc) {
  ModelRegistry r;
  try {
    r.checkpoints = doc.at("checkpoints").get<std::vector<std::string>>();
    if (doc.contains("loras")) {
      for (const auto& l : doc["loras"]) {
        LoraEntry e;
        e.id = l.at("id").get<std::string>();
        e.token = l.value("token", std::string{});
        if (l.contains("session") && l["session"].is_string()) e.session = l["session"];
        e.default_scale = l.value("default_scale", 0.8);
        r.loras.push_back(std::move(e));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("registry: ") + e.what());
  }
  if (r.checkpoints.empty()) throw Error(ErrorKind::Config, "registry: no checkpoints");
  return r;
}

nlohmann::json ModelRegistry::to_json() const {
  nlohmann::json l = nlohmann::json::array();
  for (const auto& e : loras) {
    nlohmann::json j{{"id", e.id}, {"token", e.token}, {"default_scale", e.default_scale}};
    if (e.session) j["session"] = *e.session;
    l.push_back(std::move(j));
  }
  return {{"checkpoints", checkpoints}, {"loras", l}};
}

nlohmann::json RenderJob::to_json() const {
  nlohmann::json j{{"id", id},
                   {"config", config.to_json()},
                   {"status", to_string(status)},
                   {"total_frames", total_frames}};
  if (status == JobStatus::Failed) j["reason"] = failure_reason;
  return j;
}

RenderJob RenderJob::from_json(const nlohmann::json& doc) {
  RenderJob job;
  try {
    job.id = doc.at("id").get<std::string>();
    job.config = JobConfig::from_json(doc.at("config"));
    job.status = job_status_from_string(doc.at("status").get<std::string>());
    job.total_frames = doc.at("total_frames").get<std::size_t>();
    job.failure_reason = doc.value("reason", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("job record: ") + e.what());
  }
  return job;
}

bool valid_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '-' || c == '_';
  });
}

std::string new_job_id() {
  static std::mutex m;
  static std::mt19937_64 gen{std::random_device{}() ^
                             static_cast<std::uint64_t>(
                                 std::chrono::steady_clock::now().time_since_epoch().count())};
  std::lock_guard lock(m);
  std::ostringstream os;
  os << "job-" << std::hex;
  os.width(16);
  os.fill('0');
  os << gen();
  return os.str();
}

JobStore::JobStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

fs::path JobStore::job_dir(const std::string& id) const {
  if (!valid_id(id)) throw Error(ErrorKind::NotFound, "unknown job id \"" + id + "\"");
  return root_ / id;
}

fs::path JobStore::frame_path(const std::string& id, std::size_t index) const {
  char name[32];
  std::snprintf(name, sizeof name, "%06zu.png", index);
  return job_dir(id) / "frames" / name;
}

bool JobStore::exists(const std::string& id) const {
  return valid_id(id) && fs::exists(root_ / id / "job.json");
}

std::vector<JobStatus> JobStore::journal(const std::string& id) const {
  std::vector<JobStatus> out;
  const fs::path p = job_dir(id) / "journal.jsonl";
  if (!fs::exists(p)) return out;
  std::istringstream in(util::read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // A torn final line (crash mid-append) is ignored.
    auto rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.contains("status")) continue;
    out.push_back(job_status_from_string(rec["status"].get<std::string>()));
  }
  return out;
}

RenderJob JobStore::load(const std::string& id) const {
  std::lock_guard lock(mutex_);
  if (!exists(id)) throw Error(ErrorKind::NotFound, "unknown job id \"" + id + "\"");
  RenderJob job = RenderJob::from_json(util::read_json(job_dir(id) / "job.json"));

  // Replay the journal: its last record is authoritative.
  const fs::path jp = job_dir(id) / "journal.jsonl";
  std::istringstream in(util::read_text(jp));
  std::string line;
  nlohmann::json last;
  while (std::getline(in, line)) {
    auto rec = nlohmann::json::parse(line, nullptr, false);
    if (!rec.is_discarded() && rec.contains("status")) last = std::move(rec);
  }
  if (!last.is_null()) {
    const JobStatus s = job_status_from_string(last["status"].get<std::string>());
    if (rank(s) > rank(job.status)) {
      job.status = s;
      job.failure_reason = last.value("reason", std::string{});
    }
  }
  return job;
}

std::vector<std::string> JobStore::list_ids() const {
  std::vector<std::string> ids;
  if (!fs::exists(root_)) return ids;
  for (const auto& entry : fs::directory_iterator(root_)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && exists(name)) ids.push_back(name);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void JobStore::create(const RenderJob& job) {
  std::lock_guard lock(mutex_);
  const fs::path dir = job_dir(job.id);
  if (fs::exists(dir)) throw Error(ErrorKind::Rejected, "job id \"" + job.id + "\" already exists");
  fs::create_directories(dir / "frames");
  util::append_line(dir / "journal.jsonl",
                    nlohmann::json{{"stage", 0}, {"status", to_string(job.status)}}.dump());
  util::write_json(dir / "job.json", job.to_json());
}

void JobStore::transition(RenderJob& job, JobStatus next, const std::string& reason) {
  std::lock_guard lock(mutex_);
  if (is_terminal(job.status) || (next != JobStatus::Failed && rank(next) <= rank(job.status))) {
    throw Error(ErrorKind::Protocol, "illegal job transition " + std::string(to_string(job.status)) +
                                         " -> " + std::string(to_string(next)));
  }
  const fs::path dir = job_dir(job.id);
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  nlohmann::json rec{{"stage", rank(next)}, {"status", to_string(next)}, {"unix_ms", now}};
  if (next == JobStatus::Failed) rec["reason"] = reason;
  util::append_line(dir / "journal.jsonl", rec.dump());
  job.status = next;
  job.failure_reason = next == JobStatus::Failed ? reason : std::string{};
  util::write_json(dir / "job.json", job.to_json());
}

JobProgress JobStore::progress(const std::string& id) const {
  const RenderJob job = load(id);
  JobProgress p;
  p.status = job.status;
  p.failure_reason = job.failure_reason;
  p.total_frames = job.total_frames;
  const fs::path dir = job_dir(id);
  if (job.status == JobStatus::Done) {
    p.frames_done = job.total_frames;
  } else if (fs::exists(dir / "frames")) {
    for (const auto& e : fs::directory_iterator(dir / "frames")) {
      if (e.path().extension() == ".png") ++p.frames_done;
    }
  }
  if (fs::exists(dir / "script.json")) {
    const auto script = util::read_json(dir / "script.json");
    p.degraded = script.contains("metadata") && script["metadata"].value("degraded", false);
  }
  return p;
}

JobProgress job_status(const JobStore& store, const std::string& job_id) {
  return store.progress(job_id);
}

std::vector<std::string> referenced_sessions(const JobConfig& config,
                                             const ModelRegistry& registry) {
  std::vector<std::string> out;
  auto add = [&](const std::string& s) {
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  };
  if (config.character_session) add(*config.character_session);
  if (config.lora) {
    if (const LoraEntry* e = registry.find_lora(config.lora->id); e && e->session) add(*e->session);
    if (config.lora->id.rfind(kCharacterLoraPrefix, 0) == 0) {
      add(config.lora->id.substr(kCharacterLoraPrefix.size()));
    }
  }
  return out;
}

RenderJob submit_job(JobStore& store, const JobConfig& config, const ModelRegistry& registry,
                     const ConsentCheck& consent, const std::optional<std::string>& job_id) {
  // Consent comes first so no other check can answer for an unverified session.
  JobConfig resolved = config;
  const auto sessions = referenced_sessions(config, registry);
  if (!sessions.empty()) {
    if (!consent) throw Error(ErrorKind::Forbidden, "charcha verification required");
    for (const auto& s : sessions) consent(s);
    if (sessions.size() > 1) {
      throw Error(ErrorKind::Rejected, "config references more than one character session");
    }
    const std::string lora_id = std::string(kCharacterLoraPrefix) + sessions.front();
    if (!resolved.lora) resolved.lora = timeline::LoraRef{lora_id, 0.8};
    resolved.character_session = sessions.front();
  }
  if (config.audio.empty() || !fs::is_regular_file(config.audio)) {
    throw Error(ErrorKind::Rejected, "audio file not found: " + config.audio);
  }
  if (!registry.has_checkpoint(config.checkpoint)) {
    throw Error(ErrorKind::Rejected, "unknown checkpoint \"" + config.checkpoint +
                                         "\"; known checkpoints: " + join(registry.checkpoints));
  }
  if (!(config.fps > 0.0)) throw Error(ErrorKind::Rejected, "fps must be > 0");
  (void)timeline::style_tags(config.style_preset);  // throws Config on unknown preset

  if (resolved.lora) {
    const LoraEntry* entry = registry.find_lora(resolved.lora->id);
    const bool character = resolved.lora->id.rfind(kCharacterLoraPrefix, 0) == 0;
    if (!entry && !character) {
      std::vector<std::string> ids;
      for (const auto& l : registry.loras) ids.push_back(l.id);
      throw Error(ErrorKind::Rejected, "unknown lora \"" + resolved.lora->id +
                                           "\"; known loras: " + (ids.empty() ? "(none)" : join(ids)));
    }
    if (!resolved.character_token) {
      resolved.character_token =
          entry && !entry->token.empty() ? entry->token : std::string(kCharacterToken);
    }
  } else if (resolved.character_token) {
    throw Error(ErrorKind::Rejected, "character_token given without a lora");
  }

  audio::WavInfo info;
  try {
    info = audio::probe_wav(resolved.audio);
  } catch (const Error& e) {
    throw Error(ErrorKind::Rejected, "audio file unreadable: " + std::string(e.what()));
  }
  if (info.frames == 0) throw Error(ErrorKind::Rejected, "audio file is empty");

  RenderJob job;
  job.id = job_id.value_or(new_job_id());
  if (!valid_id(job.id)) throw Error(ErrorKind::Rejected, "invalid job id \"" + job.id + "\"");
  job.config = std::move(resolved);
  job.status = JobStatus::Pending;
  job.total_frames = static_cast<std::size_t>(interp::round_half_up(info.duration() * config.fps));
  if (job.total_frames == 0) throw Error(ErrorKind::Rejected, "audio too short for one frame");
  store.create(job);
  return job;
}

std::unique_ptr<emotion::VaRegressor> regressor_for(const JobConfig& config) {
  if (config.va_track) {
    return std::make_unique<emotion::VaTrackRegressor>(emotion::VaTrackRegressor::load(*config.va_track));
  }
  if (config.va_weights) {
    return std::make_unique<emotion::AffineRegressor>(emotion::AffineRegressor::load(*config.va_weights));
  }
  return std::make_unique<emotion::AffineRegressor>(emotion::baseline_regressor());
}

}  // namespace mvp::render
