#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/audio/analysis.hpp"
#include "mvp/emotion/emotion.hpp"
#include "mvp/interp/interp.hpp"
#include "mvp/timeline/timeline.hpp"

namespace mvp::render {

namespace fs = std::filesystem;

// Forward-only lifecycle; Failed may follow any non-terminal state.
enum class JobStatus { Pending, Analyzing, Compiling, Generating, Done, Failed };

std::string_view to_string(JobStatus s) noexcept;
JobStatus job_status_from_string(std::string_view s);
bool is_terminal(JobStatus s) noexcept;

struct FieldError {
  std::string field;
  std::string message;
};

// What a caller submits. Paths are absolute once loaded through from_json.
struct JobConfig {
  std::string audio;
  std::optional<std::string> transcript;
  double fps = 12.0;
  std::uint64_t master_seed = 0;
  std::string checkpoint = "realistic-vision-v5.1";
  std::optional<timeline::LoraRef> lora;
  std::optional<std::string> character_session;
  std::optional<std::string> character_token;
  std::string style_preset = "realistic";
  std::optional<std::string> narrative_hint;
  std::string negative_prompt;
  std::optional<std::string> va_weights;
  std::optional<std::string> va_track;
  std::optional<std::string> features_file;

  // Relative paths are resolved against base_dir. Throws Validation listing
  // every bad field.
  static JobConfig from_json(const nlohmann::json& doc, const fs::path& base_dir = {});
  // Same, but reports problems instead of throwing.
  static JobConfig parse(const nlohmann::json& doc, const fs::path& base_dir,
                         std::vector<FieldError>& errors);
  nlohmann::json to_json() const;
};

struct LoraEntry {
  std::string id;
  std::string token;                   // trigger word injected into prompts
  std::optional<std::string> session;  // CHARCHA session this adapter was trained from
  double default_scale = 0.8;
};

// Trigger word for adapters trained from CHARCHA snapshots.
inline constexpr std::string_view kCharacterToken = "sks person";
inline constexpr std::string_view kCharacterLoraPrefix = "character:";

struct ModelRegistry {
  std::vector<std::string> checkpoints;
  std::vector<LoraEntry> loras;

  const LoraEntry* find_lora(const std::string& id) const;
  bool has_checkpoint(const std::string& id) const;

  static ModelRegistry defaults();
  static ModelRegistry from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct RenderJob {
  std::string id;
  JobConfig config;
  JobStatus status = JobStatus::Pending;
  std::string failure_reason;
  std::size_t total_frames = 0;

  nlohmann::json to_json() const;
  static RenderJob from_json(const nlohmann::json& doc);
};

struct JobProgress {
  JobStatus status = JobStatus::Pending;
  std::string failure_reason;
  std::size_t frames_done = 0;
  std::size_t total_frames = 0;
  bool degraded = false;
};

// On-disk layout per job:
//   jobs/<id>/job.json, journal.jsonl, analysis.json, script.json,
//   schedule.json, keyframes.json, frames/NNNNNN.png, manifest.json
// journal.jsonl is append-only, one record per status transition; it is
// written before job.json and wins if the two disagree.
class JobStore {
 public:
  explicit JobStore(fs::path root);

  const fs::path& root() const { return root_; }
  fs::path job_dir(const std::string& id) const;
  fs::path frame_path(const std::string& id, std::size_t index) const;

  bool exists(const std::string& id) const;
  RenderJob load(const std::string& id) const;  // throws NotFound
  std::vector<std::string> list_ids() const;

  void create(const RenderJob& job);
  // Persists a forward transition; backwards or post-terminal moves throw.
  void transition(RenderJob& job, JobStatus next, const std::string& reason = {});

  std::vector<JobStatus> journal(const std::string& id) const;
  JobProgress progress(const std::string& id) const;

 private:
  fs::path root_;
  mutable std::mutex mutex_;
};

// Every CHARCHA session whose likeness the config would use: character_session,
// a registry LoRA bound to a session, or a "character:<session>" LoRA id.
// Distinct ids in first-seen order.
std::vector<std::string> referenced_sessions(const JobConfig& config,
                                             const ModelRegistry& registry);

// Throws Error(Forbidden) unless the session holds a Passed verdict.
using ConsentCheck = std::function<void(const std::string& session_id)>;

// Validates and persists a Pending job. Rejects a missing/unreadable audio
// file (nothing persisted) or a checkpoint/LoRA not in the registry
// (message lists the known ids). A config that references a character
// session must pass `consent`; with no checker such a config is refused.
// A fresh unique id is generated unless one is supplied.
RenderJob submit_job(JobStore& store, const JobConfig& config, const ModelRegistry& registry,
                     const ConsentCheck& consent = {},
                     const std::optional<std::string>& job_id = {});

std::string new_job_id();
bool valid_id(std::string_view id);

struct KeyframeRequest {
  std::string prompt;
  std::string negative_prompt;
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::optional<timeline::LoraRef> lora;
};

class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  virtual interp::LatentVector keyframe(const KeyframeRequest& request) = 0;
  // Returns encoded image bytes (PNG).
  virtual std::vector<std::uint8_t> decode(const interp::LatentVector& latent) = 0;
};

struct MockGeneratorOptions {
  std::size_t latent_dim = 256;
  int image_size = 64;
  int decode_delay_ms = 0;
};

// Deterministic stand-in: keyframe latents are unit vectors seeded by a
// stable hash of (prompt, seed, checkpoint, lora id); decode renders a solid
// colour derived from the latent with a hash stripe.
class MockGenerator final : public GeneratorClient {
 public:
  explicit MockGenerator(MockGeneratorOptions options = {});
  interp::LatentVector keyframe(const KeyframeRequest& request) override;
  std::vector<std::uint8_t> decode(const interp::LatentVector& latent) override;

 private:
  MockGeneratorOptions options_;
};

struct GeneratorParams {
  int steps = 25;
  double guidance = 7.0;
  int width = 512;
  int height = 512;
  // "latent" when the service exposes diffusion latents; "prompt_embedding"
  // when it can only interpolate in prompt-embedding space.
  std::string space = "latent";
};

// POST <url>/keyframe {prompt, negative_prompt, seed, steps, guidance, width,
// height, checkpoint, lora:[{name, weight}], space} -> {"latent": [...]}
// POST <url>/decode {"latent": [...], space} -> {"image_b64": "..."}
class HttpGenerator final : public GeneratorClient {
 public:
  HttpGenerator(std::string url, int timeout_ms, GeneratorParams params = {});
  interp::LatentVector keyframe(const KeyframeRequest& request) override;
  std::vector<std::uint8_t> decode(const interp::LatentVector& latent) override;

 private:
  std::string url_;
  int timeout_ms_;
  GeneratorParams params_;
};

struct FrameRecord {
  std::size_t index = 0;
  double time = 0.0;
  std::string image;  // relative to the job directory
  std::size_t segment_index = 0;
  double weight = 0.0;
  std::string sha256;

  bool operator==(const FrameRecord&) const = default;
};

struct FrameManifest {
  std::string job_id;
  std::string audio_ref;
  double fps = 0.0;
  std::vector<FrameRecord> frames;
  std::string digest;  // sha256 over the ordered frame checksums

  nlohmann::json to_json() const;
  static FrameManifest from_json(const nlohmann::json& doc);
};

struct Clients {
  GeneratorClient& generator;
  timeline::LlmClient& llm;
  // Overrides the regressor chosen from the job config when set.
  const emotion::VaRegressor* regressor = nullptr;
};

struct RunOptions {
  int workers = 2;
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{200};
  const std::atomic<bool>* cancel = nullptr;
  std::function<void(const JobProgress&)> on_progress;
};

// Drives a job from its persisted stage to Done. Every stage output is
// persisted before the next begins, and frames already on disk are reused,
// so a run interrupted at any point resumes to the same manifest. A
// generator still failing after max_attempts marks the job
// Failed("generator unavailable") and keeps the frames written so far.
// Returns the manifest for Done jobs; throws Error(Unavailable) for Failed.
FrameManifest run_job(JobStore& store, const std::string& job_id, const Clients& clients,
                      const RunOptions& options = {});

// The compile step on its own: transcript, emotion track and LLM scene lines
// merged into a prompt script. An unreachable LLM falls back to template
// prompts with a warning.
timeline::PromptScript compile_prompt_script(const JobConfig& config,
                                             const audio::AnalysisBundle& bundle,
                                             timeline::LlmClient& llm,
                                             const emotion::VaRegressor* regressor = nullptr,
                                             const RunOptions& options = {});

JobProgress job_status(const JobStore& store, const std::string& job_id);

// The regressor named by the job config (weights file, VA track), else the
// built-in affine baseline.
std::unique_ptr<emotion::VaRegressor> regressor_for(const JobConfig& config);

}  // namespace mvp::render
