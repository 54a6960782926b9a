#include <atomic>
#include <mutex>
#include <thread>

#include <spdlog/spdlog.h>

#include "mvp/audio/analysis.hpp"
#include "mvp/audio/wav.hpp"
#include "mvp/error.hpp"
#include "mvp/render/render.hpp"
#include "mvp/util/files.hpp"
#include "mvp/util/hash.hpp"
#include "mvp/util/parallel.hpp"

namespace mvp::render {

namespace {

struct Cancelled {};

void check_cancel(const RunOptions& options) {
  if (options.cancel && options.cancel->load()) throw Cancelled{};
}

// Retries transport-level failures with exponential backoff. Anything else
// (bad reply shape, domain errors) is not retried.
template <typename F>
auto with_retries(const RunOptions& options, F&& fn) -> decltype(fn()) {
  const int attempts = std::max(1, options.max_attempts);
  for (int attempt = 1;; ++attempt) {
    check_cancel(options);
    try {
      return fn();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Unavailable || attempt >= attempts) throw;
      spdlog::warn("generator call failed (attempt {}/{}): {}", attempt, attempts, e.what());
      std::this_thread::sleep_for(options.backoff_base * (1 << (attempt - 1)));
    }
  }
}

using util::parallel_for;

audio::AnalysisBundle analysis_stage(const RenderJob& job, const fs::path& dir) {
  const fs::path out = dir / "analysis.json";
  if (!fs::exists(out)) {
    const auto audio = audio::load_for_analysis(job.config.audio);
    auto bundle = audio::analyze(audio);
    if (job.config.features_file) bundle.windows = audio::load_feature_file(*job.config.features_file);
    util::write_json(out, audio::to_json(bundle));
  }
  // Downstream stages always read the persisted form, so a resumed run sees
  // exactly what an uninterrupted one did.
  return audio::analysis_from_json(util::read_json(out));
}

timeline::PromptScript compile_stage(const RenderJob& job, const fs::path& dir,
                                     const audio::AnalysisBundle& bundle, const Clients& clients,
                                     const RunOptions& options) {
  const fs::path out = dir / "script.json";
  if (!fs::exists(out)) {
    const auto script = compile_prompt_script(job.config, bundle, clients.llm, clients.regressor, options);
    util::write_json(out, timeline::to_json(script));
  }
  return timeline::script_from_json(util::read_json(out));
}

interp::FrameSchedule schedule_stage(const RenderJob& job, const fs::path& dir,
                                     const timeline::PromptScript& script,
                                     const audio::AnalysisBundle& bundle) {
  const fs::path out = dir / "schedule.json";
  if (!fs::exists(out)) {
    util::write_json(out, interp::to_json(interp::build_frame_schedule(script, job.config.fps,
                                                                       bundle.onset)));
  }
  return interp::schedule_from_json(util::read_json(out));
}

std::vector<interp::LatentVector> keyframe_stage(const RenderJob& job, const fs::path& dir,
                                                 const timeline::PromptScript& script,
                                                 const Clients& clients,
                                                 const RunOptions& options) {
  const fs::path out = dir / "keyframes.json";
  if (!fs::exists(out)) {
    const std::size_t n = script.segments.size();
    std::vector<interp::LatentVector> keyframes(n + 1);
    parallel_for(n + 1, options.workers, [&](std::size_t i) {
      // The closing keyframe reuses the last segment's prompt with its own seed.
      const auto& seg = script.segments[std::min(i, n - 1)];
      KeyframeRequest req{seg.prompt, seg.negative_prompt,
                          i < n ? seg.seed : timeline::segment_seed(job.config.master_seed, n),
                          script.checkpoint_id, script.lora};
      keyframes[i] = with_retries(options, [&] { return clients.generator.keyframe(req); });
    });
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& k : keyframes) doc.push_back(k.values);
    util::write_json(out, {{"keyframes", doc}});
  }
  std::vector<interp::LatentVector> keyframes;
  const auto doc = util::read_json(out);
  for (const auto& k : doc.at("keyframes")) {
    keyframes.push_back({k.get<std::vector<double>>()});
  }
  return keyframes;
}

FrameManifest assemble_manifest(const JobStore& store, const RenderJob& job,
                                const interp::FrameSchedule& schedule) {
  FrameManifest m;
  m.job_id = job.id;
  m.audio_ref = job.config.audio;
  m.fps = schedule.fps;
  std::string chain;
  for (std::size_t k = 0; k < schedule.entries.size(); ++k) {
    const auto& e = schedule.entries[k];
    const fs::path p = store.frame_path(job.id, k);
    FrameRecord r;
    r.index = k;
    r.time = e.time;
    r.image = "frames/" + p.filename().string();
    r.segment_index = e.segment_index;
    r.weight = e.weight;
    r.sha256 = util::sha256_hex(util::read_bytes(p));
    chain += r.sha256;
    chain += '\n';
    m.frames.push_back(std::move(r));
  }
  m.digest = util::sha256_hex(chain);
  return m;
}

}  // namespace

timeline::PromptScript compile_prompt_script(const JobConfig& cfg, const audio::AnalysisBundle& bundle,
                                             timeline::LlmClient& llm,
                                             const emotion::VaRegressor* regressor,
                                             const RunOptions& options) {
  std::vector<std::string> warnings = bundle.warnings;
  timeline::TranscriptResult transcript;
  if (cfg.transcript) {
    transcript = timeline::load_transcript(*cfg.transcript);
    warnings.insert(warnings.end(), transcript.warnings.begin(), transcript.warnings.end());
  }

  std::unique_ptr<emotion::VaRegressor> owned;
  if (!regressor) {
    owned = regressor_for(cfg);
    regressor = owned.get();
  }
  const auto emotions = emotion::emotion_track(*regressor, bundle.windows);
  const auto merged = timeline::merge_events(transcript.events, emotions, bundle.beats, bundle.duration);

  std::optional<timeline::PromptResponse> response;
  const auto request = timeline::build_prompt_request(timeline::to_prompt_items(merged), cfg.narrative_hint);
  try {
    response = with_retries(options, [&] { return llm.complete(request); });
  } catch (const Error& e) {
    spdlog::warn("LLM unavailable, using template prompts: {}", e.what());
    warnings.push_back(std::string("LLM unavailable: ") + e.what());
  }

  timeline::ScriptConfig sc;
  sc.style_preset = cfg.style_preset;
  sc.character_token = cfg.character_token;
  sc.checkpoint_id = cfg.checkpoint;
  sc.lora = cfg.lora;
  sc.negative_prompt = cfg.negative_prompt;
  sc.job_seed = cfg.master_seed;
  auto script = timeline::compile_script(merged, response, sc);
  warnings.insert(warnings.end(), script.warnings.begin(), script.warnings.end());
  script.warnings = std::move(warnings);
  return script;
}

nlohmann::json FrameManifest::to_json() const {
  nlohmann::json frames_json = nlohmann::json::array();
  for (const auto& f : frames) {
    frames_json.push_back({{"index", f.index},
                           {"time", f.time},
                           {"image", f.image},
                           {"segment", f.segment_index},
                           {"weight", f.weight},
                           {"sha256", f.sha256}});
  }
  return {{"job_id", job_id},
          {"audio_ref", audio_ref},
          {"fps", fps},
          {"frame_count", frames.size()},
          {"frames", frames_json},
          {"checksums", {{"algorithm", "sha256"}, {"frames_digest", digest}}}};
}

FrameManifest FrameManifest::from_json(const nlohmann::json& doc) {
  FrameManifest m;
  try {
    m.job_id = doc.at("job_id").get<std::string>();
    m.audio_ref = doc.at("audio_ref").get<std::string>();
    m.fps = doc.at("fps").get<double>();
    for (const auto& f : doc.at("frames")) {
      FrameRecord r;
      r.index = f.at("index").get<std::size_t>();
      r.time = f.at("time").get<double>();
      r.image = f.at("image").get<std::string>();
      r.segment_index = f.at("segment").get<std::size_t>();
      r.weight = f.at("weight").get<double>();
      r.sha256 = f.at("sha256").get<std::string>();
      m.frames.push_back(std::move(r));
    }
    m.digest = doc.at("checksums").at("frames_digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("manifest: ") + e.what());
  }
  return m;
}

FrameManifest run_job(JobStore& store, const std::string& job_id, const Clients& clients,
                      const RunOptions& options) {
  RenderJob job = store.load(job_id);
  const fs::path dir = store.job_dir(job_id);
  if (job.status == JobStatus::Done) {
    return FrameManifest::from_json(util::read_json(dir / "manifest.json"));
  }
  if (job.status == JobStatus::Failed) {
    throw Error(ErrorKind::Rejected, "job " + job_id + " already failed: " + job.failure_reason);
  }

  auto report = [&] {
    if (options.on_progress) options.on_progress(store.progress(job_id));
  };
  auto fail = [&](const std::string& reason) {
    spdlog::error("job {}: failed: {}", job_id, reason);
    store.transition(job, JobStatus::Failed, reason);
    report();
  };

  try {
    if (job.status == JobStatus::Pending) store.transition(job, JobStatus::Analyzing);
    report();
    check_cancel(options);
    const auto bundle = analysis_stage(job, dir);

    if (job.status == JobStatus::Analyzing) store.transition(job, JobStatus::Compiling);
    report();
    check_cancel(options);
    const auto script = compile_stage(job, dir, bundle, clients, options);
    const auto schedule = schedule_stage(job, dir, script, bundle);

    if (job.status == JobStatus::Compiling) {
      // The WAV header gives the expected count at submission; the schedule
      // built from the decoded audio is authoritative.
      job.total_frames = schedule.entries.size();
      store.transition(job, JobStatus::Generating);
    }
    report();

    std::vector<interp::LatentVector> keyframes;
    try {
      keyframes = keyframe_stage(job, dir, script, clients, options);
      if (keyframes.size() != schedule.keyframe_count) {
        throw Error(ErrorKind::Validation, "keyframe count does not match schedule");
      }
      fs::create_directories(dir / "frames");
      std::mutex progress_mutex;
      parallel_for(schedule.entries.size(), options.workers, [&](std::size_t k) {
        check_cancel(options);
        const fs::path p = store.frame_path(job_id, k);
        if (fs::exists(p)) return;
        const auto& e = schedule.entries[k];
        const auto latent =
            interp::slerp(keyframes[e.keyframe_pair.first], keyframes[e.keyframe_pair.second], e.weight);
        const auto png = with_retries(options, [&] { return clients.generator.decode(latent); });
        util::write_atomic(p, png);
        if (options.on_progress) {
          std::lock_guard lock(progress_mutex);
          report();
        }
      });
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Unavailable) {
        fail("generator unavailable");
        throw Error(ErrorKind::Unavailable, "job " + job_id + ": generator unavailable: " + e.what());
      }
      throw;
    }

    check_cancel(options);
    const auto manifest = assemble_manifest(store, job, schedule);
    util::write_json(dir / "manifest.json", manifest.to_json());
    store.transition(job, JobStatus::Done);
    report();
    return manifest;
  } catch (const Cancelled&) {
    throw Error(ErrorKind::Unavailable, "job " + job_id + " cancelled; resumable");
  } catch (const Error& e) {
    if (!is_terminal(job.status)) fail(e.what());
    throw;
  } catch (const std::exception& e) {
    if (!is_terminal(job.status)) fail(e.what());
    throw Error(ErrorKind::Io, e.what());
  }
}

}  // namespace mvp::render
