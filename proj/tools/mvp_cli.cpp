// mvp: command-line front end for the pipeline, CHARCHA and the gateway.

#include <csignal>
#include <iostream>
#include <pthread.h>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mvp/audio/analysis.hpp"
#include "mvp/audio/wav.hpp"
#include "mvp/charcha/charcha.hpp"
#include "mvp/error.hpp"
#include "mvp/eval/eval.hpp"
#include "mvp/interp/interp.hpp"
#include "mvp/render/render.hpp"
#include "mvp/service/service.hpp"
#include "mvp/util/files.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvp;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kVerdictFailed = 3,
  kNotFound = 4,
  kForbidden = 5,
  kUnavailable = 6,
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotFound: return kNotFound;
    case ErrorKind::Forbidden: return kForbidden;
    case ErrorKind::Unavailable: return kUnavailable;
    case ErrorKind::InvalidArgument:
    case ErrorKind::Config: return kUsage;
    default: return kFailure;
  }
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

struct Common {
  std::optional<std::string> config;
  bool mock = false;
  std::string log_level = "warn";
};

service::ServiceConfig service_config(const Common& c) {
  auto cfg = service::load_config(c.config ? std::optional<fs::path>(*c.config) : std::nullopt);
  if (c.mock) {
    cfg.generator.mock = cfg.llm.mock = cfg.embedding.mock = cfg.face_verify.mock = true;
  }
  return cfg;
}

int run_serve(const Common& common, std::optional<int> port) {
  auto cfg = service_config(common);
  if (port) cfg.port = static_cast<std::uint16_t>(*port);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);  // inherited by every server thread

  service::Server server(cfg);
  server.start();
  std::cout << json{{"listening", cfg.host + ":" + std::to_string(server.port())}}.dump() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  spdlog::info("event=signal signal={}", sig);
  server.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Beat-aligned music video pipeline and CHARCHA liveness service"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "service config JSON (endpoints, registry, paths)");
  app.add_option("--log-level", common.log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  // analyze
  std::string a_audio;
  std::optional<std::string> a_features;
  auto* analyze = app.add_subcommand("analyze", "rhythm and feature analysis of a WAV file");
  analyze->add_option("audio", a_audio)->required()->check(CLI::ExistingFile);
  analyze->add_option("--features", a_features, "external per-window feature file")->check(CLI::ExistingFile);

  // compile
  std::string c_audio, c_transcript;
  std::optional<std::string> c_analysis, c_hint, c_va_weights;
  std::uint64_t c_seed = 0;
  std::string c_style = "realistic", c_checkpoint = "realistic-vision-v5.1";
  auto* compile = app.add_subcommand("compile", "compile audio + transcript into a prompt script");
  compile->add_option("audio", c_audio)->required()->check(CLI::ExistingFile);
  compile->add_option("transcript", c_transcript)->required()->check(CLI::ExistingFile);
  compile->add_option("--analysis", c_analysis, "reuse an analysis bundle")->check(CLI::ExistingFile);
  compile->add_option("--seed", c_seed)->capture_default_str();
  compile->add_option("--style", c_style)->capture_default_str();
  compile->add_option("--checkpoint", c_checkpoint)->capture_default_str();
  compile->add_option("--hint", c_hint, "narrative hint for the LLM");
  compile->add_option("--va-weights", c_va_weights)->check(CLI::ExistingFile);
  compile->add_flag("--mock", common.mock, "use the offline LLM stand-in");

  // schedule
  std::string s_script;
  std::optional<std::string> s_analysis, s_audio;
  double s_fps = 12.0;
  auto* schedule = app.add_subcommand("schedule", "frame schedule for a prompt script");
  schedule->add_option("script", s_script)->required()->check(CLI::ExistingFile);
  auto* s_an = schedule->add_option("--analysis", s_analysis, "analysis bundle supplying the onset envelope")
                   ->check(CLI::ExistingFile);
  auto* s_au = schedule->add_option("--audio", s_audio, "analyse this WAV for the onset envelope")
                   ->check(CLI::ExistingFile);
  s_an->excludes(s_au);
  schedule->add_option("--fps", s_fps)->capture_default_str();

  // render
  std::string r_config;
  std::optional<std::string> r_jobs_dir, r_sessions_dir, r_job_id;
  bool r_resume = false;
  std::optional<int> r_workers, r_decode_delay;
  auto* render_cmd = app.add_subcommand("render", "submit and run a render job to completion");
  render_cmd->add_option("job_config", r_config, "job config JSON")->required()->check(CLI::ExistingFile);
  render_cmd->add_flag("--mock", common.mock, "offline generator and LLM; no network");
  render_cmd->add_option("--jobs-dir", r_jobs_dir);
  render_cmd->add_option("--sessions-dir", r_sessions_dir, "where CHARCHA verdicts live");
  render_cmd->add_option("--job-id", r_job_id);
  render_cmd->add_flag("--resume", r_resume, "continue an existing job with --job-id");
  render_cmd->add_option("--workers", r_workers);
  render_cmd->add_option("--decode-delay-ms", r_decode_delay, "mock generator per-frame delay");

  // charcha-serve
  std::optional<int> v_port;
  auto* serve = app.add_subcommand("charcha-serve", "run the HTTP/WebSocket gateway");
  serve->add_option("--port", v_port);
  serve->add_flag("--mock", common.mock, "mock every external client");

  // charcha-replay
  std::string p_trace;
  std::optional<std::uint64_t> p_seed;
  bool p_strict = false;
  auto* replay = app.add_subcommand("charcha-replay", "replay a landmark trace through the session FSM");
  replay->add_option("trace", p_trace)->required()->check(CLI::ExistingFile);
  replay->add_option("--seed", p_seed, "override the trace header seed");
  replay->add_flag("--strict", p_strict, "exit 3 unless the verdict is Passed");

  // eval
  std::string e_job, e_refs;
  std::optional<int> e_workers;
  auto* eval_cmd = app.add_subcommand("eval", "face-verification and similarity report for a job");
  eval_cmd->add_option("job_dir", e_job)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("refs_dir", e_refs)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_flag("--mock", common.mock, "mock face and embedding clients");
  eval_cmd->add_option("--workers", e_workers);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto logger = spdlog::stderr_color_mt("mvp");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(common.log_level));
  if (serve->parsed() && common.log_level == "warn") spdlog::set_level(spdlog::level::info);

  try {
    if (analyze->parsed()) {
      auto bundle = audio::analyze(audio::load_for_analysis(a_audio));
      if (a_features) bundle.windows = audio::load_feature_file(*a_features);
      print(audio::to_json(bundle));
      return kOk;
    }

    if (compile->parsed()) {
      auto cfg = service_config(common);
      render::JobConfig jc;
      jc.audio = fs::absolute(c_audio).string();
      jc.transcript = fs::absolute(c_transcript).string();
      jc.master_seed = c_seed;
      jc.style_preset = c_style;
      jc.checkpoint = c_checkpoint;
      jc.narrative_hint = c_hint;
      if (c_va_weights) jc.va_weights = fs::absolute(*c_va_weights).string();
      jc.negative_prompt = cfg.default_negative_prompt;
      const auto bundle = c_analysis ? audio::analysis_from_json(util::read_json(*c_analysis))
                                     : audio::analyze(audio::load_for_analysis(c_audio));
      auto clients = service::make_clients(cfg);
      print(timeline::to_json(render::compile_prompt_script(jc, bundle, *clients.llm)));
      return kOk;
    }

    if (schedule->parsed()) {
      if (!s_analysis && !s_audio) throw Error(ErrorKind::InvalidArgument, "schedule needs --analysis or --audio");
      const auto script = timeline::script_from_json(util::read_json(s_script));
      const auto bundle = s_analysis ? audio::analysis_from_json(util::read_json(*s_analysis))
                                     : audio::analyze(audio::load_for_analysis(*s_audio));
      print(interp::to_json(interp::build_frame_schedule(script, s_fps, bundle.onset)));
      return kOk;
    }

    if (render_cmd->parsed()) {
      auto cfg = service_config(common);
      if (r_jobs_dir) cfg.jobs_dir = *r_jobs_dir;
      if (r_sessions_dir) cfg.sessions_dir = *r_sessions_dir;
      if (r_workers) cfg.render_workers = *r_workers;
      if (r_decode_delay) cfg.generator.params["decode_delay_ms"] = *r_decode_delay;
      render::JobStore store(cfg.jobs_dir);
      std::string id;
      if (r_resume) {
        if (!r_job_id) throw Error(ErrorKind::InvalidArgument, "--resume needs --job-id");
        id = *r_job_id;
        (void)store.load(id);
      } else {
        if (r_job_id && store.exists(*r_job_id)) {
          throw Error(ErrorKind::InvalidArgument, "job " + *r_job_id + " exists; pass --resume to continue it");
        }
        const fs::path path = fs::absolute(r_config);
        auto jc = render::JobConfig::from_json(util::read_json(path), path.parent_path());
        if (jc.negative_prompt.empty()) jc.negative_prompt = cfg.default_negative_prompt;
        const auto job = render::submit_job(
            store, jc, cfg.registry, service::SessionStore::consent_check_on_disk(cfg.sessions_dir), r_job_id);
        id = job.id;
      }
      auto clients = service::make_clients(cfg);
      render::RunOptions opts;
      opts.workers = cfg.render_workers;
      opts.max_attempts = cfg.render_max_attempts;
      opts.backoff_base = std::chrono::milliseconds(cfg.render_backoff_ms);
      const auto manifest = render::run_job(store, id, render::Clients{*clients.generator, *clients.llm, nullptr}, opts);
      print({{"job_id", id},
             {"status", "Done"},
             {"frames", manifest.frames.size()},
             {"digest", manifest.digest},
             {"manifest", (store.job_dir(id) / "manifest.json").string()}});
      return kOk;
    }

    if (serve->parsed()) return run_serve(common, v_port);

    if (replay->parsed()) {
      auto cfg = service_config(common);
      const auto result = charcha::replay_trace(charcha::load_trace(p_trace), p_seed, cfg.charcha);
      print(result.report());
      return p_strict && !result.verdict.passed ? kVerdictFailed : kOk;
    }

    if (eval_cmd->parsed()) {
      auto cfg = service_config(common);
      auto clients = service::make_clients(cfg);
      const auto report = eval::evaluate_job(e_job, e_refs, eval::EvalClients{*clients.face, *clients.embedding},
                                             e_workers.value_or(cfg.render_workers));
      print(report.to_json());
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}}}.dump() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << '\n';
    return kFailure;
  }
  return kUsage;
}
