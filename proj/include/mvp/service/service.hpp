#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/charcha/charcha.hpp"
#include "mvp/eval/eval.hpp"
#include "mvp/render/render.hpp"
#include "mvp/timeline/timeline.hpp"

namespace mvp::service {

struct EndpointConfig {
  std::string url;
  int timeout_ms = 30000;
  bool mock = true;
  nlohmann::json params = nlohmann::json::object();  // passed to the client as-is
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;  // 0 picks a free port
  int threads = 2;

  std::filesystem::path jobs_dir = "var/jobs";
  std::filesystem::path sessions_dir = "var/sessions";
  std::filesystem::path traces_dir = "var/traces";

  EndpointConfig generator;
  EndpointConfig llm;
  EndpointConfig embedding;
  EndpointConfig face_verify;

  charcha::SessionConfig charcha;
  int session_ttl_s = 900;
  // Lets POST /v1/charcha/sessions pick the rng seed (golden-trace replays).
  bool allow_client_seed = false;

  int render_workers = 2;
  int render_max_attempts = 3;
  int render_backoff_ms = 200;

  std::string default_negative_prompt;  // empty: the built-in policy
  render::ModelRegistry registry = render::ModelRegistry::defaults();

  // Unknown keys and broken invariants throw Error(Config). Relative paths
  // resolve against base_dir.
  static ServiceConfig from_json(const nlohmann::json& doc,
                                 const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  // MVP_HOST, MVP_PORT, MVP_THREADS, MVP_JOBS_DIR, MVP_SESSIONS_DIR,
  // MVP_TRACES_DIR, MVP_RENDER_WORKERS, and MVP_<ENDPOINT>_{URL,TIMEOUT_MS,MOCK}
  // for GENERATOR, LLM, EMBEDDING, FACE_VERIFY.
  void apply_env(const std::function<const char*(const char*)>& getenv_fn);
  void validate() const;
};

// File (optional) then environment.
ServiceConfig load_config(const std::optional<std::filesystem::path>& path);

struct ClientSet {
  std::unique_ptr<render::GeneratorClient> generator;
  std::unique_ptr<timeline::LlmClient> llm;
  std::unique_ptr<eval::EmbeddingClient> embedding;
  std::unique_ptr<eval::FaceVerifyClient> face;
};

ClientSet make_clients(const ServiceConfig& config);

// Live and finished CHARCHA sessions plus the verdict store. Each session
// keeps its own lock, so frames for one session are applied in order while
// other sessions proceed in parallel.
//
// On disk, per session:
//   <sessions_dir>/<id>/session.json   id, token hash, expiry, rng seed
//   <sessions_dir>/<id>/verdict.json   final verdict (terminal sessions)
//   <sessions_dir>/<id>/pending/       uploads awaiting the verdict
//   <sessions_dir>/<id>/snapshots/     kept images (Passed sessions only)
//   <traces_dir>/<id>.trace            every client message, replayable
class SessionStore {
 public:
  using Sink = std::function<void(const std::vector<charcha::SessionEvent>&)>;

  struct Created {
    std::string id;
    std::string token;
    std::int64_t expires_unix_ms = 0;
    std::uint64_t rng_seed = 0;
  };

  SessionStore(std::filesystem::path sessions_dir, std::filesystem::path traces_dir,
               charcha::SessionConfig config, int ttl_s);

  // Reloads persisted sessions; unfinished ones are rebuilt by replaying
  // their trace.
  void recover();

  Created create(std::optional<std::uint64_t> rng_seed = {});
  bool exists(const std::string& id) const;
  // NotFound for unknown ids; Forbidden("invalid or expired session token")
  // for a wrong or expired token.
  void authorize(const std::string& id, const std::string& token) const;

  // A session carries at most one stream. Protocol error if already attached
  // or finished. The sink receives events raised outside feed() (shutdown).
  void attach(const std::string& id, Sink sink);
  void detach(const std::string& id);

  std::vector<charcha::SessionEvent> feed(const std::string& id,
                                          const charcha::ClientMessage& message);
  std::vector<charcha::SessionEvent> finish(const std::string& id, const std::string& reason);

  // Returns the stored file name. Errors: NotFound, Validation (not an
  // image, or no capture was requested under that tag), Forbidden (the
  // session failed or the tag is from a failed attempt).
  std::string store_snapshot(const std::string& id, const std::string& tag,
                             const std::vector<std::uint8_t>& bytes);

  nlohmann::json status(const std::string& id) const;
  std::optional<charcha::Verdict> final_verdict(const std::string& id) const;
  std::filesystem::path snapshots_dir(const std::string& id) const;

  // Throws Forbidden("charcha verification required ...") unless the session
  // exists and holds a final Passed verdict.
  void require_passed(const std::string& id) const;
  render::ConsentCheck consent_check() const;
  // The same gate read straight from a sessions directory, for processes
  // that do not own the store (the CLI).
  static render::ConsentCheck consent_check_on_disk(std::filesystem::path sessions_dir);

  // Fails every unfinished session with "server shutdown".
  void shutdown();

 private:
  struct Entry;
  std::shared_ptr<Entry> get(const std::string& id) const;
  std::shared_ptr<Entry> load(const std::string& id);
  void persist_meta(const Entry& e) const;
  void on_events(Entry& e, const std::vector<charcha::SessionEvent>& events);
  void settle_snapshots(Entry& e, const charcha::Verdict& verdict);

  std::filesystem::path sessions_dir_;
  std::filesystem::path traces_dir_;
  charcha::SessionConfig config_;
  int ttl_s_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

// Runs render jobs in submission order on a background thread. Unfinished
// jobs found on disk are queued by start().
class JobRunner {
 public:
  JobRunner(render::JobStore& store, render::Clients clients, render::RunOptions options);
  ~JobRunner();

  void start(bool resume = true);
  void enqueue(const std::string& job_id);
  // Cancels the running job (it stays resumable) and joins the thread.
  void stop();
  // Blocks until the queue is empty and nothing is running.
  void wait_idle();

 private:
  void loop();

  render::JobStore& store_;
  render::Clients clients_;
  render::RunOptions options_;
  std::atomic<bool> cancel_{false};
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread thread_;
};

struct HttpRequest {
  std::string method;
  std::string target;  // path plus query
  std::string body;
  std::map<std::string, std::string> headers;  // lower-case names
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

// Every non-streaming route. Pure request -> response so routing, status
// codes and the consent gate can be tested without sockets.
class Api {
 public:
  Api(const ServiceConfig& config, render::JobStore& jobs, SessionStore& sessions,
      JobRunner& runner, eval::EvalClients eval_clients);

  HttpResponse handle(const HttpRequest& request);

 private:
  HttpResponse route(const HttpRequest& request);
  HttpResponse create_job(nlohmann::json body, const std::optional<std::string>& session);

  const ServiceConfig& config_;
  render::JobStore& jobs_;
  SessionStore& sessions_;
  JobRunner& runner_;
  eval::EvalClients eval_clients_;
};

struct ParsedTarget {
  std::vector<std::string> segments;
  std::map<std::string, std::string> query;
};
ParsedTarget parse_target(const std::string& target);

// The whole service on one port: HTTP routes, the job progress event stream
// and the CHARCHA WebSocket.
class Server {
 public:
  explicit Server(ServiceConfig config);
  ~Server();

  // Recovers sessions, resumes jobs, binds and starts serving.
  void start();
  std::uint16_t port() const;
  // Fails live sessions with "server shutdown", cancels the running job and
  // stops serving. Safe to call twice.
  void stop();
  void wait();  // until stop()

  SessionStore& sessions();
  render::JobStore& jobs();
  JobRunner& runner();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace mvp::service
