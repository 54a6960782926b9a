#include <cstdio>
#include <map>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "mvp/error.hpp"
#include "mvp/render/png.hpp"
#include "mvp/service/service.hpp"
#include "mvp/util/files.hpp"
#include "test_util.hpp"

using namespace mvp;
using namespace mvp::service;
namespace fs = std::filesystem;
using nlohmann::json;
using mvp::testing::TempDir;
using mvp::testing::fixture;

namespace {

std::vector<std::uint8_t> png_bytes() {
  render::RgbImage img{8, 8, std::vector<std::uint8_t>(8 * 8 * 3, 90)};
  return render::encode_png(img);
}

// Feeds a golden trace through the store, uploading a PNG for every capture
// request. Returns the final verdict event's `passed`.
bool drive(SessionStore& store, const std::string& id, const std::string& trace_name) {
  const auto trace = charcha::load_trace(fixture(trace_name).string());
  bool passed = false, done = false;
  for (const auto& m : trace.messages) {
    if (done) break;
    for (const auto& e : store.feed(id, m)) {
      if (e.type == charcha::SessionEvent::Type::CaptureRequest) {
        try {
          store.store_snapshot(id, e.tag, png_bytes());
        } catch (const Error&) {
        }
      }
      if (e.type == charcha::SessionEvent::Type::Verdict && e.verdict->final) {
        passed = e.verdict->passed;
        done = true;
      }
    }
  }
  return passed;
}

struct Harness {
  TempDir dir;
  ServiceConfig config;
  std::unique_ptr<render::JobStore> jobs;
  std::unique_ptr<SessionStore> sessions;
  ClientSet clients;
  std::unique_ptr<JobRunner> runner;
  std::unique_ptr<Api> api;

  Harness() {
    config.jobs_dir = dir / "jobs";
    config.sessions_dir = dir / "sessions";
    config.traces_dir = dir / "traces";
    config.allow_client_seed = true;
    config.registry.loras.push_back({"bound-lora", "zwx", std::string("placeholder"), 0.8});
    jobs = std::make_unique<render::JobStore>(config.jobs_dir);
    sessions = std::make_unique<SessionStore>(config.sessions_dir, config.traces_dir, config.charcha,
                                              config.session_ttl_s);
    clients = make_clients(config);
    runner = std::make_unique<JobRunner>(*jobs, render::Clients{*clients.generator, *clients.llm, nullptr},
                                         render::RunOptions{});
    api = std::make_unique<Api>(config, *jobs, *sessions, *runner,
                                eval::EvalClients{*clients.face, *clients.embedding});
  }

  HttpResponse call(const std::string& method, const std::string& target, const json& body = nullptr,
                    std::map<std::string, std::string> headers = {}) {
    return api->handle({method, target, body.is_null() ? "" : body.dump(), std::move(headers)});
  }

  json job_body() const {
    return {{"audio", fixture("song10.wav").string()}, {"transcript", fixture("song10.json").string()}};
  }

  SessionStore::Created session(const std::string& trace) {
    const auto c = sessions->create(1);
    if (!trace.empty()) drive(*sessions, c.id, trace);
    return c;
  }
};

void expect_consent_403(const HttpResponse& r) {
  EXPECT_EQ(r.status, 403) << r.body;
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["error"]["kind"], "forbidden");
  EXPECT_EQ(j["error"]["message"], "charcha verification required");
}

}  // namespace

TEST(ParseTarget, SegmentsAndQuery) {
  const auto t = parse_target("/v1/jobs/a%20b/frames/3?token=x%2By&tag=1-neutral&flag");
  EXPECT_EQ(t.segments, (std::vector<std::string>{"v1", "jobs", "a b", "frames", "3"}));
  EXPECT_EQ(t.query.at("token"), "x+y");
  EXPECT_EQ(t.query.at("tag"), "1-neutral");
  EXPECT_EQ(t.query.at("flag"), "");
}

TEST(Config, DefaultsValidateAndRoundTrip) {
  ServiceConfig c;
  c.validate();
  const auto back = ServiceConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Config, UnknownKeysAndBadValues) {
  EXPECT_THROW(ServiceConfig::from_json({{"bogus", 1}}), Error);
  EXPECT_THROW(ServiceConfig::from_json({{"listen", {{"hots", "x"}}}}), Error);
  EXPECT_THROW(ServiceConfig::from_json({{"render", {{"workers", 0}}}}), Error);
  EXPECT_THROW(ServiceConfig::from_json({{"threads", "two"}}), Error);
  EXPECT_THROW(ServiceConfig::from_json({{"endpoints", {{"llm", {{"mock", false}}}}}}), Error);
  try {
    ServiceConfig::from_json({{"paths", {{"job_dir", "x"}}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    EXPECT_NE(std::string(e.what()).find("job_dir"), std::string::npos);
  }
}

TEST(Config, RelativePathsResolveAgainstBase) {
  const auto c = ServiceConfig::from_json({{"paths", {{"jobs_dir", "j"}}}}, "/srv/mvp");
  EXPECT_EQ(c.jobs_dir, fs::path("/srv/mvp/j"));
}

TEST(Config, EnvironmentOverrides) {
  const std::map<std::string, std::string> env{{"MVP_PORT", "9001"},
                                               {"MVP_JOBS_DIR", "/tmp/j"},
                                               {"MVP_LLM_URL", "http://llm"},
                                               {"MVP_LLM_MOCK", "false"},
                                               {"MVP_GENERATOR_TIMEOUT_MS", "5"}};
  auto lookup = [&](const char* n) -> const char* {
    const auto it = env.find(n);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  ServiceConfig c;
  c.apply_env(lookup);
  EXPECT_EQ(c.port, 9001);
  EXPECT_EQ(c.jobs_dir, fs::path("/tmp/j"));
  EXPECT_FALSE(c.llm.mock);
  EXPECT_EQ(c.llm.url, "http://llm");
  EXPECT_EQ(c.generator.timeout_ms, 5);

  ServiceConfig d;
  EXPECT_THROW(d.apply_env([](const char* n) { return std::string(n) == "MVP_PORT" ? "70000" : nullptr; }), Error);
  EXPECT_THROW(d.apply_env([](const char* n) { return std::string(n) == "MVP_LLM_MOCK" ? "maybe" : nullptr; }),
               Error);
}

TEST(Sessions, TokenAuthAndHashAtRest) {
  TempDir dir;
  SessionStore store(dir / "s", dir / "t", {}, 900);
  const auto c = store.create();
  EXPECT_EQ(c.token.size(), 48u);
  EXPECT_NO_THROW(store.authorize(c.id, c.token));
  EXPECT_THROW(store.authorize(c.id, "wrong"), Error);
  EXPECT_THROW(store.authorize("nope", c.token), Error);
  const auto meta = util::read_text(dir / "s" / c.id / "session.json");
  EXPECT_EQ(meta.find(c.token), std::string::npos);
}

TEST(Sessions, ExpiredTokenIsRefused) {
  TempDir dir;
  SessionStore store(dir / "s", dir / "t", {}, 1);
  const auto c = store.create();
  std::this_thread::sleep_for(std::chrono::milliseconds(1100));
  try {
    store.authorize(c.id, c.token);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Forbidden);
  }
}

TEST(Sessions, GoldenPassKeepsSnapshotsAndGrantsConsent) {
  TempDir dir;
  SessionStore store(dir / "s", dir / "t", {}, 900);
  const auto c = store.create(1);
  EXPECT_THROW(store.require_passed(c.id), Error);
  EXPECT_TRUE(drive(store, c.id, "golden-pass.trace"));
  EXPECT_NO_THROW(store.require_passed(c.id));
  EXPECT_NO_THROW(SessionStore::consent_check_on_disk(dir / "s")(c.id));
  const auto st = store.status(c.id);
  EXPECT_EQ(st["verdict"]["passed"], true);
  EXPECT_EQ(st["snapshots"].size(), 7u);
  EXPECT_FALSE(fs::exists(dir / "s" / c.id / "pending"));
  EXPECT_THROW(store.feed(c.id, charcha::ClockTick{999999}), Error);
}

TEST(Sessions, FailedSessionKeepsNothing) {
  TempDir dir;
  SessionStore store(dir / "s", dir / "t", {}, 900);
  const auto c = store.create(1);
  EXPECT_FALSE(drive(store, c.id, "golden-score5-fail.trace"));
  EXPECT_THROW(store.require_passed(c.id), Error);
  EXPECT_THROW(SessionStore::consent_check_on_disk(dir / "s")(c.id), Error);
  EXPECT_TRUE(store.status(c.id)["snapshots"].empty());
  EXPECT_FALSE(fs::exists(dir / "s" / c.id / "snapshots"));
  try {
    store.store_snapshot(c.id, "1-neutral", png_bytes());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Forbidden);
  }
}

TEST(Sessions, SnapshotValidation) {
  TempDir dir;
  SessionStore store(dir / "s", dir / "t", {}, 900);
  const auto c = store.create(1);
  EXPECT_THROW(store.store_snapshot(c.id, "1-neutral", png_bytes()), Error);  // not requested yet
  const auto trace = charcha::load_trace(fixture("golden-pass.trace").string());
  std::string tag;
  for (const auto& m : trace.messages) {
    for (const auto& e : store.feed(c.id, m)) {
      if (e.type == charcha::SessionEvent::Type::CaptureRequest) tag = e.tag;
    }
    if (!tag.empty()) break;
  }
  ASSERT_EQ(tag, "1-neutral");
  EXPECT_THROW(store.store_snapshot(c.id, tag, {'n', 'o', 't'}), Error);
  EXPECT_EQ(store.store_snapshot(c.id, tag, png_bytes()), "1-neutral.png");
  EXPECT_TRUE(fs::exists(dir / "s" / c.id / "pending/1-neutral.png"));
}

TEST(Sessions, RecoverRebuildsFromJournal) {
  TempDir dir;
  std::string live, done;
  const auto trace = charcha::load_trace(fixture("golden-pass.trace").string());
  {
    SessionStore store(dir / "s", dir / "t", {}, 900);
    live = store.create(1).id;
    done = store.create(1).id;
    drive(store, done, "golden-pass.trace");
    for (std::size_t i = 0; i < trace.messages.size() / 2; ++i) store.feed(live, trace.messages[i]);
  }
  // Simulate a crash mid-write: a torn final journal line.
  {
    std::ofstream out(dir / "t" / (live + ".trace"), std::ios::app);
    out << "{\"type\":\"frame\",\"t_m";
  }
  SessionStore store(dir / "s", dir / "t", {}, 900);
  store.recover();
  EXPECT_NO_THROW(store.require_passed(done));
  EXPECT_THROW(store.require_passed(live), Error);
  bool passed = false;
  for (std::size_t i = trace.messages.size() / 2; i < trace.messages.size() && !passed; ++i) {
    for (const auto& e : store.feed(live, trace.messages[i])) {
      if (e.type == charcha::SessionEvent::Type::Verdict && e.verdict->final) passed = e.verdict->passed;
    }
  }
  EXPECT_TRUE(passed);
}

TEST(Sessions, ShutdownFailsLiveSessions) {
  TempDir dir;
  SessionStore store(dir / "s", dir / "t", {}, 900);
  const auto c = store.create(1);
  std::vector<charcha::SessionEvent> got;
  store.attach(c.id, [&](const std::vector<charcha::SessionEvent>& ev) { got = ev; });
  EXPECT_THROW(store.attach(c.id, [](const auto&) {}), Error);
  store.shutdown();
  ASSERT_FALSE(got.empty());
  ASSERT_TRUE(got.back().verdict);
  EXPECT_FALSE(got.back().verdict->passed);
  EXPECT_EQ(got.back().verdict->reason, "server shutdown");
}

TEST(Api, HealthAndRouting) {
  Harness h;
  const auto r = h.call("GET", "/v1/health");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body)["mock"]["generator"], true);
  EXPECT_EQ(h.call("GET", "/nope").status, 404);
  EXPECT_EQ(h.call("GET", "/v1/jobs/unknown-job").status, 404);
  EXPECT_EQ(h.call("DELETE", "/v1/jobs").status, 405);
  EXPECT_EQ(h.call("GET", "/v1/charcha/sessions/x/stream").status, 426);
}

TEST(Api, JobValidationListsFields) {
  Harness h;
  const auto r = h.call("POST", "/v1/jobs", json{{"fps", "fast"}, {"extra", 1}});
  EXPECT_EQ(r.status, 400);
  const auto j = json::parse(r.body);
  std::set<std::string> fields;
  for (const auto& f : j["error"]["fields"]) fields.insert(f["field"].get<std::string>());
  EXPECT_TRUE(fields.count("audio"));
  EXPECT_TRUE(fields.count("fps"));
  EXPECT_EQ(h.call("POST", "/v1/jobs", nullptr, {}).status, 400);
  EXPECT_EQ(h.api->handle({"POST", "/v1/jobs", "{not json", {}}).status, 400);
}

TEST(Api, CreatePollAndDownload) {
  Harness h;
  h.runner->start(false);
  const auto created = h.call("POST", "/v1/jobs", h.job_body());
  ASSERT_EQ(created.status, 201) << created.body;
  const std::string id = json::parse(created.body)["id"];
  EXPECT_EQ(created.headers.at("Location"), "/v1/jobs/" + id);
  h.runner->wait_idle();
  const auto status = json::parse(h.call("GET", "/v1/jobs/" + id).body);
  EXPECT_EQ(status["progress"]["status"], "Done");
  EXPECT_EQ(status["progress"]["frames_done"], 120);
  const auto manifest = h.call("GET", "/v1/jobs/" + id + "/manifest");
  EXPECT_EQ(manifest.status, 200);
  EXPECT_EQ(json::parse(manifest.body)["frames"].size(), 120u);
  const auto frame = h.call("GET", "/v1/jobs/" + id + "/frames/0");
  EXPECT_EQ(frame.content_type, "image/png");
  EXPECT_EQ(h.call("GET", "/v1/jobs/" + id + "/frames/120").status, 404);
  EXPECT_EQ(h.call("GET", "/v1/jobs/" + id + "/frames/x").status, 400);
  EXPECT_EQ(json::parse(h.call("GET", "/v1/jobs").body)["jobs"].size(), 1u);

  EXPECT_EQ(h.call("POST", "/v1/jobs/" + id + "/eval", json::object()).status, 400);
  fs::create_directories(h.dir / "refs");
  util::write_atomic(h.dir / "refs/r.png", png_bytes());
  const auto ev = h.call("POST", "/v1/jobs/" + id + "/eval", json{{"refs_dir", (h.dir / "refs").string()}});
  EXPECT_EQ(ev.status, 200) << ev.body;
  h.runner->stop();
}

TEST(Api, ManifestBeforeDoneIsConflict) {
  Harness h;
  const auto created = h.call("POST", "/v1/jobs", h.job_body());
  const std::string id = json::parse(created.body)["id"];
  EXPECT_EQ(h.call("GET", "/v1/jobs/" + id + "/manifest").status, 409);
}

TEST(Api, SessionCreationAndSeedPolicy) {
  Harness h;
  const auto r = h.call("POST", "/v1/charcha/sessions", json{{"rng_seed", 5}});
  ASSERT_EQ(r.status, 201);
  const auto j = json::parse(r.body);
  EXPECT_NE(j["stream"].get<std::string>().find("token="), std::string::npos);
  EXPECT_EQ(h.call("POST", "/v1/charcha/sessions", json{{"rng_seed", -1}}).status, 400);
  h.config.allow_client_seed = false;
  EXPECT_EQ(h.call("POST", "/v1/charcha/sessions", json{{"rng_seed", 5}}).status, 400);
  EXPECT_EQ(h.call("GET", "/v1/charcha/sessions/" + j["id"].get<std::string>()).status, 200);
  EXPECT_EQ(h.call("GET", "/v1/charcha/sessions/ghost").status, 404);
}

// Every way to ask for a likeness-bearing job with a session that has not
// passed gets the same 403, and nothing is persisted.
TEST(Api, ConsentGateCoversEveryCreationPath) {
  Harness h;
  const auto pending = h.session("");
  const auto failed = h.session("golden-score5-fail.trace");
  const std::vector<std::string> unverified{pending.id, failed.id, "no-such-session"};

  for (const auto& sid : unverified) {
    SCOPED_TRACE(sid);
    auto body = h.job_body();
    body["character_session"] = sid;
    expect_consent_403(h.call("POST", "/v1/jobs", body));

    body = h.job_body();
    body["lora"] = {{"id", "character:" + sid}};
    expect_consent_403(h.call("POST", "/v1/jobs", body));

    // Broken config too: consent is answered before validation.
    expect_consent_403(h.call("POST", "/v1/jobs", json{{"character_session", sid}, {"fps", "x"}}));

    h.config.registry.loras.back().session = sid;
    body = h.job_body();
    body["lora"] = {{"id", "bound-lora"}};
    expect_consent_403(h.call("POST", "/v1/jobs", body));

    const std::string token = sid == pending.id ? pending.token : sid == failed.id ? failed.token : "x";
    expect_consent_403(h.call("POST", "/v1/charcha/sessions/" + sid + "/jobs?token=" + token, h.job_body()));
  }
  EXPECT_EQ(h.call("POST", "/v1/charcha/sessions/" + failed.id + "/jobs?token=bad", h.job_body()).status, 403);
  EXPECT_TRUE(h.jobs->list_ids().empty());
}

TEST(Api, PassedSessionMayCreateJobs) {
  Harness h;
  const auto ok = h.session("golden-pass.trace");
  auto body = h.job_body();
  body["character_session"] = ok.id;
  const auto r = h.call("POST", "/v1/jobs", body);
  ASSERT_EQ(r.status, 201) << r.body;
  EXPECT_EQ(json::parse(r.body)["config"]["lora"]["id"], "character:" + ok.id);

  EXPECT_EQ(h.call("POST", "/v1/charcha/sessions/" + ok.id + "/jobs", h.job_body(),
                   {{"authorization", "Bearer " + ok.token}})
                .status,
            201);
  EXPECT_EQ(h.call("POST", "/v1/charcha/sessions/" + ok.id + "/jobs", h.job_body()).status, 403);

  // A passed session does not vouch for a second, unverified one.
  const auto other = h.session("");
  body["lora"] = {{"id", "character:" + other.id}};
  expect_consent_403(h.call("POST", "/v1/jobs", body));
}

TEST(Api, SnapshotUploadAuth) {
  Harness h;
  const auto c = h.session("");
  const auto png = png_bytes();
  const std::string bytes(png.begin(), png.end());
  EXPECT_EQ(h.api->handle({"POST", "/v1/charcha/sessions/" + c.id + "/snapshots?tag=1-neutral", bytes, {}}).status,
            403);
  EXPECT_EQ(h.api->handle({"POST", "/v1/charcha/sessions/" + c.id + "/snapshots", bytes,
                           {{"x-session-token", c.token}}})
                .status,
            400);
  EXPECT_EQ(h.api->handle({"POST", "/v1/charcha/sessions/" + c.id + "/snapshots?tag=1-neutral", bytes,
                           {{"x-session-token", c.token}}})
                .status,
            400);  // nothing requested yet
}

#ifdef MVP_CLI
TEST(Cli, RenderRefusesUnverifiedSession) {
  TempDir dir;
  auto cfg = util::read_json(fixture("job10.json"));
  cfg["audio"] = fixture("song10.wav").string();
  cfg["transcript"] = fixture("song10.json").string();
  cfg["character_session"] = "someone";
  util::write_json(dir / "job.json", cfg);
  const std::string cmd = std::string(MVP_CLI) + " render --mock --jobs-dir " + (dir / "jobs").string() +
                          " --sessions-dir " + (dir / "sessions").string() + " " + (dir / "job.json").string() +
                          " 2>" + (dir / "err.txt").string() + " >/dev/null";
  const int rc = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(rc));
  EXPECT_EQ(WEXITSTATUS(rc), 5);
  const auto err = json::parse(util::read_text(dir / "err.txt"));
  EXPECT_EQ(err["error"]["kind"], "forbidden");
  EXPECT_EQ(err["error"]["message"], "charcha verification required");
  EXPECT_FALSE(fs::exists(dir / "jobs") && !fs::is_empty(dir / "jobs"));
}
#endif
