// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
//
//   acceptance [--only N]

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <spawn.h>
#include <sstream>
#include <sys/wait.h>
#include <thread>

#include <boost/asio.hpp>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "mvp/audio/analysis.hpp"
#include "mvp/audio/wav.hpp"
#include "mvp/charcha/charcha.hpp"
#include "mvp/emotion/emotion.hpp"
#include "mvp/error.hpp"
#include "mvp/eval/eval.hpp"
#include "mvp/interp/interp.hpp"
#include "mvp/render/render.hpp"
#include "mvp/service/service.hpp"
#include "mvp/util/files.hpp"
#include "mvp/util/random.hpp"
#include "synthetic_face.hpp"
#include "test_util.hpp"

extern char** environ;

using namespace mvp;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using mvp::testing::fixture;

namespace {

// Published face-verification figures (percent) and their reporting precision.
constexpr double kPublishedWithFace = 81.0;
constexpr double kPublishedNoFace = 11.1;
constexpr double kPublishedFaceFramesVerified = 92.0;
constexpr double kPublishedTolerance = 1.0;

constexpr std::int64_t kAttemptBoundMs = 92000;
constexpr std::int64_t kFullPassBoundMs = 90000;
constexpr int kReplays = 100;

constexpr int kSelections = 10000;
constexpr double kOmitTolerance = 0.02;

constexpr double kNormTolerance = 1e-6;
constexpr double kSymmetryTolerance = 1e-6;
constexpr double kRampTolerance = 1e-9;

constexpr double kBeatInterval = 0.5;
constexpr double kBeatTolerance = 0.020;

constexpr double kFps = 12.0;
constexpr double kFixtureSeconds = 30.0;

struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<std::string> failures;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      failures.push_back(what);
    }
  }
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0: no runtime bound
  std::function<void(Outcome&)> run;
};

std::string fixed(double v, int prec = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(prec);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(2);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- 1

void face_metric_rates(Outcome& o) {
  std::vector<eval::FrameVerification> frames(1000);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].frame_index = i;
    frames[i].face_present = i >= 111;
    frames[i].verified = i >= 111 && i < 111 + 810;
  }
  const auto r = eval::face_frame_metrics(frames);
  const auto round1 = [](double v) { return std::round(v * 10.0) / 10.0; };
  o.check(r.pct_face_frames_with_participant.has_value(), "third metric undefined");
  const double third = r.pct_face_frames_with_participant.value_or(-1.0);
  o.check(round1(r.pct_frames_with_participant) == 81.0, "with-face " + fixed(r.pct_frames_with_participant));
  o.check(round1(r.pct_frames_no_face) == 11.1, "no-face " + fixed(r.pct_frames_no_face));
  o.check(round1(third) == 91.1, "face-frames-verified " + fixed(third));
  // Same formula, independently: verified / (total - faceless).
  o.check(std::abs(third - 810.0 / (1000.0 - 111.0) * 100.0) < 1e-9, "formula mismatch");
  o.check(std::abs(r.pct_frames_with_participant - kPublishedWithFace) < 0.05, "with-face vs published");
  o.check(std::abs(r.pct_frames_no_face - kPublishedNoFace) < 0.05, "no-face vs published");
  o.check(std::abs(third - kPublishedFaceFramesVerified) <= kPublishedTolerance, "third vs published 92");
  o.detail = "(" + fixed(r.pct_frames_with_participant, 1) + ", " + fixed(r.pct_frames_no_face, 1) + ", " +
             fixed(third, 1) + ") |d92|=" + fixed(std::abs(third - kPublishedFaceFramesVerified), 2);
}

// ---------------------------------------------------------------- 2

void charcha_boundaries(Outcome& o) {
  using charcha::replay_trace;
  const auto load = [](const char* n) { return charcha::load_trace(fixture(n).string()); };
  const auto pass = load("golden-pass.trace");
  const auto six = load("golden-score6.trace");
  const auto five = load("golden-score5-fail.trace");
  const auto retry = load("golden-retry-pass.trace");
  const auto truncated = load("golden-truncated.trace");

  // Slowest possible attempts: no hits at all, two attempts.
  mvp::testing::TracePlan empty;
  mvp::testing::AttemptPlan none;
  none.seconds.fill(mvp::testing::SecondMask{});
  empty.attempts = {none, none};
  const auto worst = mvp::testing::make_trace(empty);

  const auto r6 = replay_trace(six);
  o.check(r6.verdict.passed && r6.verdict.final, "score-6 trace did not pass");
  o.check(std::all_of(r6.verdict.scores.begin(), r6.verdict.scores.end(),
                      [](const charcha::ActionScore& s) { return s.score == 6; }),
          "score-6 trace scores");

  const auto r5 = replay_trace(five);
  o.check(!r5.verdict.passed && r5.verdict.final, "score-5 trace did not fail");
  o.check(r5.attempts.size() == 2 && !r5.attempts[0].passed && !r5.attempts[0].final && r5.attempts[1].final,
          "score-5 trace: expected one retry then terminal fail");
  o.check(std::any_of(r5.attempts[0].scores.begin(), r5.attempts[0].scores.end(),
                      [](const charcha::ActionScore& s) { return s.score == 5; }),
          "score-5 trace has no score of 5");

  const auto rr = replay_trace(retry);
  o.check(rr.attempts.size() == 2 && !rr.attempts[0].passed && rr.verdict.passed, "retry-pass trace");

  const auto rp = replay_trace(pass);
  o.check(rp.verdict.passed, "golden pass trace did not pass");
  o.check(rp.verdict.duration_ms() <= kFullPassBoundMs, "full pass took " + std::to_string(rp.verdict.duration_ms()));

  std::int64_t longest = 0;
  for (const auto* t : {&pass, &six, &five, &retry, &truncated, &worst}) {
    for (const auto& v : replay_trace(*t).attempts) longest = std::max(longest, v.duration_ms());
  }
  o.check(longest <= kAttemptBoundMs, "attempt took " + std::to_string(longest) + " ms");

  bool deterministic = true;
  for (const auto* t : {&pass, &six, &five, &retry, &truncated}) {
    const auto first = replay_trace(*t).report().dump();
    for (int i = 1; i < kReplays && deterministic; ++i) deterministic = replay_trace(*t).report().dump() == first;
  }
  o.check(deterministic, "replays differ");
  o.detail = "pass=" + std::to_string(rp.verdict.duration_ms()) + "ms worst-attempt=" + std::to_string(longest) +
             "ms replays=" + std::to_string(5 * kReplays);
}

// ---------------------------------------------------------------- 3

void action_uniformity(Outcome& o) {
  std::vector<charcha::ActionKind> all;
  for (std::size_t k = 0; k < charcha::kActionCount; ++k) all.push_back(static_cast<charcha::ActionKind>(k));
  std::map<charcha::ActionKind, int> omitted;
  int duplicates = 0;
  for (int seed = 0; seed < kSelections; ++seed) {
    const auto a = charcha::select_actions(static_cast<std::uint64_t>(seed));
    const std::set<charcha::ActionKind> distinct(a.begin(), a.end());
    if (distinct.size() != a.size()) ++duplicates;
    for (auto k : all) {
      if (!distinct.count(k)) ++omitted[k];
    }
  }
  o.check(duplicates == 0, std::to_string(duplicates) + " sessions with duplicates");
  double worst = 0.0;
  for (auto k : all) {
    const double f = omitted[k] / static_cast<double>(kSelections);
    worst = std::max(worst, std::abs(f - 1.0 / 7.0));
    o.check(std::abs(f - 1.0 / 7.0) <= kOmitTolerance, std::string(charcha::to_string(k)) + " omitted " + fixed(f));
  }
  o.detail = "dupes=" + std::to_string(duplicates) + " max|f-1/7|=" + fixed(worst, 4);
}

// ---------------------------------------------------------------- 4

void slerp_suite(Outcome& o) {
  using interp::LatentVector;
  double worst_norm = 0.0, worst_sym = 0.0;
  for (std::uint64_t p = 0; p < 50; ++p) {
    const LatentVector a{util::random_unit_vector(2 * p + 1, 64)};
    const LatentVector b{util::random_unit_vector(2 * p + 2, 64)};
    o.check(interp::slerp(a, b, 0.0) == a && interp::slerp(a, b, 1.0) == b, "endpoints not exact");
    for (int i = 0; i < 100; ++i) {
      const double t = i / 99.0;
      const auto x = interp::slerp(a, b, t);
      const auto y = interp::slerp(b, a, 1.0 - t);
      worst_norm = std::max(worst_norm, std::abs(x.norm() - 1.0));
      for (std::size_t d = 0; d < x.dim(); ++d) worst_sym = std::max(worst_sym, std::abs(x.values[d] - y.values[d]));
    }
  }
  o.check(worst_norm <= kNormTolerance, "norm drift " + sci(worst_norm));
  o.check(worst_sym <= kSymmetryTolerance, "asymmetry " + sci(worst_sym));

  // Degenerate angle: identical and nearly parallel inputs.
  const LatentVector a{util::random_unit_vector(7, 64)};
  LatentVector near = a;
  near.values[0] += 1e-10;
  bool fallback_ok = true;
  for (int i = 0; i <= 10; ++i) {
    const auto m = interp::slerp(a, a, i / 10.0);
    const auto n = interp::slerp(a, near, i / 10.0);
    for (std::size_t d = 0; d < a.dim(); ++d) {
      fallback_ok = fallback_ok && std::abs(m.values[d] - a.values[d]) < 1e-12 && std::isfinite(n.values[d]);
    }
    fallback_ok = fallback_ok && std::abs(n.norm() - 1.0) < kNormTolerance;
  }
  o.check(fallback_ok, "degenerate fallback");
  o.detail = "max|norm-1|=" + sci(worst_norm) + " max asym=" + sci(worst_sym);
}

// ---------------------------------------------------------------- 5

void rhythm_schedule(Outcome& o) {
  double worst_ramp = 0.0;
  for (std::size_t n : {2u, 5u, 12u, 60u, 121u}) {
    const std::vector<double> env(97, 3.0);
    const auto w = interp::onset_weights(env, n);
    for (std::size_t k = 0; k < n; ++k) {
      worst_ramp = std::max(worst_ramp, std::abs(w[k] - static_cast<double>(k) / static_cast<double>(n - 1)));
    }
  }
  o.check(worst_ramp <= kRampTolerance, "ramp error " + sci(worst_ramp));

  std::vector<double> late(200, 0.0);
  for (std::size_t i = 110; i < 200; ++i) late[i] = 1.0;
  const std::size_t n = 60;
  const auto w = interp::onset_weights(late, n);
  std::size_t cross = 0;
  while (cross < n && w[cross] < 0.5) ++cross;
  o.check(cross >= n / 2, "0.5 crossing at frame " + std::to_string(cross) + " of " + std::to_string(n));

  // A real schedule: fixture song, four lyric segments.
  const auto bundle = audio::analyze(audio::load_for_analysis(fixture("song30.wav")));
  timeline::PromptScript script;
  script.duration = kFixtureSeconds;
  for (int i = 0; i < 4; ++i) {
    timeline::TimelineSegment seg;
    seg.start = 7.5 * i;
    seg.end = 7.5 * (i + 1);
    seg.prompt = "p" + std::to_string(i);
    script.segments.push_back(seg);
  }
  const auto sched = interp::build_frame_schedule(script, kFps, bundle.onset);
  std::map<std::size_t, std::vector<double>> per_segment;
  for (const auto& e : sched.entries) per_segment[e.segment_index].push_back(e.weight);
  bool monotone = true, ends_at_one = true;
  for (const auto& [seg, ws] : per_segment) {
    for (std::size_t k = 1; k < ws.size(); ++k) monotone = monotone && ws[k] >= ws[k - 1];
    ends_at_one = ends_at_one && ws.back() == 1.0;
  }
  o.check(monotone, "per-segment weights not monotone");
  o.check(ends_at_one, "a segment does not end exactly at 1");
  o.detail = "ramp err=" + sci(worst_ramp) + " crossing=" + std::to_string(cross) + "/" + std::to_string(n) +
             " segments=" + std::to_string(per_segment.size());
}

// ---------------------------------------------------------------- 6

audio::AudioBuffer click_track(double bpm, double seconds) {
  audio::AudioBuffer a;
  a.sample_rate = 22050;
  a.samples.assign(static_cast<std::size_t>(seconds * a.sample_rate), 0.0f);
  for (double t0 = 0.1; t0 < seconds; t0 += 60.0 / bpm) {
    const auto s0 = static_cast<std::size_t>(std::llround(t0 * a.sample_rate));
    for (std::size_t k = 0; k < 441 && s0 + k < a.samples.size(); ++k) {
      const double t = static_cast<double>(k) / a.sample_rate;
      a.samples[s0 + k] += static_cast<float>(0.8 * std::exp(-t / 0.004) * std::sin(2.0 * M_PI * 1000.0 * t));
    }
  }
  return a;
}

void beat_pipeline(Outcome& o) {
  const auto clicks = click_track(120.0, kFixtureSeconds);
  const auto first = audio::analyze(clicks);
  const auto& b = first.beats.beat_times;
  std::vector<double> d;
  for (std::size_t i = 1; i < b.size(); ++i) d.push_back(b[i] - b[i - 1]);
  std::sort(d.begin(), d.end());
  const double median = d.empty() ? 0.0 : d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  o.check(!d.empty() && std::abs(median - kBeatInterval) <= kBeatTolerance, "median interval " + fixed(median, 4));

  audio::AudioBuffer silence;
  silence.samples.assign(static_cast<std::size_t>(kFixtureSeconds * silence.sample_rate), 0.0f);
  const auto quiet = audio::analyze(silence);
  o.check(quiet.beats.beat_times.empty(), "silence produced beats");

  const auto again = audio::analyze(clicks);
  o.check(audio::to_json(again).dump() == audio::to_json(first).dump(), "analysis not bit-exact");
  const auto s1 = audio::to_json(audio::analyze(audio::load_for_analysis(fixture("song30.wav")))).dump();
  const auto s2 = audio::to_json(audio::analyze(audio::load_for_analysis(fixture("song30.wav")))).dump();
  o.check(s1 == s2, "fixture analysis not bit-exact");
  o.detail = "beats=" + std::to_string(b.size()) + " median=" + fixed(median, 4) + "s";
}

// ---------------------------------------------------------------- 7

void emotion_tracker(Outcome& o) {
  using emotion::Quadrant;
  const std::vector<std::tuple<double, double, Quadrant>> table = {
      {-0.5, -0.5, Quadrant::Melancholy}, {0.5, -0.5, Quadrant::Serene},
      {-0.5, 0.5, Quadrant::Tense},       {0.5, 0.5, Quadrant::Euphoric},
      // Boundaries: zero counts as positive on either axis.
      {0.0, -0.5, Quadrant::Serene},      {-0.5, 0.0, Quadrant::Tense},
      {0.5, 0.0, Quadrant::Euphoric},     {0.0, 0.0, Quadrant::Euphoric},
  };
  for (const auto& [v, a, q] : table) {
    o.check(emotion::quadrant(v, a) == q, "quadrant(" + fixed(v, 1) + "," + fixed(a, 1) + ")");
  }

  // Brute-force fold: running sums, explicit sign table, emit on change.
  const std::vector<std::pair<double, double>> va = {
      {0.3, 0.3}, {0.1, 0.1}, {-0.7, 0.0}, {0.0, -0.8}, {-0.1, -0.1}, {0.9, 0.0}};
  std::vector<emotion::EmotionEvent> oracle;
  double sv = 0.0, sa = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    sv += va[i].first;
    sa += va[i].second;
    const Quadrant q = sv >= 0 ? (sa >= 0 ? Quadrant::Euphoric : Quadrant::Serene)
                               : (sa >= 0 ? Quadrant::Tense : Quadrant::Melancholy);
    if (oracle.empty() || oracle.back().quadrant != q) oracle.push_back({5.0 * i, q});
  }
  std::vector<audio::WindowFeatures> windows;
  for (std::size_t i = 0; i < va.size(); ++i) windows.push_back({5.0 * i, 5.0, {va[i].first, va[i].second}});
  const emotion::AffineRegressor passthrough(2, {1.0, 0.0, 0.0, 1.0}, {0.0, 0.0});
  const auto events = emotion::emotion_track(passthrough, windows);
  o.check(events.size() == 4, std::to_string(events.size()) + " events");
  o.check(events == oracle, "events differ from fold oracle");
  o.detail = "table=8/8 events=" + std::to_string(events.size());
}

// ---------------------------------------------------------------- 8

// Counts connections; endpoint URLs point here during the run.
class CountingListener {
 public:
  CountingListener()
      : acceptor_(ioc_, boost::asio::ip::tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), 0)) {
    accept();
    thread_ = std::thread([this] { ioc_.run(); });
  }
  ~CountingListener() {
    ioc_.stop();
    thread_.join();
  }
  std::string url() const {
    return "http://127.0.0.1:" + std::to_string(acceptor_.local_endpoint().port()) + "/";
  }
  int count() const { return count_; }

 private:
  void accept() {
    acceptor_.async_accept([this](boost::system::error_code ec, boost::asio::ip::tcp::socket) {
      if (!ec) ++count_;
      if (acceptor_.is_open()) accept();
    });
  }
  boost::asio::io_context ioc_;
  boost::asio::ip::tcp::acceptor acceptor_;
  std::thread thread_;
  std::atomic<int> count_{0};
};

pid_t spawn(const std::vector<std::string>& args, const fs::path& out) {
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 1, out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&fa, 2, (out.string() + ".err").c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, argv[0], &fa, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  if (rc != 0) throw std::runtime_error("posix_spawn failed: " + std::string(std::strerror(rc)));
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

std::size_t count_frames(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  for (const auto& f : fs::directory_iterator(dir)) n += f.path().extension() == ".png";
  return n;
}

void end_to_end(Outcome& o) {
  mvp::testing::TempDir tmp;
  CountingListener sink;
  json cfg{{"endpoints", json::object()}};
  for (const char* ep : {"generator", "llm", "embedding", "face_verify"}) {
    cfg["endpoints"][ep] = {{"url", sink.url()}, {"mock", true}};
  }
  util::write_json(tmp / "service.json", cfg);
  const std::string job = fixture("job30.json").string();
  const std::string id = "acceptance-e2e";
  auto render = [&](const std::string& dir, std::vector<std::string> extra) {
    std::vector<std::string> args{MVP_CLI, "--config", (tmp / "service.json").string(), "render", job,
                                  "--mock", "--jobs-dir", (tmp / dir).string(), "--job-id", id};
    args.insert(args.end(), extra.begin(), extra.end());
    return spawn(args, tmp / (dir + ".out"));
  };
  auto manifest = [&](const std::string& dir) {
    const fs::path p = tmp / dir / id / "manifest.json";
    return fs::exists(p) ? util::read_text(p) : std::string{};
  };

  o.check(wait_exit(render("a", {})) == 0, "run a failed");
  o.check(wait_exit(render("b", {})) == 0, "run b failed");
  const auto ma = manifest("a"), mb = manifest("b");
  const auto expected = static_cast<std::size_t>(interp::round_half_up(kFixtureSeconds * kFps));
  std::size_t frames = 0;
  if (!ma.empty()) frames = json::parse(ma)["frames"].size();
  o.check(frames == expected, std::to_string(frames) + " frames, expected " + std::to_string(expected));
  o.check(!ma.empty() && ma == mb, "manifests differ across runs");

  // Slow the generator, kill the process mid-generation, then resume.
  const pid_t victim = render("c", {"--decode-delay-ms", "15"});
  const auto deadline = Clock::now() + std::chrono::seconds(30);
  while (count_frames(tmp / "c" / id / "frames") < expected / 3 && Clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  kill(victim, SIGKILL);
  const int killed = wait_exit(victim);
  const auto partial = count_frames(tmp / "c" / id / "frames");
  o.check(killed == 128 + SIGKILL, "victim was not killed (status " + std::to_string(killed) + ")");
  o.check(partial > 0 && partial < expected, "kill landed outside generation: " + std::to_string(partial) + " frames");
  o.check(wait_exit(render("c", {"--resume"})) == 0, "resume failed");
  o.check(manifest("c") == ma, "resumed manifest differs");
  o.check(sink.count() == 0, std::to_string(sink.count()) + " outbound connections");
  o.detail = "frames=" + std::to_string(frames) + " killed_at=" + std::to_string(partial) +
             " connections=" + std::to_string(sink.count());
}

// ---------------------------------------------------------------- 9

void consent_gate(Outcome& o) {
  mvp::testing::TempDir tmp;
  service::ServiceConfig cfg;
  cfg.port = 0;
  cfg.jobs_dir = tmp / "jobs";
  cfg.sessions_dir = tmp / "sessions";
  cfg.traces_dir = tmp / "traces";
  cfg.registry.loras.push_back({"bound-lora", "zwx", std::string(), 0.8});
  service::Server server(cfg);
  auto& sessions = server.sessions();

  // A session that never streamed, one that failed, one that passed, and
  // an id nobody issued.
  const auto pending = sessions.create(1);
  const auto failed = sessions.create(1);
  const auto passed = sessions.create(1);
  auto feed = [&](const std::string& sid, const char* trace) {
    for (const auto& m : charcha::load_trace(fixture(trace).string()).messages) {
      try {
        sessions.feed(sid, m);
      } catch (const Error&) {
        break;  // finished
      }
    }
  };
  feed(failed.id, "golden-score5-fail.trace");
  feed(passed.id, "golden-pass.trace");
  server.start();
  httplib::Client http("127.0.0.1", server.port());

  const json base{{"audio", fixture("song10.wav").string()}, {"transcript", fixture("song10.json").string()}};
  int paths = 0, refused = 0;
  auto expect = [&](const std::string& label, int want, const httplib::Result& r) {
    ++paths;
    const int got = r ? r->status : -1;
    std::string message;
    if (r && want == 403) {
      try {
        message = json::parse(r->body)["error"]["message"];
      } catch (const std::exception&) {
      }
    }
    const bool ok = got == want && (want != 403 || message == "charcha verification required");
    if (want == 403 && ok) ++refused;
    o.check(ok, label + " -> " + std::to_string(got));
  };

  const std::vector<std::pair<std::string, std::string>> unverified{
      {"pending", pending.id}, {"failed", failed.id}, {"unknown", "cs-0000000000000000"}};
  for (const auto& [kind, sid] : unverified) {
    json b = base;
    b["character_session"] = sid;
    expect("POST /v1/jobs character_session " + kind, 403, http.Post("/v1/jobs", b.dump(), "application/json"));
    b = base;
    b["lora"] = {{"id", "character:" + sid}};
    expect("POST /v1/jobs character lora " + kind, 403, http.Post("/v1/jobs", b.dump(), "application/json"));
    cfg.registry.loras.back().session = sid;
    b = base;
    b["lora"] = {{"id", "bound-lora"}};
    // The running server holds its own registry copy; use the library path for the bound LoRA.
    render::JobStore lib_store(tmp / "lib-jobs");
    try {
      auto jc = render::JobConfig::from_json(b);
      render::submit_job(lib_store, jc, cfg.registry, sessions.consent_check());
      o.check(false, "library submit with bound lora " + kind + " accepted");
    } catch (const Error& e) {
      ++paths;
      const bool ok = e.kind() == ErrorKind::Forbidden;
      refused += ok;
      o.check(ok, "library submit with bound lora " + kind + ": " + e.what());
    }
    const std::string token = kind == "pending" ? pending.token : kind == "failed" ? failed.token : "none";
    httplib::Headers auth{{"Authorization", "Bearer " + token}};
    expect("POST /v1/charcha/sessions/{id}/jobs " + kind, 403,
           http.Post("/v1/charcha/sessions/" + sid + "/jobs", auth, base.dump(), "application/json"));

    // The CLI reads verdicts from the sessions directory.
    b = base;
    b["character_session"] = sid;
    util::write_json(tmp / "cli-job.json", b);
    const int rc = wait_exit(spawn({MVP_CLI, "render", (tmp / "cli-job.json").string(), "--mock", "--jobs-dir",
                                    (tmp / "cli-jobs").string(), "--sessions-dir", cfg.sessions_dir.string()},
                                   tmp / "cli.out"));
    ++paths;
    refused += rc == 5;
    o.check(rc == 5, "CLI render " + kind + " exit " + std::to_string(rc));
  }
  // No checker at all refuses too.
  try {
    json b = base;
    b["character_session"] = passed.id;
    render::JobStore lib_store(tmp / "lib-jobs");
    render::submit_job(lib_store, render::JobConfig::from_json(b), cfg.registry);
    o.check(false, "submit without a consent checker accepted");
  } catch (const Error& e) {
    ++paths;
    refused += e.kind() == ErrorKind::Forbidden;
    o.check(e.kind() == ErrorKind::Forbidden, std::string("no checker: ") + e.what());
  }
  o.check(!fs::exists(cfg.jobs_dir) || fs::is_empty(cfg.jobs_dir), "a refused job was persisted");

  // Control: the verified session is let through on both HTTP paths.
  json b = base;
  b["character_session"] = passed.id;
  expect("POST /v1/jobs verified", 201, http.Post("/v1/jobs", b.dump(), "application/json"));
  httplib::Headers auth{{"Authorization", "Bearer " + passed.token}};
  expect("POST /v1/charcha/sessions/{id}/jobs verified", 201,
         http.Post("/v1/charcha/sessions/" + passed.id + "/jobs", auth, base.dump(), "application/json"));
  server.stop();
  o.detail = std::to_string(refused) + " refusals over " + std::to_string(paths - 2) + " unverified paths";
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::off);
  int only = 0;
  if (argc == 3 && std::string(argv[1]) == "--only") only = std::atoi(argv[2]);

  const std::vector<Criterion> criteria = {
      {1, "face-metric-reconstruction", 1.0, face_metric_rates},
      {2, "charcha-boundaries", 5.0, charcha_boundaries},
      {3, "action-distinctness-uniformity", 5.0, action_uniformity},
      {4, "slerp", 1.0, slerp_suite},
      {5, "rhythm-scheduling", 0.0, rhythm_schedule},
      {6, "beat-pipeline", 10.0, beat_pipeline},
      {7, "emotion-tracker", 0.0, emotion_tracker},
      {8, "end-to-end-mock", 60.0, end_to_end},
      {9, "consent-gate", 0.0, consent_gate},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (only && c.id != only) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (c.budget_s > 0.0) o.check(secs < c.budget_s, "runtime " + fixed(secs) + "s over " + fixed(c.budget_s, 0) + "s");
    std::cout << (o.pass ? "PASS" : "FAIL") << ' ' << c.id << ' ' << c.name << "  " << o.detail << "  ["
              << fixed(secs) << "s" << (c.budget_s > 0 ? " < " + fixed(c.budget_s, 0) + "s" : std::string{}) << "]";
    for (const auto& f : o.failures) std::cout << "\n    " << f;
    std::cout << std::endl;
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
