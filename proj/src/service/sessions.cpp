#include <chrono>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "mvp/error.hpp"
#include "mvp/service/service.hpp"
#include "mvp/util/files.hpp"
#include "mvp/util/hash.hpp"

namespace mvp::service {

namespace fs = std::filesystem;
using nlohmann::json;
using charcha::SessionEvent;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string random_hex(std::size_t bytes) {
  static thread_local std::random_device rd;
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < bytes; ++i) {
    const unsigned b = rd() & 0xFFu;
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xF]);
  }
  return out;
}

std::uint64_t random_u64() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

json message_json(const charcha::ClientMessage& m) {
  if (const auto* f = std::get_if<charcha::LandmarkFrame>(&m)) return charcha::to_json(*f);
  return {{"type", "tick"}, {"t_ms", std::get<charcha::ClockTick>(m).t_ms}};
}

std::optional<std::string> image_extension(const std::vector<std::uint8_t>& b) {
  static const std::uint8_t png[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (b.size() >= 8 && std::equal(png, png + 8, b.begin())) return ".png";
  if (b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF) return ".jpg";
  return std::nullopt;
}

int tag_attempt(const std::string& tag) {
  const auto dash = tag.find('-');
  return dash == std::string::npos ? 0 : std::atoi(tag.substr(0, dash).c_str());
}

}  // namespace

struct SessionStore::Entry {
  std::mutex mu;
  std::string id;
  std::string token_hash;
  std::int64_t created_ms = 0;
  std::int64_t expires_ms = 0;
  std::uint64_t seed = 0;
  charcha::SessionConfig config;
  std::unique_ptr<charcha::Session> session;
  std::set<std::string> requested;
  std::size_t settled = 0;  // verdicts already applied to snapshots
  std::ofstream trace;
  bool attached = false;
  Sink sink;
  bool replaying = false;
  fs::path dir;
  fs::path trace_path;
};

SessionStore::SessionStore(fs::path sessions_dir, fs::path traces_dir, charcha::SessionConfig config,
                           int ttl_s)
    : sessions_dir_(std::move(sessions_dir)),
      traces_dir_(std::move(traces_dir)),
      config_(std::move(config)),
      ttl_s_(ttl_s) {
  fs::create_directories(sessions_dir_);
  fs::create_directories(traces_dir_);
}

void SessionStore::persist_meta(const Entry& e) const {
  util::write_json(e.dir / "session.json", {{"id", e.id},
                                            {"token_sha256", e.token_hash},
                                            {"created_unix_ms", e.created_ms},
                                            {"expires_unix_ms", e.expires_ms},
                                            {"rng_seed", e.seed},
                                            {"config", e.config.to_json()}});
}

SessionStore::Created SessionStore::create(std::optional<std::uint64_t> rng_seed) {
  auto e = std::make_shared<Entry>();
  e->id = "cs-" + random_hex(8);
  const std::string token = random_hex(24);
  e->token_hash = util::sha256_hex(token);
  e->created_ms = now_ms();
  e->expires_ms = e->created_ms + static_cast<std::int64_t>(ttl_s_) * 1000;
  e->seed = rng_seed ? *rng_seed : random_u64();
  e->config = config_;
  e->dir = sessions_dir_ / e->id;
  e->trace_path = traces_dir_ / (e->id + ".trace");
  e->session = std::make_unique<charcha::Session>(e->id, e->seed, e->config);
  fs::create_directories(e->dir);
  persist_meta(*e);
  e->trace.open(e->trace_path, std::ios::trunc);
  e->trace << json{{"type", "header"}, {"rng_seed", e->seed}}.dump() << '\n' << std::flush;
  {
    std::lock_guard lock(mu_);
    sessions_[e->id] = e;
  }
  spdlog::info("session={} event=created expires_unix_ms={}", e->id, e->expires_ms);
  return {e->id, token, e->expires_ms, e->seed};
}

std::shared_ptr<SessionStore::Entry> SessionStore::load(const std::string& id) {
  auto e = std::make_shared<Entry>();
  e->dir = sessions_dir_ / id;
  e->trace_path = traces_dir_ / (id + ".trace");
  const json meta = util::read_json(e->dir / "session.json");
  e->id = meta.at("id").get<std::string>();
  e->token_hash = meta.at("token_sha256").get<std::string>();
  e->created_ms = meta.at("created_unix_ms").get<std::int64_t>();
  e->expires_ms = meta.at("expires_unix_ms").get<std::int64_t>();
  e->seed = meta.at("rng_seed").get<std::uint64_t>();
  e->config = charcha::SessionConfig::from_json(meta.at("config"));
  e->session = std::make_unique<charcha::Session>(e->id, e->seed, e->config);

  // Replay the journal. A torn final line (crash mid-write) is dropped.
  std::vector<std::string> good;
  if (fs::exists(e->trace_path)) {
    std::istringstream in(util::read_text(e->trace_path));
    std::string line;
    e->replaying = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        if (j.value("type", "") != "header") {
          const auto msg = charcha::parse_client_message(j);
          if (!e->session->terminal()) {
            auto ev = std::holds_alternative<charcha::LandmarkFrame>(msg)
                          ? e->session->on_frame(std::get<charcha::LandmarkFrame>(msg))
                          : e->session->on_tick(std::get<charcha::ClockTick>(msg).t_ms);
            on_events(*e, ev);
          }
        }
        good.push_back(line);
      } catch (const std::exception& ex) {
        spdlog::warn("session={} event=trace_truncated reason=\"{}\"", id, ex.what());
        break;
      }
    }
    e->replaying = false;
  }
  if (good.empty()) good.push_back(json{{"type", "header"}, {"rng_seed", e->seed}}.dump());
  std::string text;
  for (const auto& l : good) text += l + "\n";
  util::write_atomic(e->trace_path, text);

  if (fs::exists(e->dir / "verdict.json") && !e->session->terminal()) {
    const json v = util::read_json(e->dir / "verdict.json");
    on_events(*e, e->session->finish(v.at("verdict").value("reason", "stream ended")));
  }
  if (!e->session->terminal()) e->trace.open(e->trace_path, std::ios::app);
  return e;
}

void SessionStore::recover() {
  if (!fs::exists(sessions_dir_)) return;
  std::size_t live = 0, total = 0;
  for (const auto& d : fs::directory_iterator(sessions_dir_)) {
    if (!fs::exists(d.path() / "session.json")) continue;
    const std::string id = d.path().filename().string();
    try {
      auto e = load(id);
      if (!e->session->terminal()) ++live;
      ++total;
      std::lock_guard lock(mu_);
      sessions_[id] = std::move(e);
    } catch (const std::exception& ex) {
      spdlog::error("session={} event=recover_failed reason=\"{}\"", id, ex.what());
    }
  }
  spdlog::info("event=sessions_recovered total={} live={}", total, live);
}

std::shared_ptr<SessionStore::Entry> SessionStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorKind::NotFound, "unknown session: " + id);
  return it->second;
}

bool SessionStore::exists(const std::string& id) const {
  std::lock_guard lock(mu_);
  return sessions_.count(id) > 0;
}

void SessionStore::authorize(const std::string& id, const std::string& token) const {
  auto e = get(id);
  std::lock_guard lock(e->mu);
  // Same answer for a wrong token and an expired one.
  if (util::sha256_hex(token) != e->token_hash || now_ms() > e->expires_ms) {
    throw Error(ErrorKind::Forbidden, "invalid or expired session token");
  }
}

void SessionStore::attach(const std::string& id, Sink sink) {
  auto e = get(id);
  std::lock_guard lock(e->mu);
  if (e->session->terminal()) throw Error(ErrorKind::Protocol, "session already finished");
  if (e->attached) throw Error(ErrorKind::Protocol, "session already has a stream");
  e->attached = true;
  e->sink = std::move(sink);
  spdlog::info("session={} event=stream_attached", id);
}

void SessionStore::detach(const std::string& id) {
  auto e = get(id);
  std::lock_guard lock(e->mu);
  if (!e->attached) return;
  e->attached = false;
  e->sink = nullptr;
  if (!e->session->terminal()) on_events(*e, e->session->finish("stream ended"));
  spdlog::info("session={} event=stream_detached phase={}", id, charcha::to_string(e->session->phase()));
}

std::vector<SessionEvent> SessionStore::feed(const std::string& id, const charcha::ClientMessage& message) {
  auto e = get(id);
  std::lock_guard lock(e->mu);
  if (e->session->terminal()) throw Error(ErrorKind::Protocol, "session already finished");
  e->trace << message_json(message).dump() << '\n' << std::flush;
  auto events = std::holds_alternative<charcha::LandmarkFrame>(message)
                    ? e->session->on_frame(std::get<charcha::LandmarkFrame>(message))
                    : e->session->on_tick(std::get<charcha::ClockTick>(message).t_ms);
  on_events(*e, events);
  return events;
}

std::vector<SessionEvent> SessionStore::finish(const std::string& id, const std::string& reason) {
  auto e = get(id);
  std::lock_guard lock(e->mu);
  if (e->session->terminal()) return {};
  auto events = e->session->finish(reason);
  on_events(*e, events);
  return events;
}

void SessionStore::on_events(Entry& e, const std::vector<SessionEvent>& events) {
  for (const auto& ev : events) {
    if (ev.type == SessionEvent::Type::CaptureRequest) e.requested.insert(ev.tag);
  }
  const auto& verdicts = e.session->verdicts();
  for (; e.settled < verdicts.size(); ++e.settled) {
    const auto& v = verdicts[e.settled];
    settle_snapshots(e, v);
    if (!e.replaying) {
      spdlog::info("session={} event=verdict attempt={} passed={} final={} reason=\"{}\"", e.id,
                   v.attempt, v.passed, v.final, v.reason);
    }
  }
  if (e.session->terminal()) {
    if (!e.replaying || !fs::exists(e.dir / "verdict.json")) {
      util::write_json(e.dir / "verdict.json", {{"verdict", e.session->final_verdict()->to_json()}});
    }
    if (e.trace.is_open()) e.trace.close();
  }
}

void SessionStore::settle_snapshots(Entry& e, const charcha::Verdict& v) {
  const fs::path pending = e.dir / "pending";
  if (!fs::exists(pending)) return;
  const std::string prefix = std::to_string(v.attempt) + "-";
  for (const auto& f : fs::directory_iterator(pending)) {
    const std::string name = f.path().filename().string();
    if (name.rfind(prefix, 0) != 0) continue;
    if (v.passed) {
      fs::create_directories(e.dir / "snapshots");
      fs::rename(f.path(), e.dir / "snapshots" / name);
    } else {
      fs::remove(f.path());
    }
  }
  if (e.session->terminal()) fs::remove_all(pending);
}

std::string SessionStore::store_snapshot(const std::string& id, const std::string& tag,
                                         const std::vector<std::uint8_t>& bytes) {
  auto e = get(id);
  std::lock_guard lock(e->mu);
  if (!e->requested.count(tag)) {
    throw Error(ErrorKind::Validation, "no capture was requested under tag \"" + tag + "\"");
  }
  const auto ext = image_extension(bytes);
  if (!ext) throw Error(ErrorKind::Validation, "snapshot must be a PNG or JPEG image");
  const int attempt = tag_attempt(tag);
  const charcha::Verdict* decided = nullptr;
  for (const auto& v : e->session->verdicts()) {
    if (v.attempt == attempt) decided = &v;
  }
  if (decided && !decided->passed) {
    throw Error(ErrorKind::Forbidden, "snapshots from a failed attempt are not kept");
  }
  const std::string name = tag + *ext;
  const fs::path dest = (decided ? e->dir / "snapshots" : e->dir / "pending") / name;
  fs::create_directories(dest.parent_path());
  util::write_atomic(dest, bytes);
  spdlog::info("session={} event=snapshot tag={} kept={}", id, tag, decided != nullptr);
  return name;
}

nlohmann::json SessionStore::status(const std::string& id) const {
  auto e = get(id);
  std::lock_guard lock(e->mu);
  const auto& s = *e->session;
  json attempts = json::array();
  for (const auto& v : s.verdicts()) attempts.push_back(v.to_json());
  json snaps = json::array();
  if (fs::exists(e->dir / "snapshots")) {
    std::vector<std::string> names;
    for (const auto& f : fs::directory_iterator(e->dir / "snapshots")) names.push_back(f.path().filename().string());
    std::sort(names.begin(), names.end());
    snaps = names;
  }
  const auto final = s.final_verdict();
  return {{"id", e->id},
          {"phase", charcha::to_string(s.phase())},
          {"attempt", s.attempt()},
          {"expires_unix_ms", e->expires_ms},
          {"verdict", final ? final->to_json() : json(nullptr)},
          {"attempts", attempts},
          {"spoof_flags", s.spoof_flags()},
          {"snapshots", snaps}};
}

std::optional<charcha::Verdict> SessionStore::final_verdict(const std::string& id) const {
  auto e = get(id);
  std::lock_guard lock(e->mu);
  return e->session->final_verdict();
}

fs::path SessionStore::snapshots_dir(const std::string& id) const {
  return get(id)->dir / "snapshots";
}

void SessionStore::require_passed(const std::string& id) const {
  std::shared_ptr<Entry> e;
  {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it != sessions_.end()) e = it->second;
  }
  // Unknown and unverified sessions get the same answer.
  if (!e) throw Error(ErrorKind::Forbidden, "charcha verification required");
  std::lock_guard lock(e->mu);
  const auto v = e->session->final_verdict();
  if (!e->session->terminal() || !v || !v->passed) {
    throw Error(ErrorKind::Forbidden, "charcha verification required");
  }
}

render::ConsentCheck SessionStore::consent_check() const {
  return [this](const std::string& id) { require_passed(id); };
}

render::ConsentCheck SessionStore::consent_check_on_disk(fs::path sessions_dir) {
  return [dir = std::move(sessions_dir)](const std::string& id) {
    const fs::path verdict = dir / id / "verdict.json";
    bool passed = false;
    if (render::valid_id(id) && fs::exists(verdict)) {
      const json v = util::read_json(verdict).value("verdict", json::object());
      passed = v.value("passed", false) && v.value("final", false);
    }
    if (!passed) throw Error(ErrorKind::Forbidden, "charcha verification required");
  };
}

void SessionStore::shutdown() {
  std::vector<std::shared_ptr<Entry>> all;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, e] : sessions_) all.push_back(e);
  }
  for (const auto& e : all) {
    std::lock_guard lock(e->mu);
    if (e->session->terminal()) continue;
    const auto events = e->session->finish("server shutdown");
    on_events(*e, events);
    if (e->sink) e->sink(events);
  }
}

}  // namespace mvp::service
