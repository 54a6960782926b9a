#include <cmath>
#include <fstream>

#include "mvp/charcha/charcha.hpp"
#include "mvp/error.hpp"

namespace mvp::charcha {

namespace {

std::int64_t read_t_ms(const nlohmann::json& msg) {
  if (!msg.contains("t_ms") || !msg["t_ms"].is_number_integer()) {
    throw Error(ErrorKind::Protocol, "t_ms: required integer");
  }
  const auto t = msg["t_ms"].get<std::int64_t>();
  if (t < 0) throw Error(ErrorKind::Protocol, "t_ms: must be >= 0");
  return t;
}

}  // namespace

ClientMessage parse_client_message(const nlohmann::json& msg) {
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    throw Error(ErrorKind::Protocol, "type: required string");
  }
  const std::string type = msg["type"];
  if (type == "tick") return ClockTick{read_t_ms(msg)};
  if (type != "frame") throw Error(ErrorKind::Protocol, "type: unknown message type \"" + type + "\"");

  LandmarkFrame f;
  f.t_ms = read_t_ms(msg);
  if (!msg.contains("face_present") || !msg["face_present"].is_boolean()) {
    throw Error(ErrorKind::Protocol, "face_present: required boolean");
  }
  f.face_present = msg["face_present"].get<bool>();
  if (!f.face_present) return f;

  if (!msg.contains("points") || !msg["points"].is_object()) {
    throw Error(ErrorKind::Protocol, "points: required object when face_present");
  }
  std::array<bool, kLandmarkCount> seen{};
  for (const auto& [name, value] : msg["points"].items()) {
    const auto lm = landmark_from_name(name);
    if (!lm) continue;  // extra landmarks are allowed and ignored
    if (!value.is_array() || value.size() < 2 || value.size() > 3) {
      throw Error(ErrorKind::Protocol, "points." + name + ": expected [x, y] or [x, y, z]");
    }
    Point p;
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!value[i].is_number()) throw Error(ErrorKind::Protocol, "points." + name + ": non-numeric");
    }
    p.x = value[0].get<double>();
    p.y = value[1].get<double>();
    p.z = value.size() == 3 ? value[2].get<double>() : 0.0;
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0) || !std::isfinite(p.z)) {
      throw Error(ErrorKind::Protocol, "points." + name + ": x and y must be in [0, 1]");
    }
    f[*lm] = p;
    seen[static_cast<std::size_t>(*lm)] = true;
  }
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    if (!seen[i]) {
      throw Error(ErrorKind::Protocol,
                  "points." + std::string(landmark_name(static_cast<Landmark>(i))) + ": missing");
    }
  }
  return f;
}

nlohmann::json to_json(const LandmarkFrame& frame) {
  nlohmann::json j{{"type", "frame"}, {"t_ms", frame.t_ms}, {"face_present", frame.face_present}};
  if (frame.face_present) {
    nlohmann::json pts = nlohmann::json::object();
    for (std::size_t i = 0; i < kLandmarkCount; ++i) {
      const auto& p = frame.points[i];
      pts[std::string(landmark_name(static_cast<Landmark>(i)))] = {p.x, p.y, p.z};
    }
    j["points"] = std::move(pts);
  }
  return j;
}

Trace parse_trace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = "trace line " + std::to_string(lineno) + ": ";
    auto msg = nlohmann::json::parse(line, nullptr, false);
    if (msg.is_discarded()) throw Error(ErrorKind::Parse, where + "malformed JSON");
    if (msg.is_object() && msg.value("type", "") == "header") {
      if (msg.contains("rng_seed")) {
        if (!msg["rng_seed"].is_number_unsigned()) {
          throw Error(ErrorKind::Parse, where + "rng_seed must be an unsigned integer");
        }
        trace.rng_seed = msg["rng_seed"].get<std::uint64_t>();
      }
      continue;
    }
    try {
      trace.messages.push_back(parse_client_message(msg));
    } catch (const Error& e) {
      throw Error(ErrorKind::Parse, where + e.what());
    }
  }
  return trace;
}

Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open trace " + path);
  return parse_trace(in);
}

void write_trace(std::ostream& out, const Trace& trace) {
  if (trace.rng_seed) out << nlohmann::json{{"type", "header"}, {"rng_seed", *trace.rng_seed}}.dump() << '\n';
  for (const auto& m : trace.messages) {
    if (const auto* f = std::get_if<LandmarkFrame>(&m)) {
      out << to_json(*f).dump() << '\n';
    } else {
      out << nlohmann::json{{"type", "tick"}, {"t_ms", std::get<ClockTick>(m).t_ms}}.dump() << '\n';
    }
  }
}

nlohmann::json ReplayResult::report() const {
  nlohmann::json attempts_json = nlohmann::json::array();
  for (const auto& v : attempts) attempts_json.push_back(v.to_json());
  nlohmann::json snaps = nlohmann::json::array();
  for (const auto& s : snapshots) snaps.push_back({{"tag", s.tag}, {"t_ms", s.t_ms}});
  return {{"verdict", verdict.to_json()}, {"attempts", attempts_json}, {"snapshots", snaps}};
}

ReplayResult replay_trace(const Trace& trace, std::optional<std::uint64_t> seed,
                          const SessionConfig& config) {
  Session session("replay", seed.value_or(trace.rng_seed.value_or(0)), config);
  ReplayResult result;
  auto take = [&](std::vector<SessionEvent> evs) {
    for (auto& e : evs) result.events.push_back(std::move(e));
  };
  for (const auto& m : trace.messages) {
    if (session.terminal()) break;
    if (const auto* f = std::get_if<LandmarkFrame>(&m)) {
      take(session.on_frame(*f));
    } else {
      take(session.on_tick(std::get<ClockTick>(m).t_ms));
    }
  }
  take(session.finish());
  result.verdict = *session.final_verdict();
  result.snapshots = session.snapshots();
  result.attempts = session.verdicts();
  return result;
}

}  // namespace mvp::charcha
