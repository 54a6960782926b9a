#include <charconv>

#include <spdlog/spdlog.h>

#include "mvp/error.hpp"
#include "mvp/service/service.hpp"
#include "mvp/util/files.hpp"

namespace mvp::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Forbidden: return 403;
    case ErrorKind::Protocol: return 409;
    case ErrorKind::Unavailable: return 503;
    case ErrorKind::Io: return 500;
    default: return 400;
  }
}

HttpResponse json_response(int status, const json& body) {
  return {status, "application/json", body.dump(), {}};
}

HttpResponse error_response(int status, std::string_view kind, const std::string& message,
                            const std::vector<render::FieldError>& fields = {}) {
  json err{{"kind", kind}, {"message", message}};
  if (!fields.empty()) {
    json f = json::array();
    for (const auto& e : fields) f.push_back({{"field", e.field}, {"message", e.message}});
    err["fields"] = f;
  }
  return json_response(status, {{"error", err}});
}

HttpResponse error_response(const Error& e) {
  return error_response(http_status(e.kind()), to_string(e.kind()), e.what());
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string percent_decode(std::string_view s, bool plus_is_space) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      const int hi = hex_value(s[i + 1]), lo = hex_value(s[i + 2]);
      if (hi >= 0 && lo >= 0) {
        out.push_back(static_cast<char>(hi * 16 + lo));
        i += 2;
        continue;
      }
    }
    out.push_back(plus_is_space && s[i] == '+' ? ' ' : s[i]);
  }
  return out;
}

std::optional<std::string> bearer(const HttpRequest& r, const ParsedTarget& t) {
  if (auto it = t.query.find("token"); it != t.query.end()) return it->second;
  if (auto it = r.headers.find("x-session-token"); it != r.headers.end()) return it->second;
  if (auto it = r.headers.find("authorization"); it != r.headers.end()) {
    const std::string prefix = "Bearer ";
    if (it->second.rfind(prefix, 0) == 0) return it->second.substr(prefix.size());
  }
  return std::nullopt;
}

json parse_body(const HttpRequest& r, bool allow_empty) {
  if (r.body.empty()) {
    if (allow_empty) return json::object();
    throw Error(ErrorKind::Validation, "request body is empty; expected a JSON object");
  }
  json doc;
  try {
    doc = json::parse(r.body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, std::string("request body is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::Validation, "request body must be a JSON object");
  return doc;
}

json progress_json(const render::JobProgress& p) {
  json j{{"status", render::to_string(p.status)},
         {"frames_done", p.frames_done},
         {"total_frames", p.total_frames},
         {"degraded", p.degraded}};
  if (!p.failure_reason.empty()) j["failure_reason"] = p.failure_reason;
  return j;
}

// Session ids a raw job body names, read without full validation so the
// consent gate answers before any other check.
std::vector<std::string> raw_session_refs(const json& body, const render::ModelRegistry& registry) {
  std::vector<std::string> out;
  if (body.contains("character_session") && body["character_session"].is_string()) {
    out.push_back(body["character_session"].get<std::string>());
  }
  if (body.contains("lora") && body["lora"].is_object() && body["lora"].contains("id") &&
      body["lora"]["id"].is_string()) {
    const auto id = body["lora"]["id"].get<std::string>();
    if (const auto* e = registry.find_lora(id); e && e->session) out.push_back(*e->session);
    if (id.rfind(render::kCharacterLoraPrefix, 0) == 0) {
      out.push_back(id.substr(render::kCharacterLoraPrefix.size()));
    }
  }
  return out;
}

}  // namespace

ParsedTarget parse_target(const std::string& target) {
  ParsedTarget t;
  const auto q = target.find('?');
  const std::string_view path = std::string_view(target).substr(0, q);
  std::size_t i = 0;
  while (i < path.size()) {
    const auto j = path.find('/', i);
    const auto seg = path.substr(i, j == std::string_view::npos ? std::string_view::npos : j - i);
    if (!seg.empty()) t.segments.push_back(percent_decode(seg, false));
    if (j == std::string_view::npos) break;
    i = j + 1;
  }
  if (q != std::string::npos) {
    std::string_view qs = std::string_view(target).substr(q + 1);
    while (!qs.empty()) {
      const auto amp = qs.find('&');
      const auto pair = qs.substr(0, amp);
      const auto eq = pair.find('=');
      if (!pair.empty()) {
        t.query[percent_decode(pair.substr(0, eq), true)] =
            eq == std::string_view::npos ? "" : percent_decode(pair.substr(eq + 1), true);
      }
      if (amp == std::string_view::npos) break;
      qs.remove_prefix(amp + 1);
    }
  }
  return t;
}

Api::Api(const ServiceConfig& config, render::JobStore& jobs, SessionStore& sessions, JobRunner& runner,
         eval::EvalClients eval_clients)
    : config_(config), jobs_(jobs), sessions_(sessions), runner_(runner), eval_clients_(eval_clients) {}

HttpResponse Api::handle(const HttpRequest& request) {
  try {
    return route(request);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) spdlog::error("event=request_failed target={} reason=\"{}\"", request.target, e.what());
    return error_response(e);
  } catch (const std::exception& e) {
    spdlog::error("event=request_failed target={} reason=\"{}\"", request.target, e.what());
    return error_response(500, "internal", e.what());
  }
}

HttpResponse Api::create_job(json body, const std::optional<std::string>& session) {
  if (session) sessions_.require_passed(*session);
  for (const auto& s : raw_session_refs(body, config_.registry)) sessions_.require_passed(s);
  if (session) {
    if (body.contains("character_session") && body["character_session"] != *session) {
      throw Error(ErrorKind::Validation, "character_session does not match the session in the path");
    }
    body["character_session"] = *session;
  }

  std::optional<std::string> job_id;
  if (body.contains("job_id")) {
    if (!body["job_id"].is_string()) {
      return error_response(400, "validation_error", "invalid job config",
                            {{"job_id", "expected a string"}});
    }
    job_id = body["job_id"].get<std::string>();
    body.erase("job_id");
    if (jobs_.exists(*job_id)) throw Error(ErrorKind::Protocol, "job already exists: " + *job_id);
  }
  std::vector<render::FieldError> errors;
  auto cfg = render::JobConfig::parse(body, fs::current_path(), errors);
  if (!errors.empty()) return error_response(400, "validation_error", "invalid job config", errors);
  if (cfg.negative_prompt.empty()) cfg.negative_prompt = config_.default_negative_prompt;

  const auto job = render::submit_job(jobs_, cfg, config_.registry, sessions_.consent_check(), job_id);
  spdlog::info("job={} event=created total_frames={} session={}", job.id, job.total_frames,
               job.config.character_session.value_or("-"));
  runner_.enqueue(job.id);
  json out = job.to_json();
  out["links"] = {{"self", "/v1/jobs/" + job.id},
                  {"events", "/v1/jobs/" + job.id + "/events"},
                  {"manifest", "/v1/jobs/" + job.id + "/manifest"}};
  HttpResponse r = json_response(201, out);
  r.headers["Location"] = "/v1/jobs/" + job.id;
  return r;
}

HttpResponse Api::route(const HttpRequest& request) {
  const auto t = parse_target(request.target);
  const auto& s = t.segments;
  const std::string& m = request.method;
  auto is = [&](std::initializer_list<const char*> parts) {
    if (s.size() != parts.size()) return false;
    std::size_t i = 0;
    for (const char* p : parts) {
      if (std::string_view(p) != "*" && s[i] != p) return false;
      ++i;
    }
    return true;
  };
  auto method_not_allowed = [&] {
    return error_response(405, "method_not_allowed", m + " not allowed on " + request.target);
  };

  if (s.empty() || s[0] != "v1") return error_response(404, "not_found", "no route for " + request.target);

  if (is({"v1", "health"})) {
    return json_response(200, {{"status", "ok"},
                                {"mock",
                                 {{"generator", config_.generator.mock},
                                  {"llm", config_.llm.mock},
                                  {"embedding", config_.embedding.mock},
                                  {"face_verify", config_.face_verify.mock}}}});
  }

  if (is({"v1", "jobs"})) {
    if (m == "GET") {
      json list = json::array();
      for (const auto& id : jobs_.list_ids()) {
        list.push_back({{"id", id}, {"progress", progress_json(jobs_.progress(id))}});
      }
      return json_response(200, {{"jobs", list}});
    }
    if (m == "POST") return create_job(parse_body(request, false), std::nullopt);
    return method_not_allowed();
  }

  if (s.size() >= 3 && s[1] == "jobs") {
    const std::string& id = s[2];
    if (!render::valid_id(id) || !jobs_.exists(id)) throw Error(ErrorKind::NotFound, "unknown job: " + id);
    if (is({"v1", "jobs", "*"})) {
      if (m != "GET") return method_not_allowed();
      json out = jobs_.load(id).to_json();
      out["progress"] = progress_json(jobs_.progress(id));
      return json_response(200, out);
    }
    if (is({"v1", "jobs", "*", "manifest"})) {
      if (m != "GET") return method_not_allowed();
      const auto path = jobs_.job_dir(id) / "manifest.json";
      if (!fs::exists(path)) {
        throw Error(ErrorKind::Protocol, "job " + id + " has no manifest yet (status " +
                                             std::string(render::to_string(jobs_.load(id).status)) + ")");
      }
      return {200, "application/json", util::read_text(path), {}};
    }
    if (is({"v1", "jobs", "*", "frames", "*"})) {
      if (m != "GET") return method_not_allowed();
      std::size_t n = 0;
      const auto& ns = s[4];
      const auto [p, ec] = std::from_chars(ns.data(), ns.data() + ns.size(), n);
      if (ec != std::errc() || p != ns.data() + ns.size()) {
        throw Error(ErrorKind::Validation, "frame index must be a non-negative integer");
      }
      const auto path = jobs_.frame_path(id, n);
      if (!fs::exists(path)) throw Error(ErrorKind::NotFound, "frame " + ns + " not rendered");
      const auto bytes = util::read_bytes(path);
      return {200, "image/png", std::string(bytes.begin(), bytes.end()), {}};
    }
    if (is({"v1", "jobs", "*", "eval"})) {
      if (m != "POST") return method_not_allowed();
      const json body = parse_body(request, true);
      const auto job = jobs_.load(id);
      if (job.status != render::JobStatus::Done) {
        throw Error(ErrorKind::Protocol, "job " + id + " is not Done");
      }
      fs::path refs;
      if (body.contains("refs_dir")) {
        if (!body["refs_dir"].is_string()) {
          return error_response(400, "validation_error", "invalid eval request", {{"refs_dir", "expected a string"}});
        }
        refs = body["refs_dir"].get<std::string>();
      } else if (job.config.character_session) {
        refs = sessions_.snapshots_dir(*job.config.character_session);
      } else {
        return error_response(400, "validation_error", "invalid eval request",
                              {{"refs_dir", "required when the job has no character session"}});
      }
      const auto report = eval::evaluate_job(jobs_.job_dir(id), refs, eval_clients_, config_.render_workers);
      spdlog::info("job={} event=evaluated refs={} cached={}", id, report.reference_count, report.cached);
      return json_response(200, report.to_json());
    }
    if (is({"v1", "jobs", "*", "events"})) {
      return error_response(400, "validation_error", "progress events are served as a stream");
    }
  }

  if (is({"v1", "charcha", "sessions"})) {
    if (m != "POST") return method_not_allowed();
    const json body = parse_body(request, true);
    std::optional<std::uint64_t> seed;
    if (body.contains("rng_seed")) {
      if (!config_.allow_client_seed) {
        return error_response(400, "validation_error", "invalid session request",
                              {{"rng_seed", "not accepted by this server"}});
      }
      if (!body["rng_seed"].is_number_unsigned()) {
        return error_response(400, "validation_error", "invalid session request",
                              {{"rng_seed", "expected a non-negative integer"}});
      }
      seed = body["rng_seed"].get<std::uint64_t>();
    }
    const auto c = sessions_.create(seed);
    return json_response(201, {{"id", c.id},
                               {"token", c.token},
                               {"expires_unix_ms", c.expires_unix_ms},
                               {"stream", "/v1/charcha/sessions/" + c.id + "/stream?token=" + c.token}});
  }

  if (s.size() >= 4 && s[1] == "charcha" && s[2] == "sessions") {
    const std::string& id = s[3];
    if (is({"v1", "charcha", "sessions", "*"}) || is({"v1", "charcha", "sessions", "*", "verdict"})) {
      if (m != "GET") return method_not_allowed();
      return json_response(200, sessions_.status(id));
    }
    if (is({"v1", "charcha", "sessions", "*", "snapshots"})) {
      if (m != "POST") return method_not_allowed();
      const auto token = bearer(request, t);
      if (!sessions_.exists(id)) throw Error(ErrorKind::NotFound, "unknown session: " + id);
      sessions_.authorize(id, token.value_or(""));
      const auto tag = t.query.find("tag");
      if (tag == t.query.end() || tag->second.empty()) {
        return error_response(400, "validation_error", "invalid snapshot upload", {{"tag", "required"}});
      }
      const std::vector<std::uint8_t> bytes(request.body.begin(), request.body.end());
      const auto name = sessions_.store_snapshot(id, tag->second, bytes);
      return json_response(201, {{"session", id}, {"tag", tag->second}, {"stored", name}});
    }
    if (is({"v1", "charcha", "sessions", "*", "jobs"})) {
      if (m != "POST") return method_not_allowed();
      // Unknown session, wrong token and missing verdict all read as 403
      // here: this route only exists to create a job with that likeness.
      if (!sessions_.exists(id)) throw Error(ErrorKind::Forbidden, "charcha verification required");
      sessions_.authorize(id, bearer(request, t).value_or(""));
      return create_job(parse_body(request, false), id);
    }
    if (is({"v1", "charcha", "sessions", "*", "stream"})) {
      return error_response(426, "protocol_error", "WebSocket upgrade required");
    }
  }
  return error_response(404, "not_found", "no route for " + m + " " + request.target);
}

}  // namespace mvp::service
