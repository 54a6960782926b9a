#include <cstdlib>
#include <set>

#include "mvp/error.hpp"
#include "mvp/service/service.hpp"
#include "mvp/util/files.hpp"

namespace mvp::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::Config, where + ": expected an object");
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw Error(ErrorKind::Config, where + ": unknown key \"" + k + "\"");
  }
}

template <typename T>
void take(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::Config, where + "." + key + ": wrong type");
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

EndpointConfig endpoint_from_json(const json& j, const std::string& where) {
  reject_unknown(j, {"url", "timeout_ms", "mock", "params"}, where);
  EndpointConfig e;
  take(j, "url", e.url, where);
  take(j, "timeout_ms", e.timeout_ms, where);
  take(j, "mock", e.mock, where);
  if (j.contains("params")) {
    if (!j["params"].is_object()) throw Error(ErrorKind::Config, where + ".params: expected an object");
    e.params = j["params"];
  }
  return e;
}

json endpoint_to_json(const EndpointConfig& e) {
  return {{"url", e.url}, {"timeout_ms", e.timeout_ms}, {"mock", e.mock}, {"params", e.params}};
}

bool parse_bool(const std::string& v, const std::string& name) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw Error(ErrorKind::Config, name + ": expected a boolean, got \"" + v + "\"");
}

int parse_int(const std::string& v, const std::string& name) {
  try {
    std::size_t used = 0;
    const int n = std::stoi(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::Config, name + ": expected an integer, got \"" + v + "\"");
}

}  // namespace

ServiceConfig ServiceConfig::from_json(const json& doc, const fs::path& base_dir) {
  reject_unknown(doc, {"listen", "threads", "paths", "endpoints", "charcha", "render",
                       "default_negative_prompt", "registry"},
                 "config");
  ServiceConfig c;
  if (doc.contains("listen")) {
    const auto& l = doc["listen"];
    reject_unknown(l, {"host", "port"}, "listen");
    take(l, "host", c.host, "listen");
    take(l, "port", c.port, "listen");
  }
  take(doc, "threads", c.threads, "config");
  if (doc.contains("paths")) {
    const auto& p = doc["paths"];
    reject_unknown(p, {"jobs_dir", "sessions_dir", "traces_dir"}, "paths");
    std::string s;
    if (p.contains("jobs_dir")) { take(p, "jobs_dir", s, "paths"); c.jobs_dir = s; }
    if (p.contains("sessions_dir")) { take(p, "sessions_dir", s, "paths"); c.sessions_dir = s; }
    if (p.contains("traces_dir")) { take(p, "traces_dir", s, "paths"); c.traces_dir = s; }
  }
  c.jobs_dir = resolve(c.jobs_dir, base_dir);
  c.sessions_dir = resolve(c.sessions_dir, base_dir);
  c.traces_dir = resolve(c.traces_dir, base_dir);
  if (doc.contains("endpoints")) {
    const auto& e = doc["endpoints"];
    reject_unknown(e, {"generator", "llm", "embedding", "face_verify"}, "endpoints");
    if (e.contains("generator")) c.generator = endpoint_from_json(e["generator"], "endpoints.generator");
    if (e.contains("llm")) c.llm = endpoint_from_json(e["llm"], "endpoints.llm");
    if (e.contains("embedding")) c.embedding = endpoint_from_json(e["embedding"], "endpoints.embedding");
    if (e.contains("face_verify")) {
      c.face_verify = endpoint_from_json(e["face_verify"], "endpoints.face_verify");
    }
  }
  if (doc.contains("charcha")) {
    json ch = doc["charcha"];
    if (!ch.is_object()) throw Error(ErrorKind::Config, "charcha: expected an object");
    take(ch, "session_ttl_s", c.session_ttl_s, "charcha");
    take(ch, "allow_client_seed", c.allow_client_seed, "charcha");
    ch.erase("session_ttl_s");
    ch.erase("allow_client_seed");
    c.charcha = charcha::SessionConfig::from_json(ch);
  }
  if (doc.contains("render")) {
    const auto& r = doc["render"];
    reject_unknown(r, {"workers", "max_attempts", "backoff_base_ms"}, "render");
    take(r, "workers", c.render_workers, "render");
    take(r, "max_attempts", c.render_max_attempts, "render");
    take(r, "backoff_base_ms", c.render_backoff_ms, "render");
  }
  take(doc, "default_negative_prompt", c.default_negative_prompt, "config");
  if (doc.contains("registry")) c.registry = render::ModelRegistry::from_json(doc["registry"]);
  c.validate();
  return c;
}

json ServiceConfig::to_json() const {
  json ch = charcha.to_json();
  ch["session_ttl_s"] = session_ttl_s;
  ch["allow_client_seed"] = allow_client_seed;
  return {{"listen", {{"host", host}, {"port", port}}},
          {"threads", threads},
          {"paths",
           {{"jobs_dir", jobs_dir.string()},
            {"sessions_dir", sessions_dir.string()},
            {"traces_dir", traces_dir.string()}}},
          {"endpoints",
           {{"generator", endpoint_to_json(generator)},
            {"llm", endpoint_to_json(llm)},
            {"embedding", endpoint_to_json(embedding)},
            {"face_verify", endpoint_to_json(face_verify)}}},
          {"charcha", ch},
          {"render",
           {{"workers", render_workers},
            {"max_attempts", render_max_attempts},
            {"backoff_base_ms", render_backoff_ms}}},
          {"default_negative_prompt", default_negative_prompt},
          {"registry", registry.to_json()}};
}

void ServiceConfig::apply_env(const std::function<const char*(const char*)>& getenv_fn) {
  auto env = [&](const char* name) -> std::optional<std::string> {
    const char* v = getenv_fn(name);
    if (!v) return std::nullopt;
    return std::string(v);
  };
  if (auto v = env("MVP_HOST")) host = *v;
  if (auto v = env("MVP_PORT")) {
    const int p = parse_int(*v, "MVP_PORT");
    if (p < 0 || p > 65535) throw Error(ErrorKind::Config, "MVP_PORT out of range");
    port = static_cast<std::uint16_t>(p);
  }
  if (auto v = env("MVP_THREADS")) threads = parse_int(*v, "MVP_THREADS");
  if (auto v = env("MVP_JOBS_DIR")) jobs_dir = *v;
  if (auto v = env("MVP_SESSIONS_DIR")) sessions_dir = *v;
  if (auto v = env("MVP_TRACES_DIR")) traces_dir = *v;
  if (auto v = env("MVP_RENDER_WORKERS")) render_workers = parse_int(*v, "MVP_RENDER_WORKERS");
  const std::pair<const char*, EndpointConfig*> endpoints[] = {
      {"GENERATOR", &generator}, {"LLM", &llm}, {"EMBEDDING", &embedding}, {"FACE_VERIFY", &face_verify}};
  for (const auto& [name, ep] : endpoints) {
    const std::string prefix = std::string("MVP_") + name + "_";
    if (auto v = env((prefix + "URL").c_str())) ep->url = *v;
    if (auto v = env((prefix + "TIMEOUT_MS").c_str())) ep->timeout_ms = parse_int(*v, prefix + "TIMEOUT_MS");
    if (auto v = env((prefix + "MOCK").c_str())) ep->mock = parse_bool(*v, prefix + "MOCK");
  }
  validate();
}

void ServiceConfig::validate() const {
  if (threads < 1) throw Error(ErrorKind::Config, "threads must be >= 1");
  if (render_workers < 1) throw Error(ErrorKind::Config, "render.workers must be >= 1");
  if (render_max_attempts < 1) throw Error(ErrorKind::Config, "render.max_attempts must be >= 1");
  if (render_backoff_ms < 0) throw Error(ErrorKind::Config, "render.backoff_base_ms must be >= 0");
  if (session_ttl_s <= 0) throw Error(ErrorKind::Config, "charcha.session_ttl_s must be > 0");
  const std::pair<const char*, const EndpointConfig*> endpoints[] = {
      {"generator", &generator}, {"llm", &llm}, {"embedding", &embedding}, {"face_verify", &face_verify}};
  for (const auto& [name, ep] : endpoints) {
    if (ep->timeout_ms <= 0) {
      throw Error(ErrorKind::Config, std::string("endpoints.") + name + ".timeout_ms must be > 0");
    }
    if (!ep->mock && ep->url.empty()) {
      throw Error(ErrorKind::Config, std::string("endpoints.") + name + ".url is required when mock is false");
    }
  }
}

ServiceConfig load_config(const std::optional<fs::path>& path) {
  ServiceConfig c;
  if (path) c = ServiceConfig::from_json(util::read_json(*path), fs::absolute(*path).parent_path());
  c.apply_env([](const char* n) { return std::getenv(n); });
  return c;
}

ClientSet make_clients(const ServiceConfig& config) {
  ClientSet s;
  if (config.generator.mock) {
    render::MockGeneratorOptions o;
    const auto& p = config.generator.params;
    o.latent_dim = p.value("latent_dim", o.latent_dim);
    o.image_size = p.value("image_size", o.image_size);
    o.decode_delay_ms = p.value("decode_delay_ms", o.decode_delay_ms);
    s.generator = std::make_unique<render::MockGenerator>(o);
  } else {
    render::GeneratorParams g;
    const auto& p = config.generator.params;
    g.steps = p.value("steps", g.steps);
    g.guidance = p.value("guidance", g.guidance);
    g.width = p.value("width", g.width);
    g.height = p.value("height", g.height);
    g.space = p.value("space", g.space);
    s.generator = std::make_unique<render::HttpGenerator>(config.generator.url,
                                                          config.generator.timeout_ms, g);
  }
  if (config.llm.mock) {
    s.llm = std::make_unique<timeline::MockLlmClient>();
  } else {
    s.llm = std::make_unique<timeline::HttpLlmClient>(config.llm.url, config.llm.timeout_ms);
  }
  if (config.embedding.mock) {
    s.embedding = std::make_unique<eval::MockEmbeddingClient>(
        config.embedding.params.value("dim", std::size_t{64}),
        config.embedding.params.value("constant", false));
  } else {
    s.embedding = std::make_unique<eval::HttpEmbeddingClient>(config.embedding.url,
                                                              config.embedding.timeout_ms);
  }
  if (config.face_verify.mock) {
    s.face = std::make_unique<eval::MockFaceVerifyClient>(
        config.face_verify.params.value("no_face_rate", 0.1),
        config.face_verify.params.value("unverified_rate", 0.1));
  } else {
    s.face = std::make_unique<eval::HttpFaceVerifyClient>(config.face_verify.url,
                                                          config.face_verify.timeout_ms);
  }
  return s;
}

}  // namespace mvp::service
