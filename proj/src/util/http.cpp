#include "mvp/util/http.hpp"

#include <httplib.h>

#include "mvp/error.hpp"

namespace mvp::util {

namespace {

struct SplitUrl {
  std::string origin;
  std::string path;
};

SplitUrl split(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorKind::Config, "malformed url: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

nlohmann::json post_json(const std::string& url, const nlohmann::json& body, int timeout_ms) {
  const SplitUrl parts = split(url);
  httplib::Client client(parts.origin);
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  auto res = client.Post(parts.path, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorKind::Unavailable,
                url + ": " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorKind::Unavailable, url + ": HTTP " + std::to_string(res->status));
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse, url + ": " + e.what());
  }
}

}  // namespace mvp::util
