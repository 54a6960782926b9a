#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace mvp::util {

// Blocking JSON POST. Transport failures and non-2xx replies throw
// Error(Unavailable); a 2xx reply that is not JSON throws Error(Parse).
nlohmann::json post_json(const std::string& url, const nlohmann::json& body, int timeout_ms);

}  // namespace mvp::util
