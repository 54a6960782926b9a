#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mvp::util {

std::string read_text(const std::filesystem::path& path);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

// Write to a sibling temp file, fsync, then rename over the target, so a
// reader (or a restarted process) only ever sees a complete file.
void write_atomic(const std::filesystem::path& path, std::string_view contents);
void write_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& contents);

void append_line(const std::filesystem::path& path, std::string_view line);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace mvp::util
