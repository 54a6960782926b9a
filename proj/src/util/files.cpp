#include "mvp/util/files.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

#include "mvp/error.hpp"

namespace mvp::util {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  const std::string s = read_text(path);
  return {s.begin(), s.end()};
}

namespace {

void write_fd_fully(int fd, const char* data, std::size_t size, const fs::path& path) {
  while (size > 0) {
    const ssize_t n = ::write(fd, data, size);
    if (n < 0) {
      ::close(fd);
      throw Error(ErrorKind::Io, "write failed: " + path.string());
    }
    data += n;
    size -= static_cast<std::size_t>(n);
  }
}

}  // namespace

void write_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(ErrorKind::Io, "cannot create " + tmp.string());
  write_fd_fully(fd, contents.data(), contents.size(), tmp);
  ::fsync(fd);
  ::close(fd);
  fs::rename(tmp, path);
}

void write_atomic(const fs::path& path, const std::vector<std::uint8_t>& contents) {
  write_atomic(path, std::string_view(reinterpret_cast<const char*>(contents.data()),
                                      contents.size()));
}

void append_line(const fs::path& path, std::string_view line) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string buf(line);
  buf.push_back('\n');
  write_fd_fully(fd, buf.data(), buf.size(), path);
  ::fsync(fd);
  ::close(fd);
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  write_atomic(path, doc.dump(2) + "\n");
}

}  // namespace mvp::util
