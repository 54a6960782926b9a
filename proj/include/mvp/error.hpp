#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mvp {

enum class ErrorKind {
  InvalidArgument,
  AudioTooShort,
  InsufficientFrames,
  Domain,
  Config,
  Validation,
  Protocol,
  Parse,
  NotFound,
  Rejected,
  Forbidden,
  Unavailable,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

// All library failures surface as mvp::Error; kind() lets callers (the CLI,
// the HTTP layer) map a failure onto an exit code or status without parsing
// the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mvp
