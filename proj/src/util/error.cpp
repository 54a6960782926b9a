#include "mvp/error.hpp"

namespace mvp {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::AudioTooShort: return "audio_too_short";
    case ErrorKind::InsufficientFrames: return "insufficient_frames";
    case ErrorKind::Domain: return "domain_error";
    case ErrorKind::Config: return "config_error";
    case ErrorKind::Validation: return "validation_error";
    case ErrorKind::Protocol: return "protocol_error";
    case ErrorKind::Parse: return "parse_error";
    case ErrorKind::NotFound: return "not_found";
    case ErrorKind::Rejected: return "rejected";
    case ErrorKind::Forbidden: return "forbidden";
    case ErrorKind::Unavailable: return "unavailable";
    case ErrorKind::Io: return "io_error";
  }
  return "unknown";
}

}  // namespace mvp
