#pragma once

#include <stdexcept>
#include <string>

namespace posekit {

enum class ErrorCode {
  invalid_argument,
  out_of_range,
  unsupported_bin_size,
  shape_mismatch,
  behind_camera,
  empty_render,
  empty_batch,
  empty_source,
  degenerate_bbox,
  validation,
  io,
  parse,
  config,
  divergence,
  usage,
};

constexpr const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "E_INVALID_ARGUMENT";
    case ErrorCode::out_of_range: return "E_OUT_OF_RANGE";
    case ErrorCode::unsupported_bin_size: return "E_UNSUPPORTED_BIN_SIZE";
    case ErrorCode::shape_mismatch: return "E_SHAPE_MISMATCH";
    case ErrorCode::behind_camera: return "E_BEHIND_CAMERA";
    case ErrorCode::empty_render: return "E_EMPTY_RENDER";
    case ErrorCode::empty_batch: return "E_EMPTY_BATCH";
    case ErrorCode::empty_source: return "E_EMPTY_SOURCE";
    case ErrorCode::degenerate_bbox: return "E_DEGENERATE_BBOX";
    case ErrorCode::validation: return "E_VALIDATION";
    case ErrorCode::io: return "E_IO";
    case ErrorCode::parse: return "E_PARSE";
    case ErrorCode::config: return "E_CONFIG";
    case ErrorCode::divergence: return "E_DIVERGENCE";
    case ErrorCode::usage: return "E_USAGE";
  }
  return "E_UNKNOWN";
}

// Every failure in the library is reported through this type; the code is
// stable and machine-readable, the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace posekit
