#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace burstq {

enum class ErrorCode {
  ValidationError,
  NotFound,
  IllegalTransition,
  StorageFailure,
  OversizeRejected,
  DeriveSourceNotReady,
  AuthFailure,
  ConflictingResults,
  NotReady,
  NoResults,
  MalformedPayload,
  Forbidden,
  PayloadTooLarge,
  ConfigError,
  Unavailable,
};

std::string_view to_string(ErrorCode code);

/// HTTP status used when an error crosses the REST boundary.
int http_status(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace burstq
