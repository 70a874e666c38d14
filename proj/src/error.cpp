#include "burstq/error.hpp"

namespace burstq {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::OversizeRejected: return "OversizeRejected";
    case ErrorCode::DeriveSourceNotReady: return "DeriveSourceNotReady";
    case ErrorCode::AuthFailure: return "AuthFailure";
    case ErrorCode::ConflictingResults: return "ConflictingResults";
    case ErrorCode::NotReady: return "NotReady";
    case ErrorCode::NoResults: return "NoResults";
    case ErrorCode::MalformedPayload: return "MalformedPayload";
    case ErrorCode::Forbidden: return "Forbidden";
    case ErrorCode::PayloadTooLarge: return "PayloadTooLarge";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::Unavailable: return "Unavailable";
  }
  return "Unknown";
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValidationError:
    case ErrorCode::MalformedPayload:
    case ErrorCode::ConfigError:
      return 400;
    case ErrorCode::AuthFailure:
    case ErrorCode::Forbidden:
      return 403;
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::IllegalTransition:
    case ErrorCode::DeriveSourceNotReady:
    case ErrorCode::ConflictingResults:
    case ErrorCode::NotReady:
    case ErrorCode::NoResults:
      return 409;
    case ErrorCode::PayloadTooLarge:
      return 413;
    case ErrorCode::OversizeRejected:
      return 422;
    case ErrorCode::StorageFailure:
      return 500;
    case ErrorCode::Unavailable:
      return 503;
  }
  return 500;
}

}  // namespace burstq
