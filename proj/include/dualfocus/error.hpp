#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dualfocus {

enum class ErrorCode {
  DegenerateBox,
  InvalidArgument,
  IoError,
  DecodeError,
  NoCoordinates,
  AmbiguousCount,
  EmptyQuestion,
  MalformedContext,
  BackendUnavailable,
  ResponseMissingLogprobs,
  Timeout,
  UnsupportedByServer,
  EmptyAnswer,
  BoxPredictionFailed,
  SchemaError,
  EmptySplit,
  ConfigError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateBox: return "DegenerateBox";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::NoCoordinates: return "NoCoordinates";
    case ErrorCode::AmbiguousCount: return "AmbiguousCount";
    case ErrorCode::EmptyQuestion: return "EmptyQuestion";
    case ErrorCode::MalformedContext: return "MalformedContext";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::ResponseMissingLogprobs: return "ResponseMissingLogprobs";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::UnsupportedByServer: return "UnsupportedByServer";
    case ErrorCode::EmptyAnswer: return "EmptyAnswer";
    case ErrorCode::BoxPredictionFailed: return "BoxPredictionFailed";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// True for failures of the model service itself (as opposed to bad input).
  bool is_backend_error() const noexcept {
    return code_ == ErrorCode::BackendUnavailable || code_ == ErrorCode::ResponseMissingLogprobs ||
           code_ == ErrorCode::Timeout || code_ == ErrorCode::UnsupportedByServer;
  }

 private:
  ErrorCode code_;
};

/// Raised by load_vg for a single malformed record; the stream continues.
class SchemaError : public Error {
 public:
  SchemaError(std::size_t record_index, std::string field, const std::string& detail)
      : Error(ErrorCode::SchemaError,
              "record " + std::to_string(record_index) + ", field '" + field + "': " + detail),
        record_index_(record_index),
        field_(std::move(field)) {}

  std::size_t record_index() const noexcept { return record_index_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t record_index_;
  std::string field_;
};

}  // namespace dualfocus
