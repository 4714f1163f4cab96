#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mcpradar {

enum class ErrorCode {
  InvalidArgument,
  Io,
  Parse,
  DuplicateId,
  Schema,
  SpawnFailed,
  StartupTimeout,
  Timeout,
  ProtocolVersion,
  HandshakeRejected,
  MalformedResponse,
  Transport,
  InvalidState,
  ScriptExhausted,
  Provider,
  RateLimited,
  Auth,
  Config,
  Dataset,
  Division,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::DuplicateId: return "duplicate-id";
    case ErrorCode::Schema: return "schema";
    case ErrorCode::SpawnFailed: return "spawn-failed";
    case ErrorCode::StartupTimeout: return "startup-timeout";
    case ErrorCode::Timeout: return "timeout";
    case ErrorCode::ProtocolVersion: return "protocol-version";
    case ErrorCode::HandshakeRejected: return "handshake-rejected";
    case ErrorCode::MalformedResponse: return "malformed-response";
    case ErrorCode::Transport: return "transport";
    case ErrorCode::InvalidState: return "invalid-state";
    case ErrorCode::ScriptExhausted: return "script-exhausted";
    case ErrorCode::Provider: return "provider";
    case ErrorCode::RateLimited: return "rate-limited";
    case ErrorCode::Auth: return "auth";
    case ErrorCode::Config: return "config";
    case ErrorCode::Dataset: return "dataset";
    case ErrorCode::Division: return "division";
  }
  return "unknown";
}

/// Every failure raised by the library. `raw()` carries offending bytes
/// (a server line, an HTTP body) when there are any.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string raw = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        raw_(std::move(raw)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& raw() const noexcept { return raw_; }

 private:
  ErrorCode code_;
  std::string raw_;
};

}  // namespace mcpradar
