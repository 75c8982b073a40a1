// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pmidecode {

enum class ErrorCode {
  dimension,
  value,
  config,
  usage,
  parse,
  io,
  trace_miss,
  transport,
  protocol,
  session,
  capability,
  invariant,
};

std::string_view to_string(ErrorCode code);

/// Base of every error the engine raises. The message can be extended with
/// context (step index, image id) while the error propagates.
class Error : public std::exception {
 public:
  Error(ErrorCode code, std::string message) : code_(code), message_(std::move(message)) {}

  ErrorCode code() const noexcept { return code_; }
  const char* what() const noexcept override { return message_.c_str(); }
  const std::string& message() const noexcept { return message_; }

  void add_context(std::string_view context) {
    message_.insert(0, std::string(context) + ": ");
  }

 private:
  ErrorCode code_;
  std::string message_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(std::string m) : Error(ErrorCode::dimension, std::move(m)) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(std::string m) : Error(ErrorCode::value, std::move(m)) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(std::string m) : Error(ErrorCode::config, std::move(m)) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(std::string m) : Error(ErrorCode::usage, std::move(m)) {}
};

class IoError : public Error {
 public:
  explicit IoError(std::string m) : Error(ErrorCode::io, std::move(m)) {}
};

class CapabilityError : public Error {
 public:
  explicit CapabilityError(std::string m) : Error(ErrorCode::capability, std::move(m)) {}
};

class InvariantError : public Error {
 public:
  explicit InvariantError(std::string m) : Error(ErrorCode::invariant, std::move(m)) {}
};

class TraceMissError : public Error {
 public:
  explicit TraceMissError(std::string m) : Error(ErrorCode::trace_miss, std::move(m)) {}
};

class SessionError : public Error {
 public:
  explicit SessionError(std::string m) : Error(ErrorCode::session, std::move(m)) {}
};

/// Parse failure. `line` is 1-based, 0 when unknown; `field` is a JSON pointer.
class ParseError : public Error {
 public:
  ParseError(std::string m, std::string source, std::size_t line = 0, std::string field = {})
      : Error(ErrorCode::parse, format(m, source, line, field)),
        source_(std::move(source)),
        line_(line),
        field_(std::move(field)) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(const std::string& m, const std::string& source, std::size_t line,
                            const std::string& field);

  std::string source_;
  std::size_t line_;
  std::string field_;
};

/// Malformed payload from a remote peer; carries the raw body verbatim.
class ProtocolError : public Error {
 public:
  ProtocolError(std::string m, std::string raw_body)
      : Error(ErrorCode::protocol, std::move(m)), raw_body_(std::move(raw_body)) {}

  const std::string& raw_body() const noexcept { return raw_body_; }

 private:
  std::string raw_body_;
};

/// Network failure talking to a remote source.
class TransportError : public Error {
 public:
  TransportError(std::string m, std::string uri, int attempts, bool retryable)
      : Error(ErrorCode::transport, std::move(m)),
        uri_(std::move(uri)),
        attempts_(attempts),
        retryable_(retryable) {}

  const std::string& uri() const noexcept { return uri_; }
  int attempts() const noexcept { return attempts_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  std::string uri_;
  int attempts_;
  bool retryable_;
};

}  // namespace pmidecode
