#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace promptreg {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: configuration, flags, dataset files. Maps to CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Arithmetic precondition violated (zero-length prompt, nonpositive log input).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The backend could not produce a response (network, exhausted retries, credentials).
class BackendUnavailable : public Error {
 public:
  using Error::Error;
};

/// The backend answered with a non-retryable 4xx.
class RequestRejected : public Error {
 public:
  RequestRejected(int status, std::string body)
      : Error("request rejected: HTTP " + std::to_string(status) + ": " + body),
        status_(status),
        body_(std::move(body)) {}

  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

/// The scripted backend has no fixture for a request.
class FixtureMiss : public Error {
 public:
  using Error::Error;
};

/// Model output did not contain the structured payload a stage needs.
class MalformedOutput : public Error {
 public:
  using Error::Error;
};

class MissingField : public MalformedOutput {
 public:
  explicit MissingField(const std::string& key)
      : MalformedOutput("missing field " + key), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class TagsAbsent : public MalformedOutput {
 public:
  TagsAbsent() : MalformedOutput("variable tags absent") {}
};

/// Persistent state on disk could not be read back.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace promptreg
