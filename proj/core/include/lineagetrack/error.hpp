#pragma once

#include <stdexcept>
#include <string>

namespace lineagetrack {

/// Base exception. `code()` is a short machine-readable tag ("io", "config",
/// "backend", ...) that the CLI prints alongside the message.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& message, std::string code = "runtime")
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

private:
  std::string code_;
};

class IoError : public Error {
public:
  explicit IoError(const std::string& message) : Error(message, "io") {}
};

class BackendError : public Error {
public:
  explicit BackendError(const std::string& message, std::string code = "backend")
      : Error(message, std::move(code)) {}
};

} // namespace lineagetrack
