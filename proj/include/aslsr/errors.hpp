#pragma once

#include <stdexcept>
#include <string>

namespace aslsr {

/// Error taxonomy shared by the library and the CLI exit codes.
enum class ErrorCategory { config = 2, io = 3, geometry = 4, numeric = 5 };

class Error : public std::runtime_error {
public:
  Error(ErrorCategory cat, const std::string& msg) : std::runtime_error(msg), cat_(cat) {}
  ErrorCategory category() const noexcept { return cat_; }
  int exit_code() const noexcept { return static_cast<int>(cat_); }

private:
  ErrorCategory cat_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error(ErrorCategory::config, msg) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(ErrorCategory::io, msg) {}
};

/// Malformed or unsupported file contents. An I/O-category error that names
/// the offending header field where possible.
class FormatError : public IoError {
public:
  explicit FormatError(const std::string& msg) : IoError(msg) {}
};

class GeometryError : public Error {
public:
  explicit GeometryError(const std::string& msg) : Error(ErrorCategory::geometry, msg) {}
};

class NumericError : public Error {
public:
  explicit NumericError(const std::string& msg) : Error(ErrorCategory::numeric, msg) {}
};

}  // namespace aslsr
