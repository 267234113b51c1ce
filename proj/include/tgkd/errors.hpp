#pragma once

#include <stdexcept>
#include <string>

namespace tgkd {

// Exit codes used by the command-line front end.
enum class ExitCode : int { ok = 0, config = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid configuration: out-of-range knobs, unknown keys, empty classes at setup time.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

/// Malformed or inconsistent input data (files, splits, id alignment).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

/// Non-finite values, shape mismatches and other numeric failures.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::numeric, what) {}
};

}  // namespace tgkd
