#pragma once

#include <stdexcept>
#include <string>

namespace laggard {

// Exit codes of the command-line tool; every library error maps onto one.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  data = 3,
  unsupported_model = 4,
  io = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ExitCode::usage, what) {}
};

// Malformed, missing, or inconsistent input data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

class UnsupportedModel : public Error {
 public:
  explicit UnsupportedModel(const std::string& what) : Error(ExitCode::unsupported_model, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::io, what) {}
};

}  // namespace laggard
