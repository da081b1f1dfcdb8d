#pragma once

#include <stdexcept>
#include <string>

namespace forms {

// Numeric values double as CLI exit codes.
enum class Status : int {
  ok = 0,
  invalid_argument = 1,
  config = 2,
  constraint_violation = 3,
  oracle_mismatch = 4,
  io = 5,
  stage_order = 6,
  corrupt_artifact = 7,
  divergence = 8,
  internal = 9,
};

class Error : public std::runtime_error {
 public:
  Error(Status status, const std::string& what)
      : std::runtime_error(what), status_(status) {}
  Status status() const noexcept { return status_; }

 private:
  Status status_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(Status::invalid_argument, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(Status::config, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(Status::io, what) {}
};

}  // namespace forms
