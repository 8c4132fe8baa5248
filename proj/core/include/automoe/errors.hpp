#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

namespace automoe {

/// Invalid user-supplied configuration (search space, schedule, CLI flags).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape or index mismatch.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed structured text. `offset` is the 0-based byte offset of the
/// failure, or npos when the failure is semantic (missing or ill-typed field).
class ParseError : public std::runtime_error {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// No candidate satisfying the search constraint could be found.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite loss or parameter was produced during training.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long step, std::string last_checkpoint)
      : std::runtime_error(what), step_(step), last_checkpoint_(std::move(last_checkpoint)) {}

  long step() const noexcept { return step_; }
  /// Path of the last checkpoint written before the failure; empty if none.
  const std::string& last_checkpoint() const noexcept { return last_checkpoint_; }

 private:
  long step_;
  std::string last_checkpoint_;
};

}  // namespace automoe
