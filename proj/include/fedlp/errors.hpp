#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fedlp {

/// Tensor or layer dimensions do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (stale cache, negative weight, bad range...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A NaN or infinity reached a place that requires finite values.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Base for dataset loading failures.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IdxFormatError : public DataError {
 public:
  using DataError::DataError;
};

class IdxTruncatedError : public DataError {
 public:
  using DataError::DataError;
};

class IdxCountMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every problem found while validating a configuration, reported together.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::invalid_argument(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string out = "invalid configuration:";
    for (const auto& p : problems) out += "\n  " + p;
    return out;
  }

  std::vector<std::string> problems_;
};

}  // namespace fedlp
