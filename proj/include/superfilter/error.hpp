#pragma once

#include <stdexcept>
#include <string>

namespace superfilter {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
  kConfig = 2,
  kBackend = 3,
  kData = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
  [[nodiscard]] int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

/// Invalid parameters: ratios out of range, zero budgets, malformed templates.
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

/// Scorer or embedder transport failures.
struct BackendError : Error {
  explicit BackendError(const std::string& what) : Error(ErrorKind::kBackend, what) {}
};

/// Malformed or invalid data: parse failures, empty responses, bad logprobs.
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

struct FormatError : DataError {
  using DataError::DataError;
};

struct ValidationError : DataError {
  using DataError::DataError;
};

/// Selected ids that do not exist in the dataset they are applied to.
struct ConsistencyError : DataError {
  using DataError::DataError;
};

struct NumericError : DataError {
  using DataError::DataError;
};

/// Rank correlation is undefined when either side has zero rank variance.
struct UndefinedCorrelation : DataError {
  using DataError::DataError;
};

}  // namespace superfilter
