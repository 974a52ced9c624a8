#pragma once

#include <stdexcept>
#include <string>

namespace stratpred {

/// Broad failure classes. Each maps onto one CLI exit code.
enum class ErrorKind {
  Config = 2,
  Dependency = 3,
  Data = 4,
  Numeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class DependencyError : public Error {
 public:
  DependencyError(const std::string& stage, const std::string& what)
      : Error(ErrorKind::Dependency, what), stage_(stage) {}
  /// Name of the stage that has to run first.
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

/// A required column is missing from a tabular source.
class SchemaError : public DataError {
 public:
  explicit SchemaError(const std::string& column)
      : DataError("schema error: missing column '" + column + "'"), column_(column) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

/// Unknown identifier (student, KC, node, ...).
class LookupError : public DataError {
 public:
  explicit LookupError(const std::string& what) : DataError("lookup error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

/// Non-finite loss during optimisation.
class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& model, int epoch, int batch)
      : NumericError("training diverged in " + model + " at epoch " + std::to_string(epoch) +
                     ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace stratpred
