#pragma once

#include <stdexcept>
#include <string>

namespace fedbeat {

// Process exit statuses used by the command-line runner.
enum class ExitCode : int {
  ok = 0,
  failure = 1,
  config = 2,
  data = 3,
  numerical = 4,
  pipeline = 5,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::failure; }
};

/// Bad argument to a library call (shape mismatch, empty batch, label out of range).
class InputError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

/// Non-finite value encountered during optimisation.
class NumericalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::numerical; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

/// Missing file or malformed dataset / results file.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

/// All aggregation weights were zero.
class AggregationError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::pipeline; }
};

class PipelineError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::pipeline; }
};

}  // namespace fedbeat
