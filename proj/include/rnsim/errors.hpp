#ifndef RNSIM_ERRORS_HPP
#define RNSIM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rnsim {

/// Process exit codes used by the command line tool.
enum class ExitCode : int {
  success = 0,
  usage = 1,
  config = 2,
  data = 3,
  convergence = 4,
  io = 5,
  internal = 6,
};

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::internal; }
};

struct ConfigError : Error {
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

struct DataError : Error {
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

/// Static arbitrage detected in a price grid.
struct ArbitrageError : DataError {
  using DataError::DataError;
};

/// A coordinate fell outside the calibrated rescaling range of a flow.
struct RangeError : DataError {
  using DataError::DataError;
};

struct ConvergenceError : Error {
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::convergence; }
};

struct IoError : Error {
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::io; }
};

}  // namespace rnsim

#endif  // RNSIM_ERRORS_HPP
