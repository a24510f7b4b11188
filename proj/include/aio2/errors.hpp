#pragma once

#include <stdexcept>
#include <string>

namespace aio2 {

// Violated precondition on data passed between modules.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid user-supplied configuration value.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Requested a windowed statistic before enough epochs exist.
class InsufficientHistoryError : public std::runtime_error {
 public:
  explicit InsufficientHistoryError(const std::string& what)
      : std::runtime_error(what) {}
};

// Nonlinear fit failed on every restart; message carries diagnostics.
class FitError : public std::runtime_error {
 public:
  explicit FitError(const std::string& what) : std::runtime_error(what) {}
};

// Scene synthesis could not place objects within the retry budget.
class GenerationError : public std::runtime_error {
 public:
  explicit GenerationError(const std::string& what)
      : std::runtime_error(what) {}
};

// File parsing / serialization failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace aio2
