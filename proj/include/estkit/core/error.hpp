#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace estkit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: unknown names, unrecognized keys, malformed configs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A state or derivative became non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Every particle weight underflowed.
class WeightCollapseError : public Error {
 public:
  explicit WeightCollapseError(double max_log_likelihood)
      : Error("particle weights collapsed (max log-likelihood " +
              std::to_string(max_log_likelihood) + ")"),
        max_log_likelihood_(max_log_likelihood) {}
  double max_log_likelihood() const { return max_log_likelihood_; }

 private:
  double max_log_likelihood_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

class UnsupportedVersionError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace estkit
