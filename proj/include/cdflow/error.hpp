#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cdflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  NonFiniteError() : Error("non-finite input") {}
};

// A factor entry whose magnitude fell below the invertibility threshold.
class SingularFactorError : public Error {
 public:
  SingularFactorError(std::size_t factor, std::size_t entry, double magnitude)
      : Error("singular factor " + std::to_string(factor) + " at entry " +
              std::to_string(entry) + " (|value| = " +
              std::to_string(magnitude) + ")"),
        factor_(factor),
        entry_(entry) {}

  std::size_t factor() const { return factor_; }
  std::size_t entry() const { return entry_; }

 private:
  std::size_t factor_;
  std::size_t entry_;
};

class SymmetryError : public Error {
 public:
  SymmetryError() : Error("symmetry violated") {}
};

// Training or evaluation produced a non-finite quantity.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Bad user configuration, unreadable files, malformed artifacts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdflow
