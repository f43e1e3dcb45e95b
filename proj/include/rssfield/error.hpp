#pragma once

#include <stdexcept>
#include <string>

namespace rssfield {

// Root of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Data that cannot identify the requested quantity (too few sensors,
// rank-deficient designs).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// The centroid accumulator has never seen a positive weight.
class NoFixError : public Error {
 public:
  using Error::Error;
};

// Factorizations that fail even after the jitter ladder.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A data file that opened fine but does not follow its schema.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace rssfield
