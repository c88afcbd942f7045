#pragma once

#include <stdexcept>
#include <string>

namespace ccd {

// Base of every error the engine raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

// Zero-norm vectors, empty inputs and similar inputs for which the
// requested quantity is undefined.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class FrozenNetError : public Error {
 public:
  using Error::Error;
};

class StaleTraceError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class UnknownLabel : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ccd
