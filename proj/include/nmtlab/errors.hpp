#pragma once

#include <stdexcept>
#include <string>

namespace nmtlab {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid rig or model definition (bad geometry, non-SPD mass, bad indices).
class ModelError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or argument supplied by a caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An iterative solver failed to converge.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Signal processing / identification precondition violated.
class IdentificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace nmtlab
