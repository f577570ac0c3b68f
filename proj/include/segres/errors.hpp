#pragma once

#include <stdexcept>
#include <string>

namespace segres {

// Error taxonomy shared by all modules. The CLI maps these onto its exit-code
// contract: usage/config problems exit 2, numeric aborts exit 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Array dimensions disagree (image vs. label map, channel counts, ...).
struct ShapeError : Error {
  using Error::Error;
};

// A value is outside its admissible range (label >= K, pixel outside [0,1]).
struct RangeError : Error {
  using Error::Error;
};

// Paired label maps disagree on the number of classes.
struct ClassMismatchError : Error {
  using Error::Error;
};

// Invalid parameter to an operation (sigma <= 0, quality outside 1..100, ...).
struct DomainError : Error {
  using Error::Error;
};

// Invalid configuration (dataset/training/CLI).
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite value where a finite one is required; training NaN aborts.
struct NumericError : Error {
  using Error::Error;
};

// File system / codec failures, annotated with the offending path.
struct IoError : Error {
  using Error::Error;
};

}  // namespace segres
