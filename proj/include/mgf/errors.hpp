#pragma once

#include <stdexcept>
#include <string>

namespace mgf {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or dimension disagreement between operands.
struct DimensionError : Error {
  using Error::Error;
};

// A documented contract was violated at runtime (empty support row,
// non-finite value, empty pooling subset, ...).
struct ContractError : Error {
  using Error::Error;
};

// Malformed input file or document.
struct ParseError : Error {
  using Error::Error;
};

// Unsupported schema version in a stored document.
struct VersionError : Error {
  using Error::Error;
};

// Inconsistent or out-of-range configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Out-of-range index (class label, sample id, ...).
struct IndexError : Error {
  using Error::Error;
};

// Non-finite value produced inside a numeric kernel.
struct NumericError : Error {
  using Error::Error;
};

// Failure while training (diverged loss, ...).
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace mgf
