#pragma once

#include <stdexcept>
#include <string>

namespace transnet {

// Shape/contract violations are programming errors; numeric and data errors
// come from the inputs. The CLI maps each family to its own exit status.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Bad flags or configuration values.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing or unreadable input files.
struct IngestError : DataError {
  using DataError::DataError;
};

// Malformed content (ids out of range, bad rows).
struct FormatError : DataError {
  using DataError::DataError;
};

// Splits overlapping, inconsistent bundles.
struct ValidationError : DataError {
  using DataError::DataError;
};

struct EpisodeError : DataError {
  using DataError::DataError;
};

struct SpecError : DataError {
  using DataError::DataError;
};

struct EvaluationError : DataError {
  using DataError::DataError;
};

}  // namespace transnet
