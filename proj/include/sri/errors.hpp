#pragma once

#include <stdexcept>
#include <string>

namespace sri {

/// Invalid argument passed to a public operation (bad shape, bad range, ...).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A configuration that cannot be satisfied (degenerate setting, schema violation).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Requested combination is not supported (e.g. gesture demos on a grid).
struct UnsupportedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A non-finite value was produced inside a numeric op.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training diverged or an optimizer step saw a non-finite gradient.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingFileError : LoadError {
  using LoadError::LoadError;
};
struct HeaderError : LoadError {
  using LoadError::LoadError;
};
struct VersionError : LoadError {
  using LoadError::LoadError;
};
struct TruncatedError : LoadError {
  using LoadError::LoadError;
};

/// Every candidate assigns zero likelihood to the observed evidence.
struct EvidenceError : std::runtime_error {
  EvidenceError(const std::string& what, std::size_t trajectory)
      : std::runtime_error(what), trajectory_index(trajectory) {}
  std::size_t trajectory_index;
};

/// Exhaustive enumeration would exceed its budget.
struct SizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Goal proximity is undefined when the initial distance is zero.
struct DegenerateTrialError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sri
