#pragma once

#include <stdexcept>
#include <string>

namespace teapcr {

/// Tensor shape or arity violation.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Out-of-range token, label, or element index.
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Invalid parameter value or unsupported configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// API misuse (e.g. backward on a non-scalar).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed input data: parse failures, bad splits, schema mismatches.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Checkpoint corruption, truncation, or version mismatch.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Metric requested on an empty confusion matrix.
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered where finite values are required.
struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace teapcr
