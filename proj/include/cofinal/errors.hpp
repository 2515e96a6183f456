#pragma once

#include <stdexcept>
#include <string>

namespace cofinal {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or rank mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value (hyperparameter out of range, bad mode, ...).
struct ConfigError : Error {
    using Error::Error;
};

// NaN or Inf produced by a forward computation.
struct NumericError : Error {
    using Error::Error;
};

// Class label outside its valid index range.
struct LabelError : Error {
    using Error::Error;
};

// Score outside the configured [0, S] range.
struct RangeError : Error {
    using Error::Error;
};

// Malformed file: bad magic, version, truncation, CRC failure.
struct FormatError : Error {
    using Error::Error;
};

// Metric undefined for the given input (constant batch, too few samples).
struct MetricError : Error {
    using Error::Error;
};

// Requested an orthonormal d x K rotation with d < K.
struct InfeasibleRotationError : Error {
    using Error::Error;
};

// A prototype row has zero norm and cannot be angle-normalized.
struct DegeneratePrototypeError : Error {
    using Error::Error;
};

}  // namespace cofinal
