#pragma once

#include <stdexcept>
#include <string>

namespace recmem {

// Error taxonomy. The CLI maps these onto distinct exit codes:
// config = 2, data = 3, transport = 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad or missing configuration, detected at startup.
struct ConfigError : Error {
    using Error::Error;
};

// Input data violates a documented contract (missing annotations, bad splits).
struct DataError : Error {
    using Error::Error;
};

// Malformed file content; message carries line number and field path.
struct ParseError : DataError {
    using DataError::DataError;
};

// Index outside the addressed structure.
struct RangeError : DataError {
    using DataError::DataError;
};

// Caller violated an operation precondition.
struct PreconditionError : DataError {
    using DataError::DataError;
};

// Network or protocol failure after bounded retries.
struct TransportError : Error {
    using Error::Error;
};

// Rate limit still in force after exponential backoff.
struct RateLimitError : TransportError {
    using TransportError::TransportError;
};

// Prompt does not fit the backend's context budget; callers trim and retry.
struct OverLengthError : Error {
    using Error::Error;
};

// Results are not comparable (different datasets or sampling).
struct ComparisonError : Error {
    using Error::Error;
};

// Filesystem failure.
struct IoError : Error {
    using Error::Error;
};

}  // namespace recmem
