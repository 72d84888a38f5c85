#pragma once

#include <stdexcept>
#include <string>

namespace biasaudit {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input file (bad CSV header, bad JSON, unknown enum string).
struct FormatError : Error {
    using Error::Error;
};

/// Input parses but violates an invariant (duplicate paths, bad label).
struct ValidationError : Error {
    using Error::Error;
};

/// A sampling query asked for more entries than exist.
struct InsufficientDataError : Error {
    InsufficientDataError(const std::string& msg, std::size_t available)
        : Error(msg), available(available) {}
    std::size_t available;
};

/// Dimension mismatch between tensors, images or masks.
struct ShapeError : Error {
    using Error::Error;
};

/// Non-finite values, failed bracketing, diverged training.
struct NumericError : Error {
    using Error::Error;
};

/// Out-of-domain scalar parameter (gamma <= 0, bad probability).
struct ParamError : Error {
    using Error::Error;
};

/// Unreadable or corrupt image file.
struct DecodeError : Error {
    using Error::Error;
};

/// Filesystem failure while writing an artifact.
struct IoError : Error {
    using Error::Error;
};

} // namespace biasaudit
