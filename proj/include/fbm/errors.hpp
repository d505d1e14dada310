#pragma once

#include <stdexcept>
#include <string>

namespace fbm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or feature shapes that do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid model, block, or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or a numerically undefined operation.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed or mismatched binary container.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Unreadable, malformed, or unusable input data.
class DataError : public Error {
public:
    using Error::Error;
};

} // namespace fbm
