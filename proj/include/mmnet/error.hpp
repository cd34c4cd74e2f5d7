#pragma once

#include <stdexcept>
#include <string>

namespace mmnet {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map categories to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

/// Checkpoint files: bad magic/version or truncation.
class CheckpointError : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite values in a loss or gradient.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace mmnet
