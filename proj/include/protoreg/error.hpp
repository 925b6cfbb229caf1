#pragma once

#include <stdexcept>
#include <string>

namespace protoreg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File missing, unreadable, unwritable or malformed.
class IoError : public Error {
public:
    using Error::Error;
};

/// Arrays whose shapes disagree with each other or with a configured grid.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid parameters, configuration or dataset layout.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace protoreg
