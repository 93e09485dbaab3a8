#pragma once

#include <stdexcept>
#include <string>

namespace gracelab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates a documented precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Reading or writing an artifact on disk failed.
class IoError : public Error {
public:
    using Error::Error;
};

/// A loss or gradient evaluated to NaN or infinity.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

}  // namespace gracelab
