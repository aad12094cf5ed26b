#ifndef DRIFT_ERROR_HPP
#define DRIFT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace drift {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// On-disk data does not follow the expected layout (bad magic, truncation, bad CSV).
class FormatError : public Error {
public:
    using Error::Error;
};

/// A value violates a documented invariant (non-finite row, duplicate id, bad range).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// The input is mathematically degenerate for the requested measure.
class DegenerateInput : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace drift

#endif
