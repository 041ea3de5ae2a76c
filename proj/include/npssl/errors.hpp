#pragma once

#include <stdexcept>
#include <string>

namespace npssl {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
struct DimError : Error {
    using Error::Error;
};

/// Covariance is not symmetric positive definite (Cholesky failed),
/// or a variance is non-positive.
struct NotSpdError : Error {
    using Error::Error;
};

/// Non-finite values, out-of-tolerance negatives, or other numeric trouble.
struct NumericError : Error {
    using Error::Error;
};

/// Bad configuration file or override (message names the offending key).
struct ConfigError : Error {
    using Error::Error;
};

/// File I/O and serialization problems (missing file, corrupt checkpoint).
struct IoError : Error {
    using Error::Error;
};

}  // namespace npssl
