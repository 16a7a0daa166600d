#pragma once

#include <stdexcept>
#include <string>

namespace standgp {

/// Base class of all library errors. The CLI maps the subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Cholesky factorization of a covariance matrix failed.
class SingularCovariance : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input data (exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite posterior, failed initialization, overflow (exit code 4).
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace standgp
