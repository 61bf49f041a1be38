#pragma once

#include <stdexcept>
#include <string>

namespace flowdro {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: shape mismatch, invalid configuration, violated precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: non-finite values, divergence, non-convergence.
class NumericalError : public Error {
public:
    using Error::Error;
};

namespace detail {

[[noreturn]] inline void throw_validation(const std::string& what) { throw ValidationError(what); }
[[noreturn]] inline void throw_numerical(const std::string& what) { throw NumericalError(what); }

}  // namespace detail

#define FLOWDRO_REQUIRE(cond, msg)                                \
    do {                                                          \
        if (!(cond)) ::flowdro::detail::throw_validation(msg);    \
    } while (0)

}  // namespace flowdro
