#pragma once

#include <stdexcept>
#include <string>

namespace mmreg {

/// Invalid argument values, dimension mismatches and violated preconditions.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (bad files, missing labels, NaN losses).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File system failures: unreadable or unwritable paths.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mmreg
