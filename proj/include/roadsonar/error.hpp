#pragma once

#include <stdexcept>
#include <string>

namespace roadsonar {

/// Invalid argument or violated precondition.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input is well-formed but numerically degenerate (zero variance, constant data).
class DegenerateInputError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// File system or file-format failure. The message names the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace roadsonar
