#pragma once

#include <stdexcept>
#include <string>

namespace scl {

// Operand shapes incompatible with a primitive.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid configuration values or combinations.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed, truncated or unreadable dataset/checkpoint files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A non-finite value appeared in a loss or gradient computation.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace scl
