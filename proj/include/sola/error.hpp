#pragma once

#include <stdexcept>
#include <string>

namespace sola {

// Error taxonomy used across the library. Each maps to one failure class so
// callers (and tests) can match on the kind of violation, not message text.

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParamError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LifecycleError : std::logic_error {
    using std::logic_error::logic_error;
};

struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sola
