#pragma once

#include <stdexcept>
#include <string>

namespace vsr {

// Base for everything thrown by the library. The CLI maps subclasses to
// process exit codes (config 2, data 3, numeric 4).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or axis disagreement between tensors.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration (geometry, keys, divisibility).
struct ConfigError : Error {
    using Error::Error;
};

// Broken or missing on-disk artifacts: bad CRC, unpaired tiles, empty masks.
struct DataError : Error {
    using Error::Error;
};

// NaN/Inf encountered, divergence, integration failure.
struct NumericError : Error {
    using Error::Error;
};

// Argument outside its documented domain (e.g. t outside [0,1]).
struct RangeError : Error {
    using Error::Error;
};

// API misuse: non-scalar backward, optimizer on frozen parameters.
struct UsageError : Error {
    using Error::Error;
};

inline int exit_code_for(const Error& e) {
    if (dynamic_cast<const DataError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 2;
}

}  // namespace vsr
