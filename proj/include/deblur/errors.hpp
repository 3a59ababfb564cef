#pragma once

#include <stdexcept>
#include <string>

namespace deblur {

// Shape or dimension disagreement between tensors.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

// Invalid configuration value (non-odd kernel, bad radius, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// API misuse (backward on non-scalar, out-of-range index, ...).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error("usage error: " + msg) {}
};

// File or codec failure, with file context where available.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

// Training-time failure (NaN gradients and friends).
struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& msg) : std::runtime_error("train error: " + msg) {}
};

} // namespace deblur
