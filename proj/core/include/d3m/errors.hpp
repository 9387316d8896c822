#pragma once

#include <stdexcept>
#include <string>

namespace d3m {

// Error taxonomy mirrors the CLI exit codes: usage/IO problems, statistical
// gate failures, and artifact integrity violations are reported distinctly.

struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

struct InputError : std::invalid_argument {
    explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Hyperparameter or window-size mismatch between pipeline stages.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Artifact fingerprint chain broken (model vs. calibration record).
struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace d3m
