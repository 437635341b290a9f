#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace slidekit {

// Error taxonomy maps onto CLI exit codes: ConfigError -> 2,
// InputError (and subclasses) -> 3, NumericError -> 4.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

class BoundsError : public InputError {
public:
    explicit BoundsError(const std::string& msg) : InputError(msg) {}
};

class ShapeError : public InputError {
public:
    explicit ShapeError(const std::string& msg) : InputError(msg) {}
};

class IoError : public InputError {
public:
    explicit IoError(const std::string& msg) : InputError(msg) {}
};

// Non-finite values detected anywhere in the numeric pipeline.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Fraction of predictions equal to labels.
double plain_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Mean of per-class recalls over classes present in the labels.
double balanced_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

}  // namespace slidekit
