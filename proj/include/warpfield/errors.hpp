#pragma once

#include <stdexcept>
#include <string>

namespace warpfield {

/// Invalid arguments, mismatched dimensions, bad configuration values.
class config_error : public std::invalid_argument {
public:
    explicit config_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Unreadable or malformed files, missing datasets, schema violations.
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failures: ill-posed systems, diverging optimizations.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace warpfield
