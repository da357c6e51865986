#pragma once

#include <stdexcept>
#include <string>

namespace tesim {

/// Bad or inconsistent run configuration (unknown keys, missing fields, out-of-range settings).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or physically inconsistent input data (CSV/JSON payloads, measurement sets).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure: non-convergence, instability, degenerate systems.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace tesim
