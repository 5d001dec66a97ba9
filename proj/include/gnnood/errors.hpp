#pragma once

#include <stdexcept>
#include <string>

namespace gnnood {

// Error taxonomy shared across the library. The CLI maps these to exit codes
// (config -> 2, data/parse -> 3, numerical -> 4).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration values (hyperparameters, generator settings, CLI config).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed input data: bad graph files, out-of-range labels, asymmetric adjacency.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Dimension mismatches between operands.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Contract violations in the evaluation protocol (empty masks, mismatched seed lists).
class ProtocolError : public Error {
public:
    explicit ProtocolError(const std::string& msg) : Error(msg) {}
};

// Numerical failure at runtime: NaN loss, singular covariance.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& msg) : Error(msg) {}
};

// API misuse (e.g. backward on a value from a different tape).
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

} // namespace gnnood
