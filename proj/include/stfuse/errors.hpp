#pragma once

#include <stdexcept>
#include <string>

namespace stfuse {

// Error categories map onto the CLI exit-code contract:
// usage errors -> 2, data errors -> 3, numerical errors -> 4.

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public NumericalError {
public:
    explicit NotPositiveDefinite(long pivot_index)
        : NumericalError("matrix not positive definite (pivot "
                         + std::to_string(pivot_index) + ")"),
          pivot_index(pivot_index) {}
    long pivot_index;
};

class DimensionMismatch : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace stfuse
