#pragma once

#include <stdexcept>
#include <string>

namespace pvdse {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A physical parameter violates its validity constraints (e.g. non-positive inductance).
class InvalidParameterError : public Error {
public:
    explicit InvalidParameterError(const std::string& what) : Error(what) {}
};

/// An input or argument is outside its admissible range.
class InvalidInputError : public Error {
public:
    explicit InvalidInputError(const std::string& what) : Error(what) {}
};

/// A rational term was evaluated with its denominator at or below the configured floor.
class SingularityError : public Error {
public:
    explicit SingularityError(const std::string& what) : Error(what) {}
};

/// Matrix factorization failed (non-PSD covariance after maximum jitter, singular innovation, ...).
class FactorizationError : public Error {
public:
    explicit FactorizationError(const std::string& what) : Error(what) {}
};

/// Sparse regression could not produce a usable model (rank-deficient data, non-finite values).
class IdentificationError : public Error {
public:
    explicit IdentificationError(const std::string& what) : Error(what) {}
};

}  // namespace pvdse
