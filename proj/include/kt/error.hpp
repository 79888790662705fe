#pragma once

#include <stdexcept>
#include <string>

namespace kt {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid input or configuration: the caller can fix it and retry.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A CSV header or config key did not match the expected schema.
class SchemaError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Tensor shape incompatibility inside the autodiff engine.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An upstream pipeline artifact is absent.
class MissingArtifactError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

}  // namespace kt
