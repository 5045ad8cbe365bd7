#pragma once

#include <stdexcept>
#include <string>

namespace hgnn {

/// Bad input: malformed config, shape mismatch, broken contract. CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ContractError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Config document does not satisfy the schema; the message carries the JSON path.
class SchemaError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Dataset content rejected while loading; the message names the village.
class LoadError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Failure while doing valid work: I/O, corrupted files, divergence. CLI exit code 2.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

/// Binary file with a wrong magic or truncated payload.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

class DivergenceError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

} // namespace hgnn
