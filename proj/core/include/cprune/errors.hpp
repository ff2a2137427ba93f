#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cprune {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor/layer dimension mismatch. The message names the offending shapes
/// (and the layer, when raised from graph execution).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An argument is outside its legal domain (e.g. pruned ratio > 0.5).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite ones are required, or training divergence.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed file content. Carries the byte offset at which parsing failed.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    explicit ParseError(const std::string& msg) : Error(msg), offset(0) {}

    std::size_t offset;
};

/// Experiment configuration violates the schema. Messages name the field.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Dataset-level inconsistency (label range, count mismatch, empty sample).
class DataError : public Error {
public:
    using Error::Error;
};

}  // namespace cprune
