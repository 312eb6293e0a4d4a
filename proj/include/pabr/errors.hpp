#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pabr {

// Base of all library errors. Subclasses split into two categories that map
// onto CLI exit codes: DataError (malformed inputs, shape mismatches, bad
// files) and NumericError (values the math cannot proceed with).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Operand shapes or embedding layouts do not agree.
class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

// Coordinate or index outside its valid range.
class RangeError : public DataError {
 public:
  using DataError::DataError;
};

// A value-level invariant is broken (non-finite data, bad lengths).
class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

// File does not follow the expected format (magic, version, field values).
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// File is structurally valid but ends or breaks at a known byte offset.
class CorruptionError : public DataError {
 public:
  CorruptionError(const std::string& what, std::uint64_t offset)
      : DataError(what), offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_ = 0;
};

class ConfigError : public DataError {
 public:
  using DataError::DataError;
};

class EmptyInputError : public DataError {
 public:
  using DataError::DataError;
};

class MalformedBatchError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

// Normalization of an identically-zero vector.
class DegenerateEmbeddingError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace pabr
