#pragma once

#include <stdexcept>
#include <string>

namespace masktab {

/// Base of every error raised by the library. The CLI maps subclasses onto
/// process exit codes (numeric errors exit 2, everything else exits 1).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or length mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf inputs or evaluations.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A call or configuration violates a documented precondition.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (CSV, schema, dates).
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// A cell cannot be mapped onto its value encoder.
class EncodingError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for its input (e.g. a single class present).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace masktab
