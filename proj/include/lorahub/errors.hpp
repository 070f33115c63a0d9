// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lorahub {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension/shape violations (matmul, axpy, model wiring).
struct ShapeError : Error {
  using Error::Error;
};

// Length mismatches: weight vector vs module count, tell() arity, usefulness inputs.
struct ArityError : Error {
  using Error::Error;
};

// Modules that cannot be composed or applied to a model (rank/layer/shape conflicts).
struct IncompatibleModulesError : Error {
  using Error::Error;
};

// Unknown layer name, unknown task id, and similar failed lookups.
struct LookupError : Error {
  using Error::Error;
};

// Class label outside the logit range.
struct LabelError : Error {
  using Error::Error;
};

// Empty or unusable input data.
struct DataError : Error {
  using Error::Error;
};

// ask() called once the evaluation budget is spent.
struct BudgetExhaustedError : Error {
  using Error::Error;
};

// ask/tell called out of protocol order.
struct ProtocolError : Error {
  using Error::Error;
};

// Registry I/O failure.
struct StorageError : Error {
  using Error::Error;
};

// Saving under a name that already exists.
struct ConflictError : Error {
  using Error::Error;
};

// Name not present in the registry index.
struct NotFoundError : Error {
  using Error::Error;
};

// Stored bytes do not match their checksum or are truncated.
struct CorruptionError : Error {
  using Error::Error;
};

// Structurally invalid file contents (parsable but inconsistent).
struct FormatError : Error {
  using Error::Error;
};

// Operations that need at least one registered module.
struct EmptyRegistryError : Error {
  using Error::Error;
};

// Invalid task specification.
struct SpecError : Error {
  using Error::Error;
};

}  // namespace lorahub
