#pragma once

#include <stdexcept>
#include <string>

namespace smx {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// process exit codes: ConfigError -> 1, DataError and subclasses -> 2,
// NumericError -> 3.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between tensor operands.
struct DimensionError : DataError {
  using DataError::DataError;
};

// Token id outside the fixed vocabulary.
struct VocabularyError : DataError {
  using DataError::DataError;
};

// A row with norm below the epsilon floor reached l2_normalize.
struct DegenerateEmbeddingError : DataError {
  using DataError::DataError;
};

// Batch constraints violated (duplicate positives, unsatisfiable draw).
struct SamplingError : DataError {
  using DataError::DataError;
};

// Requested dataset cannot be generated from the given config.
struct GenerationError : DataError {
  using DataError::DataError;
};

// Evaluation protocol violated (e.g. ground truth missing from the pool).
struct ProtocolError : DataError {
  using DataError::DataError;
};

// Checkpoint/manifest cannot be read or has the wrong version.
struct FormatError : DataError {
  using DataError::DataError;
};

// Non-finite loss during training.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TransformErrorCode { NoMatch, Ambiguous, CellOccupied, NoOp };

// A transformation spec that cannot be applied to the given scene.
struct TransformError : DataError {
  TransformErrorCode code;
  TransformError(TransformErrorCode c, const std::string& msg)
      : DataError(msg), code(c) {}
};

}  // namespace smx
