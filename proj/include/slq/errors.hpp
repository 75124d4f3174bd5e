#pragma once

#include <stdexcept>
#include <string>

namespace slq {

// Failure taxonomy. Each kind maps to a distinct CLI exit code or test
// expectation, so callers can discriminate without string matching.

// Shape/rank disagreement between tensor operands.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller handed in something out of range (bad token id, overlength
// sequence, empty split, ...).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An API precondition was violated (non-scalar loss, non-unit rows, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operation invoked in the wrong lifecycle state (e.g. pretraining a
// frozen backbone).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint corruption: checksum or container structure mismatch.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Evaluation ids overlap with ids the adapter was trained on.
struct ContaminationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Synthetic data generator could not satisfy a request.
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A pooled embedding collapsed to the zero vector.
struct DegenerateEmbeddingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config file could not be parsed or contains unknown keys.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace slq
