#pragma once

#include <stdexcept>
#include <string>

namespace grounder {

// Base class for everything the engine and the pipeline may throw.
struct EngineError : std::runtime_error {
  explicit EngineError(const std::string& what) : std::runtime_error(what) {}
};

// Operand shapes incompatible with the operation's contract.
struct ShapeError : EngineError {
  explicit ShapeError(const std::string& what) : EngineError(what) {}
};

// An operation produced a NaN or Inf element.
struct NumericError : EngineError {
  explicit NumericError(const std::string& what) : EngineError(what) {}
};

// Input outside the mathematical domain (log of non-positive, bad token id).
struct DomainError : EngineError {
  explicit DomainError(const std::string& what) : EngineError(what) {}
};

// API contract violated (non-scalar backward, negative loss weight, ...).
struct ContractError : EngineError {
  explicit ContractError(const std::string& what) : EngineError(what) {}
};

// softmax row with every entry masked.
struct DegenerateMaskError : EngineError {
  explicit DegenerateMaskError(const std::string& what) : EngineError(what) {}
};

// Synthetic scene constraints unsatisfiable after bounded retries.
struct GenerationError : EngineError {
  explicit GenerationError(const std::string& what) : EngineError(what) {}
};

// Corrupt, truncated or incompatible serialized file.
struct IntegrityError : EngineError {
  explicit IntegrityError(const std::string& what) : EngineError(what) {}
};

// Bad run configuration (unknown key, unparsable value).
struct ConfigError : EngineError {
  explicit ConfigError(const std::string& what) : EngineError(what) {}
};

}  // namespace grounder
