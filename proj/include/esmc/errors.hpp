#pragma once

#include <stdexcept>
#include <string>

namespace esmc {

/// Caller violated a precondition (bad dimension, non-positive scale, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A target was evaluated outside its domain or returned a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Evaluation at a point excluded from a target's domain (e.g. a singularity).
class DomainError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

/// Failure inside a proposal integrator.
class IntegratorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Crossing with v.n == 0 or a vanishing normal; the jump relations are singular.
class TransversalityError : public IntegratorError {
 public:
  using IntegratorError::IntegratorError;
};

class RootNotConvergedError : public IntegratorError {
 public:
  using IntegratorError::IntegratorError;
};

class RunawayTrajectoryError : public IntegratorError {
 public:
  using IntegratorError::IntegratorError;
};

}  // namespace esmc
