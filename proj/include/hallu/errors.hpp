#pragma once

#include <stdexcept>
#include <string>

namespace hallu {

/// Malformed or out-of-range caller input (dimension mismatch, bad delta, bad config).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A model that cannot be evaluated, e.g. a covariance that is not positive definite.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A construction or verification whose hypotheses do not hold.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A persisted artifact (bundle piece, embedding file) that is absent or unreadable.
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hallu
