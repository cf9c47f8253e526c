#pragma once

#include <stdexcept>
#include <string>

namespace dexplore {

// Caller broke an operation's contract (dimension mismatch, non-finite input).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An operation was invoked in a state it does not accept (e.g. a Jacobian
// requested for a finger that is not touching the object).
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad hand/object/config definitions, detected at construction.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Something failed while running (unstable root, empty reset set, sampler cap).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dexplore
