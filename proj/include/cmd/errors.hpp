#pragma once

#include <stdexcept>

namespace cmd {

/// A user-supplied configuration value is out of range or inconsistent.
class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inputs handed to the solver do not describe the same network.
class ConfigMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A runtime self-check of solver state failed.
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace cmd
