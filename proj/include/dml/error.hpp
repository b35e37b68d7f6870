#pragma once

#include <stdexcept>
#include <string>

namespace dml {

/// Shapes or indices that do not fit the objects they are applied to.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid or unsatisfiable configuration (hyperparameters, quotas, sizes).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed text or binary file. The message names the offending line or defect.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corrupt wire frame.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Connection failure or use of a closed endpoint.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dml
