#pragma once

#include <stdexcept>
#include <string>

namespace iagn {

/// Invalid shuffle / model / schedule parameters.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor or image shapes that do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API called in a mode that cannot be honoured (e.g. missing labels).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad run configuration or dataset layout. Raised before any compute.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure during a run (non-finite loss, I/O during training, ...).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace iagn
