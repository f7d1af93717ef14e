#pragma once

#include <stdexcept>
#include <string>

namespace vcppo {

// Invalid configuration values or a config document that fails validation.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller violated an operation's precondition (dimension mismatch, stepping a finished episode, ...).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// A requested combination the implementation does not support (e.g. biased init on an mlp value).
struct UnsupportedConfiguration : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A loss or parameter became non-finite during optimization. `dump` carries the diagnostic state.
struct NumericError : std::runtime_error {
  NumericError(const std::string& what, std::string dump_text)
      : std::runtime_error(what), dump(std::move(dump_text)) {}
  std::string dump;
};

// Enumeration would exceed the configured trajectory cap.
struct CapExceeded : std::runtime_error {
  CapExceeded(const std::string& what, double required_cap)
      : std::runtime_error(what), required(required_cap) {}
  double required;
};

}  // namespace vcppo
