#pragma once

#include <stdexcept>
#include <string>

namespace convseq {

// Shapes of two operands are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller violated an operation's preconditions.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Span corruption could not place non-overlapping spans.
class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged or an optimizer step saw non-finite values.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace convseq
