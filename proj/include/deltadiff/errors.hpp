#pragma once

#include <stdexcept>
#include <string>

namespace deltadiff {

/// Bad argument: shape mismatch, out-of-range index, invalid config bound.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A call made outside its contract (e.g. reverse_step at t = 1).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Readable file in a format or bit depth we do not handle.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Object in an unusable state, e.g. non-finite weights.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corrupt or truncated checkpoint.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint written for a different network/schedule configuration.
class ConfigMismatchError : public std::runtime_error {
 public:
  ConfigMismatchError(std::string field, const std::string& what)
      : std::runtime_error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace deltadiff
