#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace condensa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not conform for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside the mathematical domain of the operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (ordering, determinism, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class OptimizationError : public Error {
 public:
  OptimizationError(const std::string& what, long step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// Experiment configuration failed validation. `keys` lists the offending entries.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::vector<std::string> keys = {})
      : Error(what), keys_(std::move(keys)) {}
  const std::vector<std::string>& keys() const noexcept { return keys_; }

 private:
  std::vector<std::string> keys_;
};

}  // namespace condensa
