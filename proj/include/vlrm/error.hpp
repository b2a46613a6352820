#pragma once

#include <stdexcept>
#include <string>

namespace vlrm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration: duplicate tokens, unknown keys, invalid ranges.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

// A caller broke an operation's precondition (shapes, lengths, batch sizes).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract error: " + what) {}
};

// Token ids or words that cannot be mapped through the vocabulary.
class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& what) : Error("decode error: " + what) {}
};

// Non-finite losses and other numerical failures during training.
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error("training error: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io error: " + what) {}
};

}  // namespace vlrm
