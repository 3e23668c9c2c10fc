#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace compad {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not compose.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input outside an operation's mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API precondition (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data. `offset` is the byte offset into the binary
// payload the problem was detected at (0 when not applicable).
class ParseError : public Error {
 public:
  enum class Kind { Schema, Magic, Version, PayloadLength, FeatureDim };

  ParseError(Kind kind, std::size_t offset, const std::string& what)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"),
        kind_(kind),
        offset_(offset) {}

  Kind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

}  // namespace compad
