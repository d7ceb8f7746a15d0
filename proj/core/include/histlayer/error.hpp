#pragma once

#include <stdexcept>
#include <string>

namespace histlayer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or channel counts that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (non-positive learning rate, bad bin count, ...).
class ArgumentError : public Error {
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

/// A binary file that was read but could not be decoded.
class FormatError : public IoError {
 public:
  enum class Kind { kBadMagic, kTruncated, kVersionMismatch, kCorrupt };

  FormatError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace histlayer
