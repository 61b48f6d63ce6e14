#pragma once

#include <stdexcept>
#include <string>

namespace near {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An operation needed at least one foreground voxel and found none.
class NoForeground : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared in a named tensor.
class NumericError : public Error {
 public:
  NumericError(const std::string& tensor, const std::string& what)
      : Error("non-finite values in " + tensor + ": " + what), tensor_(tensor) {}
  const std::string& tensor() const noexcept { return tensor_; }

 private:
  std::string tensor_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UnknownCase : public Error {
 public:
  using Error::Error;
};

}  // namespace near
