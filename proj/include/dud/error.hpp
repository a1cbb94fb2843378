#pragma once

#include <stdexcept>
#include <string>

namespace dud {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or spec field. The message names the field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its contents are malformed (bad magic, truncated payload, ...).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite activations or losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dud
