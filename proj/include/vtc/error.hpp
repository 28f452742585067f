#pragma once

#include <stdexcept>
#include <string>

namespace vtc {

// Errors split into two families because the CLI maps them to distinct exit
// codes: configuration/shape problems exit 2, bad inputs/files exit 3.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class InputError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class FormatError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace vtc
