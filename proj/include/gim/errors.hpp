// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace gim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape_error"; }
};

class ValueError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "value_error"; }
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, std::size_t line, const std::string& what)
      : Error(line == 0 ? key + ": " + what
                        : key + " (line " + std::to_string(line) + "): " + what),
        key_(key),
        line_(line) {}
  const char* kind() const noexcept override { return "config_error"; }
  const std::string& key() const noexcept { return key_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string key_;
  std::size_t line_;
};

/// Base for binary file format failures (GIMD / GIMA / GIMC).
class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format_error"; }
};

class MagicMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
  const char* kind() const noexcept override { return "magic_mismatch"; }
};

class TruncatedFileError : public FormatError {
 public:
  TruncatedFileError(const std::string& what, std::size_t expected, std::size_t actual)
      : FormatError(what + ": expected " + std::to_string(expected) + " bytes, found " +
                    std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}
  const char* kind() const noexcept override { return "truncated"; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

class DimOverflowError : public FormatError {
 public:
  using FormatError::FormatError;
  const char* kind() const noexcept override { return "dim_overflow"; }
};

}  // namespace gim
