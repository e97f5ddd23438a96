// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ffkit {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input text could not be parsed (bad JSON, wrong field types, bad manifest line).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Structurally invalid data. Carries the individual violations.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "validation failed";
    for (const auto& s : v) {
      out += "\n  ";
      out += s;
    }
    return out;
  }

  std::vector<std::string> violations_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A state transition that is not allowed from the current state.
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// An external model service failed or timed out.
class OracleError : public Error {
 public:
  using Error::Error;
};

}  // namespace ffkit
