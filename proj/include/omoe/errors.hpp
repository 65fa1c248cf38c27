// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace omoe {

// Shape disagreement between operands (message names both shapes).
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// A precondition of an operation was violated by the caller.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run configuration; message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File format / filesystem failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training aborted because the loss went NaN; carries diagnostics.
class NanAbort : public std::runtime_error {
 public:
  explicit NanAbort(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace omoe
