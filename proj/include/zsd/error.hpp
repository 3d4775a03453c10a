// Copyright 2026 The zsdecode Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace zsd {

// Bad or unknown configuration. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable, corrupt or inconsistent data on disk. CLI exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A manifest or checkpoint field failed validation.
struct ValidationError : DataError {
  ValidationError(std::string field, const std::string& what)
      : DataError("validation failed for '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// A held-out subject reached a place it must never be.
struct ProtocolError : DataError {
  using DataError::DataError;
};

// Training stopped (non-finite loss term). CLI exit code 4.
struct TrainingAbort : std::runtime_error {
  TrainingAbort(std::string term, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

// Tensor shapes or argument values that violate an operation's contract.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace zsd
