// Copyright 2026 The ctflow Authors
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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ctflow {

// Base of every error raised by the library. The CLI maps subclasses to exit
// codes: ValidationError/ConfigError -> 2, NumericError (and subclasses) -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated an operation precondition (wrong arity, empty batch, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Parameters or inputs do not match a function's declared signature.
class SignatureError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Problem exceeds an exact-solver cap.
class SizeError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Unknown name or malformed configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Experiment spec failed validation. what() lists every offending field.
class ValidationError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// A particle left the finite reals during a flow simulation.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::ptrdiff_t particle, std::ptrdiff_t step, const std::string& what)
      : NumericError(what), particle_(particle), step_(step) {}

  std::ptrdiff_t particle() const { return particle_; }
  std::ptrdiff_t step() const { return step_; }

 private:
  std::ptrdiff_t particle_;
  std::ptrdiff_t step_;
};

}  // namespace ctflow
