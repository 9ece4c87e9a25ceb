// Copyright 2026 The qdistill Authors. All Rights Reserved.
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

namespace qdistill {

// All library failures derive from Error so callers (the CLI in particular)
// can map them to exit codes with a single catch.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A primitive produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed user data: token ids past the vocabulary, duplicate ids, ...
class InputError : public Error {
 public:
  using Error::Error;
};

// Index outside a valid range, e.g. a layer index past the teacher depth.
class RangeError : public Error {
 public:
  using Error::Error;
};

// On-disk data does not follow its documented format.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace qdistill
