/*
 * Copyright 2026 The muli Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace muli {

/// Base class for all muli errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input file or record (carries the offending location in the message).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Semantically invalid data: duplicate ids, dimension mismatches, single-class sets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures and corrupted binary artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Inference backend unreachable or speaking an unexpected protocol.
class BackendError : public Error {
 public:
  using Error::Error;
};

}  // namespace muli
