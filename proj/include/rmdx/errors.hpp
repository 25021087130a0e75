// rmdx/errors.hpp

// Copyright 2026  The rhotic-mdx Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RMDX_ERRORS_HPP_
#define RMDX_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace rmdx {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or usage (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad or inconsistent input data (CLI exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

// Parse failure with a 1-based line position.
class ParseError : public DataError {
 public:
  ParseError(const std::string& msg, int line)
      : DataError(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace rmdx

#endif  // RMDX_ERRORS_HPP_
