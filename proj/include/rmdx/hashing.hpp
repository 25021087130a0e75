// rmdx/hashing.hpp

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

#ifndef RMDX_HASHING_HPP_
#define RMDX_HASHING_HPP_

#include <string>

namespace rmdx {

// Lowercase hex SHA-256 digest of a byte string.
std::string sha256_hex(const std::string& data);

// Digest of a file's contents, streamed. Throws DataError if the file
// cannot be read.
std::string sha256_file(const std::string& path);

}  // namespace rmdx

#endif  // RMDX_HASHING_HPP_
