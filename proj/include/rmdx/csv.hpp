// rmdx/csv.hpp

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

#ifndef RMDX_CSV_HPP_
#define RMDX_CSV_HPP_

#include <optional>
#include <string>
#include <vector>

namespace rmdx {

// Minimal CSV support for the numeric/tabular files this toolkit exchanges.
// Fields containing commas or quotes are written quoted with "" escapes;
// multi-line fields are not supported.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index for a header name; throws DataError if absent.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
CsvTable parse_csv(const std::string& text, const std::string& origin);
void write_csv(const std::string& path, const CsvTable& table);
std::string format_csv(const CsvTable& table);

// Strict numeric field parsing with positional diagnostics.
double parse_double_field(const std::string& field, const std::string& context,
                          int line);
// Empty string for absent optional values.
std::optional<double> parse_optional_double_field(const std::string& field,
                                                  const std::string& context,
                                                  int line);

// Shortest text form that round-trips the double exactly.
std::string format_double(double v);

}  // namespace rmdx

#endif  // RMDX_CSV_HPP_
