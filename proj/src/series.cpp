// rmdx/series.cpp

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

#include "rmdx/series.hpp"

#include <cmath>

#include "rmdx/csv.hpp"
#include "rmdx/errors.hpp"

namespace rmdx {

const char* feature_set_name(FeatureSet set) {
  switch (set) {
    case FeatureSet::FORMANTS5: return "FORMANTS5";
    case FeatureSet::TV6: return "TV6";
    case FeatureSet::TV9: return "TV9";
    case FeatureSet::FUSED14: return "FUSED14";
    case FeatureSet::SOURCE3: return "SOURCE3";
  }
  return "?";
}

FeatureSet feature_set_from_name(const std::string& name) {
  if (name == "FORMANTS5") return FeatureSet::FORMANTS5;
  if (name == "TV6") return FeatureSet::TV6;
  if (name == "TV9") return FeatureSet::TV9;
  if (name == "FUSED14") return FeatureSet::FUSED14;
  if (name == "SOURCE3") return FeatureSet::SOURCE3;
  throw ConfigError("unknown feature set '" + name +
                    "' (expected FORMANTS5, TV6, TV9 or FUSED14)");
}

int feature_set_channels(FeatureSet set) {
  switch (set) {
    case FeatureSet::FORMANTS5: return 5;
    case FeatureSet::TV6: return 6;
    case FeatureSet::TV9: return 9;
    case FeatureSet::FUSED14: return 14;
    case FeatureSet::SOURCE3: return 3;
  }
  return 0;
}

std::vector<std::string> feature_set_channel_names(FeatureSet set) {
  const std::vector<std::string> formants = {"zf1", "zf2", "zf3", "zdist",
                                             "zdist_delta"};
  const std::vector<std::string> tvs = {"la", "lp", "ttcl", "ttcd", "tbcl",
                                        "tbcd"};
  const std::vector<std::string> source = {"aperiodicity", "periodicity",
                                           "pitch"};
  switch (set) {
    case FeatureSet::FORMANTS5: return formants;
    case FeatureSet::TV6: return tvs;
    case FeatureSet::SOURCE3: return source;
    case FeatureSet::TV9: {
      auto out = tvs;
      out.insert(out.end(), source.begin(), source.end());
      return out;
    }
    case FeatureSet::FUSED14: {
      auto out = formants;
      auto tv9 = feature_set_channel_names(FeatureSet::TV9);
      out.insert(out.end(), tv9.begin(), tv9.end());
      return out;
    }
  }
  return {};
}

void FrameSeries::validate() const {
  if (channel_names.size() != channels.size()) {
    throw DataError("FrameSeries: name/channel count mismatch");
  }
  for (const auto& c : channels) {
    if (c.size() != frame_count()) {
      throw DataError("FrameSeries: ragged channels");
    }
    for (const double v : c) {
      if (!std::isfinite(v)) throw DataError("FrameSeries: non-finite value");
    }
  }
  const auto expected = feature_set_channel_names(id);
  if (channel_names != expected) {
    throw DataError(std::string("FrameSeries: channel order does not match ") +
                    feature_set_name(id));
  }
}

FrameSeries concat_series(const FrameSeries& a, const FrameSeries& b,
                          FeatureSet id) {
  if (a.frame_count() != b.frame_count()) {
    throw DataError("concat_series: frame counts differ (" +
                    std::to_string(a.frame_count()) + " vs " +
                    std::to_string(b.frame_count()) + ")");
  }
  if (a.frame_rate != b.frame_rate) {
    throw DataError("concat_series: frame rates differ");
  }
  FrameSeries out;
  out.id = id;
  out.frame_rate = a.frame_rate;
  out.start_time_s = a.start_time_s;
  out.channel_names = a.channel_names;
  out.channel_names.insert(out.channel_names.end(), b.channel_names.begin(),
                           b.channel_names.end());
  out.channels = a.channels;
  out.channels.insert(out.channels.end(), b.channels.begin(),
                      b.channels.end());
  out.validate();
  return out;
}

void save_series_csv(const std::string& path, const FrameSeries& series) {
  CsvTable table;
  table.header.push_back("time_s");
  for (const auto& n : series.channel_names) table.header.push_back(n);
  for (std::size_t i = 0; i < series.frame_count(); ++i) {
    std::vector<std::string> row;
    row.push_back(format_double(series.frame_time(i)));
    for (const auto& c : series.channels) row.push_back(format_double(c[i]));
    table.rows.push_back(std::move(row));
  }
  write_csv(path, table);
}

FrameSeries load_series_csv(const std::string& path, FeatureSet expected) {
  const CsvTable table = read_csv(path);
  const auto names = feature_set_channel_names(expected);
  if (table.header.size() != names.size() + 1 || table.header[0] != "time_s") {
    throw DataError(path + ": header does not match " +
                    std::string(feature_set_name(expected)) + " schema");
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (table.header[i + 1] != names[i]) {
      throw DataError(path + ": expected channel '" + names[i] +
                      "', found '" + table.header[i + 1] + "'");
    }
  }
  FrameSeries out;
  out.id = expected;
  out.channel_names = names;
  out.channels.assign(names.size(), {});
  int line = 1;
  for (const auto& row : table.rows) {
    ++line;
    const double t = parse_double_field(row[0], path, line);
    if (out.frame_count() == 0) {
      out.start_time_s = t;
    } else {
      const double expected_t = out.frame_time(out.frame_count());
      if (std::abs(t - expected_t) > 1e-4) {
        throw ParseError(path + ": non-uniform timestamps", line);
      }
    }
    for (std::size_t c = 0; c < names.size(); ++c) {
      out.channels[c].push_back(
          parse_double_field(row[c + 1], path, line));
    }
  }
  return out;
}

}  // namespace rmdx
