// rmdx/textgrid.hpp

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

#ifndef RMDX_TEXTGRID_HPP_
#define RMDX_TEXTGRID_HPP_

#include <string>
#include <vector>

#include "rmdx/series.hpp"

namespace rmdx {

struct TextGridInterval {
  double xmin = 0.0;
  double xmax = 0.0;
  std::string text;
};

struct IntervalTier {
  std::string name;
  double xmin = 0.0;
  double xmax = 0.0;
  std::vector<TextGridInterval> intervals;  // sorted, contiguous
};

// Parsed annotation document. Point tiers present in the input are not
// retained; each one adds a note to `warnings`.
struct TextGrid {
  double xmin = 0.0;
  double xmax = 0.0;
  std::vector<IntervalTier> tiers;
  std::vector<std::string> warnings;
};

// One labeled phone segment.
struct RhoticInterval {
  double start_s = 0.0;
  double end_s = 0.0;
  std::string label;
};

// Fixed-bin time-averaged trajectory over one segment.
struct BinnedSegment {
  std::vector<std::vector<double>> bins;  // n_bins rows x channel columns
  std::vector<std::string> channel_names;
  RhoticInterval interval;
};

// Parses the "long" text TextGrid format (the verbose `item [k]:` layout
// with one `key = value` per line). Labels may span physical lines and use
// "" to escape a double quote. Interval tiers must be sorted, contiguous
// (gap or overlap beyond 1e-6 s rejected) and inside the tier bounds.
// Errors carry 1-based line numbers.
TextGrid parse_textgrid(const std::string& text);

// Reads and parses a TextGrid file.
TextGrid read_textgrid(const std::string& path);

// Emits the long text format; parse_textgrid(serialize_textgrid(g)) equals
// g structurally.
std::string serialize_textgrid(const TextGrid& grid);

// Returns the single interval on `tier_name` whose label is non-empty
// (whitespace-only labels count as empty). Zero or multiple labeled
// intervals are annotation errors.
RhoticInterval extract_rhotic_interval(const TextGrid& grid,
                                       const std::string& tier_name);

// Averages the frames whose center times fall in [start_s, end_s) into
// n_bins equal-duration bins. A frame belongs to bin
// floor((t - start) * n_bins / L). Empty bins copy the nearest non-empty
// bin's mean (lower index wins ties).
BinnedSegment bin_segment(const FrameSeries& series,
                          const RhoticInterval& interval, int n_bins = 10);

}  // namespace rmdx

#endif  // RMDX_TEXTGRID_HPP_
