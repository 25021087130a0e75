// rmdx/textgrid.cpp

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

#include "rmdx/textgrid.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rmdx/csv.hpp"
#include "rmdx/errors.hpp"

namespace rmdx {

namespace {

constexpr double kTimeTolerance = 1e-6;

// Character-level scanner for the long text format. Quoted strings may
// contain newlines, so the scanner works on the raw document and tracks
// line numbers itself.
class Scanner {
 public:
  explicit Scanner(const std::string& text) : text_(text) {}

  int line() const { return line_; }

  void skip_ws() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '\n') {
        ++line_;
        ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  bool at_end() {
    skip_ws();
    return pos_ >= text_.size();
  }

  // Next run of non-space, non-quote characters, without consuming it.
  std::string peek_word() {
    skip_ws();
    std::size_t p = pos_;
    std::string w;
    while (p < text_.size() && !std::isspace(static_cast<unsigned char>(text_[p])) &&
           text_[p] != '"') {
      w.push_back(text_[p++]);
    }
    return w;
  }

  void expect(const std::string& token) {
    skip_ws();
    if (text_.compare(pos_, token.size(), token) != 0) {
      throw ParseError("expected '" + token + "'", line_);
    }
    pos_ += token.size();
  }

  double number() {
    skip_ws();
    const char* begin = text_.data() + pos_;
    const char* end = text_.data() + text_.size();
    double value = 0.0;
    const auto res = std::from_chars(begin, end, value);
    if (res.ec != std::errc()) {
      throw ParseError("expected a number", line_);
    }
    pos_ += static_cast<std::size_t>(res.ptr - begin);
    return value;
  }

  int integer() {
    const double v = number();
    const int i = static_cast<int>(std::lround(v));
    if (v != static_cast<double>(i)) {
      throw ParseError("expected an integer", line_);
    }
    return i;
  }

  // Double-quoted string; "" escapes a quote, newlines are allowed.
  std::string string() {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != '"') {
      throw ParseError("expected a quoted string", line_);
    }
    ++pos_;
    std::string out;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '"') {
        if (pos_ + 1 < text_.size() && text_[pos_ + 1] == '"') {
          out.push_back('"');
          pos_ += 2;
          continue;
        }
        ++pos_;
        return out;
      }
      if (c == '\n') ++line_;
      out.push_back(c);
      ++pos_;
    }
    throw ParseError("unterminated string", line_);
  }

 private:
  const std::string& text_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

void validate_tier(const IntervalTier& tier, const TextGrid& grid, int line) {
  if (tier.xmin < grid.xmin - kTimeTolerance ||
      tier.xmax > grid.xmax + kTimeTolerance) {
    throw ParseError("tier '" + tier.name + "' exceeds TextGrid bounds", line);
  }
  double cursor = tier.xmin;
  for (const auto& iv : tier.intervals) {
    if (iv.xmax <= iv.xmin) {
      throw ParseError("empty interval in tier '" + tier.name + "'", line);
    }
    if (std::abs(iv.xmin - cursor) > kTimeTolerance) {
      throw ParseError(iv.xmin > cursor
                           ? "gap between intervals in tier '" + tier.name + "'"
                           : "overlapping intervals in tier '" + tier.name +
                                 "'",
                       line);
    }
    cursor = iv.xmax;
  }
  if (!tier.intervals.empty() &&
      std::abs(cursor - tier.xmax) > kTimeTolerance) {
    throw ParseError("intervals do not cover tier '" + tier.name + "'", line);
  }
}

}  // namespace

TextGrid parse_textgrid(const std::string& text) {
  Scanner s(text);
  s.expect("File");
  s.expect("type");
  s.expect("=");
  if (s.string() != "ooTextFile") {
    throw ParseError("File type must be \"ooTextFile\"", s.line());
  }
  s.expect("Object");
  s.expect("class");
  s.expect("=");
  if (s.string() != "TextGrid") {
    throw ParseError("Object class must be \"TextGrid\"", s.line());
  }

  TextGrid grid;
  s.expect("xmin");
  s.expect("=");
  grid.xmin = s.number();
  s.expect("xmax");
  s.expect("=");
  grid.xmax = s.number();
  if (grid.xmax <= grid.xmin) {
    throw ParseError("TextGrid xmax must exceed xmin", s.line());
  }

  s.expect("tiers?");
  const std::string exists = s.peek_word();
  if (exists == "<absent>") {
    s.expect("<absent>");
    return grid;
  }
  s.expect("<exists>");
  s.expect("size");
  s.expect("=");
  const int n_tiers = s.integer();
  if (n_tiers < 0) throw ParseError("negative tier count", s.line());
  s.expect("item");
  s.expect("[");
  s.expect("]");
  s.expect(":");

  for (int i = 1; i <= n_tiers; ++i) {
    s.expect("item");
    s.expect("[");
    if (s.integer() != i) {
      throw ParseError("tier items out of order", s.line());
    }
    s.expect("]");
    s.expect(":");
    s.expect("class");
    s.expect("=");
    const std::string cls = s.string();
    const int tier_line = s.line();

    if (cls == "IntervalTier") {
      IntervalTier tier;
      s.expect("name");
      s.expect("=");
      tier.name = s.string();
      s.expect("xmin");
      s.expect("=");
      tier.xmin = s.number();
      s.expect("xmax");
      s.expect("=");
      tier.xmax = s.number();
      s.expect("intervals:");
      s.expect("size");
      s.expect("=");
      const int n_intervals = s.integer();
      for (int j = 1; j <= n_intervals; ++j) {
        s.expect("intervals");
        s.expect("[");
        if (s.integer() != j) {
          throw ParseError("intervals out of order in tier '" + tier.name +
                               "'",
                           s.line());
        }
        s.expect("]");
        s.expect(":");
        TextGridInterval iv;
        s.expect("xmin");
        s.expect("=");
        iv.xmin = s.number();
        s.expect("xmax");
        s.expect("=");
        iv.xmax = s.number();
        s.expect("text");
        s.expect("=");
        iv.text = s.string();
        tier.intervals.push_back(std::move(iv));
      }
      validate_tier(tier, grid, tier_line);
      grid.tiers.push_back(std::move(tier));
    } else if (cls == "TextTier") {
      s.expect("name");
      s.expect("=");
      const std::string name = s.string();
      s.expect("xmin");
      s.expect("=");
      s.number();
      s.expect("xmax");
      s.expect("=");
      s.number();
      s.expect("points:");
      s.expect("size");
      s.expect("=");
      const int n_points = s.integer();
      for (int j = 1; j <= n_points; ++j) {
        s.expect("points");
        s.expect("[");
        s.integer();
        s.expect("]");
        s.expect(":");
        s.expect("number");
        s.expect("=");
        s.number();
        s.expect("mark");
        s.expect("=");
        s.string();
      }
      grid.warnings.push_back("skipped point tier '" + name + "'");
    } else {
      throw ParseError("unsupported tier class \"" + cls + "\"", s.line());
    }
  }

  if (!s.at_end()) {
    throw ParseError("trailing content after last tier", s.line());
  }
  return grid;
}

TextGrid read_textgrid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_textgrid(buf.str());
  } catch (const ParseError& e) {
    throw DataError(path + ": " + e.what());
  }
}

namespace {

std::string quote(const std::string& raw) {
  std::string out = "\"";
  for (const char c : raw) {
    out.push_back(c);
    if (c == '"') out.push_back('"');
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string serialize_textgrid(const TextGrid& grid) {
  std::ostringstream out;
  out << "File type = \"ooTextFile\"\n"
      << "Object class = \"TextGrid\"\n\n"
      << "xmin = " << format_double(grid.xmin) << "\n"
      << "xmax = " << format_double(grid.xmax) << "\n";
  if (grid.tiers.empty()) {
    out << "tiers? <absent>\n";
    return out.str();
  }
  out << "tiers? <exists>\n"
      << "size = " << grid.tiers.size() << "\n"
      << "item []:\n";
  for (std::size_t i = 0; i < grid.tiers.size(); ++i) {
    const auto& tier = grid.tiers[i];
    out << "    item [" << (i + 1) << "]:\n"
        << "        class = \"IntervalTier\"\n"
        << "        name = " << quote(tier.name) << "\n"
        << "        xmin = " << format_double(tier.xmin) << "\n"
        << "        xmax = " << format_double(tier.xmax) << "\n"
        << "        intervals: size = " << tier.intervals.size() << "\n";
    for (std::size_t j = 0; j < tier.intervals.size(); ++j) {
      const auto& iv = tier.intervals[j];
      out << "        intervals [" << (j + 1) << "]:\n"
          << "            xmin = " << format_double(iv.xmin) << "\n"
          << "            xmax = " << format_double(iv.xmax) << "\n"
          << "            text = " << quote(iv.text) << "\n";
    }
  }
  return out.str();
}

namespace {

bool label_is_empty(const std::string& text) {
  return std::all_of(text.begin(), text.end(), [](unsigned char c) {
    return std::isspace(c);
  });
}

}  // namespace

RhoticInterval extract_rhotic_interval(const TextGrid& grid,
                                       const std::string& tier_name) {
  const IntervalTier* tier = nullptr;
  for (const auto& t : grid.tiers) {
    if (t.name == tier_name) {
      tier = &t;
      break;
    }
  }
  if (tier == nullptr) {
    std::string msg = "tier '" + tier_name + "' not found; available:";
    if (grid.tiers.empty()) msg += " (none)";
    for (const auto& t : grid.tiers) msg += " '" + t.name + "'";
    throw DataError(msg);
  }

  const TextGridInterval* labeled = nullptr;
  int count = 0;
  for (const auto& iv : tier->intervals) {
    if (!label_is_empty(iv.text)) {
      labeled = &iv;
      ++count;
    }
  }
  if (count == 0) {
    throw DataError("tier '" + tier_name + "': no labeled interval");
  }
  if (count > 1) {
    throw DataError("tier '" + tier_name + "': ambiguous annotation (" +
                    std::to_string(count) + " labeled intervals)");
  }
  RhoticInterval out;
  out.start_s = labeled->xmin;
  out.end_s = labeled->xmax;
  out.label = labeled->text;
  return out;
}

BinnedSegment bin_segment(const FrameSeries& series,
                          const RhoticInterval& interval, int n_bins) {
  series.validate();
  if (n_bins < 1) throw ConfigError("bin_segment: n_bins must be >= 1");
  if (interval.end_s <= interval.start_s) {
    throw DataError("bin_segment: empty interval");
  }
  const std::size_t n_frames = series.frame_count();
  const std::size_t n_channels = series.channel_count();
  if (n_frames == 0) throw DataError("bin_segment: empty series");
  const double first = series.frame_time(0);
  const double last = series.frame_time(n_frames - 1);
  if (interval.end_s <= first || interval.start_s > last) {
    throw DataError("bin_segment: interval outside series time range");
  }

  const double length = interval.end_s - interval.start_s;
  std::vector<std::vector<double>> sums(
      static_cast<std::size_t>(n_bins), std::vector<double>(n_channels, 0.0));
  std::vector<int> counts(static_cast<std::size_t>(n_bins), 0);

  for (std::size_t i = 0; i < n_frames; ++i) {
    const double t = series.frame_time(i);
    if (t < interval.start_s || t >= interval.end_s) continue;
    int b = static_cast<int>(
        std::floor((t - interval.start_s) * n_bins / length));
    b = std::clamp(b, 0, n_bins - 1);
    ++counts[static_cast<std::size_t>(b)];
    for (std::size_t c = 0; c < n_channels; ++c) {
      sums[static_cast<std::size_t>(b)][c] += series.channels[c][i];
    }
  }

  if (std::all_of(counts.begin(), counts.end(),
                  [](int c) { return c == 0; })) {
    throw DataError("bin_segment: interval contains no frames");
  }

  BinnedSegment out;
  out.channel_names = series.channel_names;
  out.interval = interval;
  out.bins.assign(static_cast<std::size_t>(n_bins),
                  std::vector<double>(n_channels, 0.0));
  for (int b = 0; b < n_bins; ++b) {
    if (counts[static_cast<std::size_t>(b)] > 0) {
      for (std::size_t c = 0; c < n_channels; ++c) {
        out.bins[static_cast<std::size_t>(b)][c] =
            sums[static_cast<std::size_t>(b)][c] /
            counts[static_cast<std::size_t>(b)];
      }
    }
  }
  // Empty bins copy the nearest filled bin (lower index on ties).
  for (int b = 0; b < n_bins; ++b) {
    if (counts[static_cast<std::size_t>(b)] > 0) continue;
    int best = -1;
    for (int d = 1; d < n_bins && best < 0; ++d) {
      if (b - d >= 0 && counts[static_cast<std::size_t>(b - d)] > 0) {
        best = b - d;
      } else if (b + d < n_bins && counts[static_cast<std::size_t>(b + d)] > 0) {
        best = b + d;
      }
    }
    out.bins[static_cast<std::size_t>(b)] =
        out.bins[static_cast<std::size_t>(best)];
  }
  return out;
}

}  // namespace rmdx
