// rmdx/inversion.cpp

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

#include "rmdx/inversion.hpp"

#include <algorithm>
#include <cmath>

#include "rmdx/csv.hpp"
#include "rmdx/errors.hpp"

namespace rmdx {

FrameSeries load_tv_track(const std::string& path) {
  const CsvTable csv = read_csv(path);
  const auto tv6 = feature_set_channel_names(FeatureSet::TV6);
  const auto tv9 = feature_set_channel_names(FeatureSet::TV9);

  std::vector<std::string> expect6 = {"time_s"};
  expect6.insert(expect6.end(), tv6.begin(), tv6.end());
  std::vector<std::string> expect9 = {"time_s"};
  expect9.insert(expect9.end(), tv9.begin(), tv9.end());

  FeatureSet id;
  if (csv.header == expect6) {
    id = FeatureSet::TV6;
  } else if (csv.header == expect9) {
    id = FeatureSet::TV9;
  } else {
    throw DataError(path + ": header does not match the TV track schema");
  }
  if (csv.rows.empty()) throw DataError(path + ": no frames");

  const std::size_t n_channels = csv.header.size() - 1;
  FrameSeries out;
  out.id = id;
  out.channel_names = feature_set_channel_names(id);
  out.channels.assign(n_channels, {});
  for (auto& ch : out.channels) ch.reserve(csv.rows.size());

  double prev_time = 0.0;
  int line = 1;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    ++line;
    const auto& row = csv.rows[r];
    if (row.size() != csv.header.size()) {
      throw ParseError(path + ": wrong field count", line);
    }
    const double t = parse_double_field(row[0], path, line);
    if (r == 0) {
      out.start_time_s = t;
    } else if (std::abs(t - prev_time - 0.010) > 1e-4) {
      throw ParseError(path + ": timestamps not uniform at 10 ms", line);
    }
    prev_time = t;
    for (std::size_t c = 0; c < n_channels; ++c) {
      const double v = parse_double_field(row[c + 1], path, line);
      if (c < 6 && std::abs(v) > 1.0 + 1e-6) {
        throw ParseError(path + ": TV out of range: " + out.channel_names[c] +
                             " = " + format_double(v),
                         line);
      }
      if (c >= 6) {
        // aperiodicity / periodicity in [0, 1], pitch >= 0
        const bool is_pitch = (c == 8);
        if (is_pitch ? v < 0.0 : (v < -1e-6 || v > 1.0 + 1e-6)) {
          throw ParseError(path + ": source feature out of range: " +
                               out.channel_names[c] + " = " + format_double(v),
                           line);
        }
      }
      out.channels[c].push_back(v);
    }
  }
  out.validate();
  return out;
}

FrameSeries znorm_utterance(const FrameSeries& series) {
  series.validate();
  const std::size_t n = series.frame_count();
  if (n < 2) throw DataError("znorm_utterance: need at least 2 frames");

  FrameSeries out = series;
  for (auto& ch : out.channels) {
    double mean = 0.0;
    for (const double v : ch) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const double v : ch) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    if (sd < 1e-8) {
      std::fill(ch.begin(), ch.end(), 0.0);
    } else {
      for (double& v : ch) v = (v - mean) / sd;
    }
  }
  return out;
}

FrameSeries estimate_source_features(const AudioBuffer& buf,
                                     const SourceConfig& config) {
  if (buf.samples.empty()) {
    throw DataError("estimate_source_features: empty buffer");
  }
  const int fs = buf.sample_rate;
  const int w = static_cast<int>(std::lround(config.window_s * fs));
  const int h = static_cast<int>(std::lround(config.hop_s * fs));
  if (static_cast<int>(buf.samples.size()) < w) {
    throw DataError("estimate_source_features: signal shorter than one window");
  }
  const int lag_min = std::max(
      1, static_cast<int>(std::ceil(fs / config.max_pitch_hz)));
  const int lag_max = std::min(
      w - 1, static_cast<int>(std::floor(fs / config.min_pitch_hz)));
  if (lag_min > lag_max) {
    throw ConfigError("estimate_source_features: empty pitch lag band");
  }

  const int n_frames =
      (static_cast<int>(buf.samples.size()) - w) / h + 1;
  FrameSeries out;
  out.id = FeatureSet::SOURCE3;
  out.channel_names = feature_set_channel_names(FeatureSet::SOURCE3);
  out.frame_rate = 1.0 / config.hop_s;
  out.start_time_s = 0.0;
  out.channels.assign(3, std::vector<double>(
                             static_cast<std::size_t>(n_frames), 0.0));

  for (int k = 0; k < n_frames; ++k) {
    const double* x = buf.samples.data() + static_cast<std::size_t>(k) * h;
    double r0 = 0.0;
    for (int i = 0; i < w; ++i) r0 += x[i] * x[i];
    double peak = 0.0;
    int peak_lag = 0;
    if (r0 > 0.0) {
      for (int lag = lag_min; lag <= lag_max; ++lag) {
        double r = 0.0;
        for (int i = lag; i < w; ++i) r += x[i] * x[i - lag];
        r /= r0;
        if (r > peak) {
          peak = r;
          peak_lag = lag;
        }
      }
    }
    const double periodicity = std::clamp(peak, 0.0, 1.0);
    out.channels[0][static_cast<std::size_t>(k)] = 1.0 - periodicity;
    out.channels[1][static_cast<std::size_t>(k)] = periodicity;
    out.channels[2][static_cast<std::size_t>(k)] =
        (periodicity > config.voicing_threshold && peak_lag > 0)
            ? static_cast<double>(fs) / peak_lag
            : 0.0;
  }
  return out;
}

FrameSeries pseudo_invert(const FrameSeries& formants) {
  formants.validate();
  if (formants.id != FeatureSet::FORMANTS5 || formants.channel_count() != 5) {
    throw DataError("pseudo_invert: expected a 5-channel formant series");
  }
  const std::size_t n = formants.frame_count();
  const auto& zf1 = formants.channels[0];
  const auto& zf2 = formants.channels[1];
  const auto& zf3 = formants.channels[2];
  const auto& zdist = formants.channels[3];

  FrameSeries out;
  out.id = FeatureSet::TV6;
  out.channel_names = feature_set_channel_names(FeatureSet::TV6);
  out.frame_rate = formants.frame_rate;
  out.start_time_s = formants.start_time_s;
  out.channels.assign(6, std::vector<double>(n, 0.0));
  auto clamp1 = [](double v) { return std::clamp(v, -1.0, 1.0); };
  for (std::size_t t = 0; t < n; ++t) {
    out.channels[0][t] = clamp1(0.1 * zf1[t]);    // la
    out.channels[1][t] = clamp1(-0.1 * zf1[t]);   // lp
    out.channels[2][t] = clamp1(0.2 * zdist[t]);  // ttcl
    out.channels[3][t] = clamp1(-0.2 * zf3[t]);   // ttcd
    out.channels[4][t] = clamp1(-0.4 * zf2[t]);   // tbcl
    out.channels[5][t] = clamp1(0.3 * zf3[t]);    // tbcd
  }
  return out;
}

}  // namespace rmdx
