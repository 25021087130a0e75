// rmdx/series.hpp

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

#ifndef RMDX_SERIES_HPP_
#define RMDX_SERIES_HPP_

#include <string>
#include <vector>

namespace rmdx {

// Feature-set identifiers. The first four are the trainable sets; SOURCE3
// is the intermediate glottal-activity block that TV9 appends to TV6.
enum class FeatureSet { FORMANTS5, TV6, TV9, FUSED14, SOURCE3 };

const char* feature_set_name(FeatureSet set);
FeatureSet feature_set_from_name(const std::string& name);
int feature_set_channels(FeatureSet set);

// Fixed channel order for each set.
std::vector<std::string> feature_set_channel_names(FeatureSet set);

// Multi-channel series at a fixed frame rate (100 Hz throughout this
// toolkit). Channel-major storage; all channels have equal length. Frame i
// sits at time start_time_s + i / frame_rate.
struct FrameSeries {
  FeatureSet id = FeatureSet::TV6;
  double frame_rate = 100.0;
  double start_time_s = 0.0;
  std::vector<std::string> channel_names;
  std::vector<std::vector<double>> channels;

  std::size_t frame_count() const {
    return channels.empty() ? 0 : channels.front().size();
  }
  std::size_t channel_count() const { return channels.size(); }
  double frame_time(std::size_t i) const {
    return start_time_s + static_cast<double>(i) / frame_rate;
  }
  // Throws DataError when channel lengths disagree or names don't line up.
  void validate() const;
};

// Concatenates the channels of two series of equal length and rate.
FrameSeries concat_series(const FrameSeries& a, const FrameSeries& b,
                          FeatureSet id);

// CSV exchange format: header `time_s,<channels...>`, one row per frame.
void save_series_csv(const std::string& path, const FrameSeries& series);
FrameSeries load_series_csv(const std::string& path, FeatureSet expected);

}  // namespace rmdx

#endif  // RMDX_SERIES_HPP_
