// rmdx/inversion.hpp

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

#ifndef RMDX_INVERSION_HPP_
#define RMDX_INVERSION_HPP_

#include <string>

#include "rmdx/audio.hpp"
#include "rmdx/series.hpp"

namespace rmdx {

// Configuration for the autocorrelation-based glottal-activity estimator.
struct SourceConfig {
  double window_s = 0.040;
  double hop_s = 0.010;
  double min_pitch_hz = 60.0;
  double max_pitch_hz = 400.0;
  double voicing_threshold = 0.4;
};

// Loads a tract-variable track from CSV. Header must be
// `time_s,la,lp,ttcl,ttcd,tbcl,tbcd` optionally followed by
// `,aperiodicity,periodicity,pitch`; rows must advance at 10 ms
// (tolerance 1e-4 s). Raw TV values outside [-1, 1] (tolerance 1e-6) are
// rejected.
FrameSeries load_tv_track(const std::string& path);

// Per-channel z-normalization over the whole utterance using the
// population SD (divide by N). Channels with SD below 1e-8 become all
// zeros. Requires at least 2 frames.
FrameSeries znorm_utterance(const FrameSeries& series);

// Frame-wise periodicity / aperiodicity / pitch from the normalized
// autocorrelation peak in the configured lag band. Pitch is fs/lag when the
// peak exceeds the voicing threshold, else 0.
FrameSeries estimate_source_features(const AudioBuffer& buf,
                                     const SourceConfig& config = {});

// Deterministic affine stand-in mapping a 5-channel normalized formant
// series to a 6-channel TV series: tbcl = -0.4*zF2, tbcd = 0.3*zF3,
// ttcl = 0.2*z(F3-F2), ttcd = -0.2*zF3, la = 0.1*zF1, lp = -0.1*zF1, each
// clamped to [-1, 1]. Lets end-to-end tests run without an external
// articulatory model.
FrameSeries pseudo_invert(const FrameSeries& formants);

}  // namespace rmdx

#endif  // RMDX_INVERSION_HPP_
