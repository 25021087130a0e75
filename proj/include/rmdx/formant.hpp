// rmdx/formant.hpp

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

#ifndef RMDX_FORMANT_HPP_
#define RMDX_FORMANT_HPP_

#include <optional>
#include <string>
#include <vector>

#include "rmdx/audio.hpp"
#include "rmdx/series.hpp"

namespace rmdx {

// Speaker metadata driving per-participant analysis settings.
struct ParticipantProfile {
  std::string id;
  double age_years = 0.0;
  std::string sex;  // "female" or "male"
  double formant_ceiling_hz = 0.0;

  void validate() const;
};

// One analysis frame; formants absent when fewer than three candidates
// survived filtering.
struct FormantFrame {
  std::optional<double> f1, f2, f3;      // Hz
  std::optional<double> b1, b2, b3;      // bandwidth Hz
  double time_s = 0.0;

  bool present() const { return f1 && f2 && f3; }
};

struct FormantTrack {
  std::vector<FormantFrame> frames;  // uniform 10 ms spacing
  std::string participant_id;
};

// F3-F2 distance and its frame-to-frame delta.
struct TransformTrack {
  std::vector<std::optional<double>> f3_minus_f2;
  std::vector<std::optional<double>> delta_f3_minus_f2;
};

// Per-(age, sex) formant means and SDs, loaded from CSV with header
// `age,sex,f1_mean,f1_sd,f2_mean,f2_sd,f3_mean,f3_sd`.
struct NormRow {
  int age_years = 0;
  std::string sex;
  double mean[3] = {0, 0, 0};
  double sd[3] = {0, 0, 0};
};

struct NormTable {
  std::vector<NormRow> rows;

  // Nearest-age row of the matching sex; rejects matches further than
  // two years.
  const NormRow& match(double age_years, const std::string& sex) const;
};

NormTable load_norm_table(const std::string& path);

// Candidate resonance from one LPC polynomial.
struct FormantCandidate {
  double frequency_hz = 0.0;
  double bandwidth_hz = 0.0;
};

// Tracker knobs. The defaults mirror a conventional 5-formant analysis:
// order-10 LPC, candidates kept within [90 Hz, ceiling - 50 Hz] and under
// 700 Hz bandwidth, interior gaps of up to 3 frames interpolated.
struct TrackerConfig {
  double preemphasis_hz = 50.0;
  double window_s = 0.025;
  double hop_s = 0.010;
  int lpc_order = 10;
  double min_freq_hz = 90.0;
  double ceiling_margin_hz = 50.0;
  double max_bandwidth_hz = 700.0;
  int max_gap_frames = 3;
};

// Burg-recursion linear prediction. Returns predictor coefficients a[0..p-1]
// such that x_hat[n] = sum_k a[k] * x[n-1-k]; the implied all-pole filter is
// minimum-phase by construction.
std::vector<double> lpc_burg(const std::vector<double>& frame, int order);

// Roots of the prediction polynomial converted to (frequency, bandwidth)
// pairs, ascending in frequency. Each conjugate pole pair r*e^{i*theta} with
// theta in (0, pi) maps to frequency theta*fs/(2*pi) and bandwidth
// -(fs/pi)*ln r.
std::vector<FormantCandidate> lpc_to_formants(const std::vector<double>& coeffs,
                                              int sample_rate,
                                              int max_formants);

// Full tracker: resamples to twice the participant's formant ceiling,
// pre-emphasizes, frames at 25 ms / 10 ms, runs Burg LPC per frame and keeps
// the lowest three surviving candidates as F1-F3.
FormantTrack track_formants(const AudioBuffer& buf,
                            const ParticipantProfile& profile,
                            const TrackerConfig& config = {});

// F3-F2 distance and central-difference delta (edge replication); absent
// inputs propagate absent.
TransformTrack formant_transforms(const FormantTrack& track);

// Age-and-sex z-scoring of [F1, F2, F3, F3-F2, delta(F3-F2)] against the
// matched NormRow. The distance row derives from the same row
// (mean = m3 - m2, sd = sqrt(sd3^2 + sd2^2)); the delta channel is the
// central difference of the normalized distance. Absent frames are
// zero-filled after normalization.
FrameSeries normalize_formants(const FormantTrack& track,
                               const TransformTrack& transforms,
                               const NormTable& norms,
                               const ParticipantProfile& profile);

// CSV export `time_s,f1,f2,f3,f3_minus_f2,delta_f3_minus_f2`; absent values
// become empty fields.
void save_formant_track_csv(const std::string& path, const FormantTrack& track,
                            const TransformTrack& transforms);

}  // namespace rmdx

#endif  // RMDX_FORMANT_HPP_
