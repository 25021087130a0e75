// rmdx/dataset.hpp

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

#ifndef RMDX_DATASET_HPP_
#define RMDX_DATASET_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rmdx/formant.hpp"
#include "rmdx/series.hpp"

namespace rmdx {

// Number of frames every training example is cropped or padded to
// (2 s at 100 Hz).
inline constexpr int kWindowFrames = 200;

// One corpus manifest row. Paths may be empty when a stage does not need
// them (e.g. tv_path for formant-only runs).
struct UtteranceRecord {
  std::string utterance_id;
  std::string participant_id;
  double avg_rating = 0.0;  // mean listener rating in [0, 1]
  std::string audio_path;
  std::string textgrid_path;
  std::string tv_path;
};

// Fixed-length training example: kWindowFrames x C feature matrix plus the
// binary rhoticity label (1 = fully rhotic, 0 = derhotic).
struct LabeledExample {
  Eigen::MatrixXd features;  // kWindowFrames x channels
  int label = 0;
  std::string participant_id;
  std::string utterance_id;
};

// One leave-one-participant-out fold; members index into the corpus vector
// the fold was built from.
struct Fold {
  std::string test_participant;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Reads the corpus manifest CSV with header
// `utterance_id,participant_id,avg_rating,audio_path,textgrid_path,tv_path`.
// Utterance ids must be unique; ratings must lie in [0, 1].
std::vector<UtteranceRecord> load_manifest(const std::string& path);

// Reads the participant registry CSV with header
// `id,age,sex,formant_ceiling_hz`.
std::vector<ParticipantProfile> load_participants(const std::string& path);

// Binary label from the mean listener rating: 1 when rating >= 0.66.
int derive_label(double avg_rating);

// Fixed-length window: center crop when the series has more than
// kWindowFrames frames, symmetric zero-padding otherwise (odd leftover
// frame of padding goes at the end). Rows are frames, columns channels.
Eigen::MatrixXd window_sequence(const FrameSeries& series);

// Leave-one-participant-out folds over the corpus. Participants are held
// out in sorted-id order; within each fold, floor(val_fraction * n)
// non-test examples are drawn uniformly (seeded with seed + fold index) as
// validation and the rest train.
std::vector<Fold> lopo_splits(const std::vector<LabeledExample>& corpus,
                              double val_fraction, std::uint64_t seed);

// Inverse-frequency class weights w_c = N / (2 * N_c); requires both
// classes present.
std::pair<double, double> class_weights(const std::vector<int>& labels);

}  // namespace rmdx

#endif  // RMDX_DATASET_HPP_
