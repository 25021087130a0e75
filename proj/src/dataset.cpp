// rmdx/dataset.cpp

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

#include "rmdx/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "rmdx/csv.hpp"
#include "rmdx/errors.hpp"
#include "rmdx/rng.hpp"

namespace rmdx {

std::vector<UtteranceRecord> load_manifest(const std::string& path) {
  const CsvTable csv = read_csv(path);
  const std::vector<std::string> expected = {"utterance_id", "participant_id",
                                             "avg_rating",   "audio_path",
                                             "textgrid_path", "tv_path"};
  if (csv.header != expected) {
    throw DataError(path + ": header does not match the manifest schema");
  }
  std::vector<UtteranceRecord> out;
  std::set<std::string> seen;
  int line = 1;
  for (const auto& row : csv.rows) {
    ++line;
    if (row.size() != expected.size()) {
      throw ParseError(path + ": wrong field count", line);
    }
    UtteranceRecord rec;
    rec.utterance_id = row[0];
    rec.participant_id = row[1];
    rec.avg_rating = parse_double_field(row[2], path, line);
    rec.audio_path = row[3];
    rec.textgrid_path = row[4];
    rec.tv_path = row[5];
    if (rec.utterance_id.empty() || rec.participant_id.empty()) {
      throw ParseError(path + ": empty id", line);
    }
    if (rec.avg_rating < 0.0 || rec.avg_rating > 1.0) {
      throw ParseError(path + ": avg_rating outside [0, 1]", line);
    }
    if (!seen.insert(rec.utterance_id).second) {
      throw ParseError(path + ": duplicate utterance_id '" + rec.utterance_id +
                           "'",
                       line);
    }
    out.push_back(std::move(rec));
  }
  if (out.empty()) throw DataError(path + ": empty manifest");
  return out;
}

std::vector<ParticipantProfile> load_participants(const std::string& path) {
  const CsvTable csv = read_csv(path);
  const std::vector<std::string> expected = {"id", "age", "sex",
                                             "formant_ceiling_hz"};
  if (csv.header != expected) {
    throw DataError(path + ": header does not match the participant schema");
  }
  std::vector<ParticipantProfile> out;
  std::set<std::string> seen;
  int line = 1;
  for (const auto& row : csv.rows) {
    ++line;
    if (row.size() != expected.size()) {
      throw ParseError(path + ": wrong field count", line);
    }
    ParticipantProfile p;
    p.id = row[0];
    p.age_years = parse_double_field(row[1], path, line);
    p.sex = row[2];
    p.formant_ceiling_hz = parse_double_field(row[3], path, line);
    p.validate();
    if (!seen.insert(p.id).second) {
      throw ParseError(path + ": duplicate participant '" + p.id + "'", line);
    }
    out.push_back(std::move(p));
  }
  if (out.empty()) throw DataError(path + ": empty participant registry");
  return out;
}

int derive_label(double avg_rating) {
  if (avg_rating < 0.0 || avg_rating > 1.0) {
    throw DataError("derive_label: rating outside [0, 1]");
  }
  return avg_rating >= 0.66 ? 1 : 0;
}

Eigen::MatrixXd window_sequence(const FrameSeries& series) {
  series.validate();
  const std::size_t n = series.frame_count();
  const std::size_t c = series.channel_count();
  if (n == 0) throw DataError("window_sequence: empty series");

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(kWindowFrames, c);
  if (n >= static_cast<std::size_t>(kWindowFrames)) {
    const std::size_t start = (n - kWindowFrames) / 2;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (int t = 0; t < kWindowFrames; ++t) {
        out(t, ch) = series.channels[ch][start + t];
      }
    }
  } else {
    const std::size_t front = (kWindowFrames - n) / 2;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t t = 0; t < n; ++t) {
        out(static_cast<Eigen::Index>(front + t), ch) = series.channels[ch][t];
      }
    }
  }
  return out;
}

std::vector<Fold> lopo_splits(const std::vector<LabeledExample>& corpus,
                              double val_fraction, std::uint64_t seed) {
  if (val_fraction <= 0.0 || val_fraction >= 0.5) {
    throw ConfigError("lopo_splits: val_fraction must be in (0, 0.5)");
  }
  std::set<std::string> participant_set;
  for (const auto& ex : corpus) participant_set.insert(ex.participant_id);
  if (participant_set.size() < 2) {
    throw DataError("lopo_splits: need at least 2 participants");
  }
  const std::vector<std::string> participants(participant_set.begin(),
                                              participant_set.end());

  std::vector<Fold> folds;
  for (std::size_t f = 0; f < participants.size(); ++f) {
    Fold fold;
    fold.test_participant = participants[f];
    std::vector<std::size_t> non_test;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (corpus[i].participant_id == fold.test_participant) {
        fold.test.push_back(i);
      } else {
        non_test.push_back(i);
      }
    }
    // The 1e-9 guard keeps floor() honest when val_fraction * n is an
    // integer up to floating-point rounding (0.15 * 20 = 2.9999...996).
    const std::size_t n_val = static_cast<std::size_t>(
        std::floor(val_fraction * static_cast<double>(non_test.size()) + 1e-9));
    Rng rng(seed + f);
    rng.shuffle(non_test);
    fold.validation.assign(non_test.begin(), non_test.begin() + n_val);
    fold.train.assign(non_test.begin() + n_val, non_test.end());
    std::sort(fold.validation.begin(), fold.validation.end());
    std::sort(fold.train.begin(), fold.train.end());
    folds.push_back(std::move(fold));
  }
  return folds;
}

std::pair<double, double> class_weights(const std::vector<int>& labels) {
  std::size_t n0 = 0, n1 = 0;
  for (const int y : labels) {
    if (y == 0) {
      ++n0;
    } else if (y == 1) {
      ++n1;
    } else {
      throw DataError("class_weights: labels must be 0 or 1");
    }
  }
  if (n0 == 0 || n1 == 0) {
    throw DataError("cannot weight single-class data");
  }
  const double n = static_cast<double>(labels.size());
  return {n / (2.0 * n0), n / (2.0 * n1)};
}

}  // namespace rmdx
