// rmdx/formant.cpp

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

#include "rmdx/formant.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

#include "rmdx/csv.hpp"
#include "rmdx/errors.hpp"

namespace rmdx {

void ParticipantProfile::validate() const {
  if (id.empty()) throw DataError("participant: empty id");
  if (age_years <= 0.0) {
    throw DataError("participant '" + id + "': age must be positive");
  }
  if (sex != "female" && sex != "male") {
    throw DataError("participant '" + id + "': sex must be female or male");
  }
  if (formant_ceiling_hz < 3000.0 || formant_ceiling_hz > 8000.0) {
    throw DataError("participant '" + id +
                    "': formant ceiling outside [3000, 8000] Hz");
  }
}

std::vector<double> lpc_burg(const std::vector<double>& frame, int order) {
  const int n = static_cast<int>(frame.size());
  if (order < 2) throw ConfigError("lpc_burg: order must be >= 2");
  if (n <= order) {
    throw DataError("lpc_burg: frame length " + std::to_string(n) +
                    " must exceed order " + std::to_string(order));
  }
  double energy = 0.0;
  for (const double v : frame) energy += v * v;
  if (energy == 0.0) throw DataError("lpc_burg: degenerate frame (all zero)");

  // Error-filter coefficients A(z) = 1 + a[1] z^-1 + ... + a[p] z^-p.
  std::vector<double> a(static_cast<std::size_t>(order) + 1, 0.0);
  a[0] = 1.0;
  std::vector<double> f(frame), b(frame);
  std::vector<double> tmp(a.size());

  for (int m = 0; m < order; ++m) {
    double num = 0.0, den = 0.0;
    for (int i = m + 1; i < n; ++i) {
      num += f[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i - 1)];
      den += f[static_cast<std::size_t>(i)] * f[static_cast<std::size_t>(i)] +
             b[static_cast<std::size_t>(i - 1)] * b[static_cast<std::size_t>(i - 1)];
    }
    const double k = (den > 0.0) ? -2.0 * num / den : 0.0;

    for (int i = 0; i <= m + 1; ++i) {
      tmp[static_cast<std::size_t>(i)] =
          a[static_cast<std::size_t>(i)] +
          k * a[static_cast<std::size_t>(m + 1 - i)];
    }
    std::copy(tmp.begin(), tmp.begin() + m + 2, a.begin());

    for (int i = n - 1; i > m; --i) {
      const double fi = f[static_cast<std::size_t>(i)];
      const double bi = b[static_cast<std::size_t>(i - 1)];
      f[static_cast<std::size_t>(i)] = fi + k * bi;
      b[static_cast<std::size_t>(i)] = bi + k * fi;
    }
  }

  // Predictor convention: x_hat[n] = sum_k coeff[k] * x[n-1-k].
  std::vector<double> coeffs(static_cast<std::size_t>(order));
  for (int i = 0; i < order; ++i) {
    coeffs[static_cast<std::size_t>(i)] = -a[static_cast<std::size_t>(i) + 1];
  }
  return coeffs;
}

std::vector<FormantCandidate> lpc_to_formants(const std::vector<double>& coeffs,
                                              int sample_rate,
                                              int max_formants) {
  const int p = static_cast<int>(coeffs.size());
  if (p < 1) throw ConfigError("lpc_to_formants: empty coefficient vector");
  if (sample_rate <= 0) throw ConfigError("lpc_to_formants: bad sample rate");

  // Companion matrix of z^p - c[0] z^{p-1} - ... - c[p-1].
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < p; ++i) companion(0, i) = coeffs[static_cast<std::size_t>(i)];
  for (int i = 1; i < p; ++i) companion(i, i - 1) = 1.0;

  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  if (solver.info() != Eigen::Success) {
    throw Error("lpc_to_formants: root finder failed to converge");
  }

  std::vector<FormantCandidate> out;
  const auto roots = solver.eigenvalues();
  for (int i = 0; i < roots.size(); ++i) {
    const std::complex<double> r = roots(i);
    if (r.imag() <= 0.0) continue;  // keep one of each conjugate pair
    const double radius = std::abs(r);
    if (radius <= 0.0) continue;
    const double theta = std::arg(r);
    if (theta <= 0.0 || theta >= M_PI) continue;
    FormantCandidate c;
    c.frequency_hz = theta * sample_rate / (2.0 * M_PI);
    c.bandwidth_hz = -(sample_rate / M_PI) * std::log(radius);
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(),
            [](const FormantCandidate& a, const FormantCandidate& b) {
              return a.frequency_hz < b.frequency_hz;
            });
  if (max_formants > 0 && static_cast<int>(out.size()) > max_formants) {
    out.resize(static_cast<std::size_t>(max_formants));
  }
  return out;
}

namespace {

void interpolate_gaps(FormantTrack& track, int max_gap) {
  auto& fr = track.frames;
  const std::size_t n = fr.size();
  std::size_t i = 0;
  while (i < n) {
    if (fr[i].present()) { ++i; continue; }
    std::size_t j = i;
    while (j < n && !fr[j].present()) ++j;
    // gap [i, j); interior only, bounded length
    if (i > 0 && j < n && static_cast<int>(j - i) <= max_gap) {
      const FormantFrame& lo = fr[i - 1];
      const FormantFrame& hi = fr[j];
      const double span = static_cast<double>(j - (i - 1));
      for (std::size_t k = i; k < j; ++k) {
        const double t = static_cast<double>(k - (i - 1)) / span;
        auto lerp = [t](double a, double b) { return a + t * (b - a); };
        fr[k].f1 = lerp(*lo.f1, *hi.f1);
        fr[k].f2 = lerp(*lo.f2, *hi.f2);
        fr[k].f3 = lerp(*lo.f3, *hi.f3);
        fr[k].b1 = lerp(*lo.b1, *hi.b1);
        fr[k].b2 = lerp(*lo.b2, *hi.b2);
        fr[k].b3 = lerp(*lo.b3, *hi.b3);
      }
    }
    i = j;
  }
}

}  // namespace

FormantTrack track_formants(const AudioBuffer& buf,
                            const ParticipantProfile& profile,
                            const TrackerConfig& config) {
  profile.validate();
  if (buf.samples.empty()) throw DataError("track_formants: empty buffer");

  const int analysis_rate =
      static_cast<int>(std::lround(2.0 * profile.formant_ceiling_hz));
  AudioBuffer work = resample(buf, analysis_rate);
  work = preemphasize(work, config.preemphasis_hz);
  const FrameSet frames = frame_signal(work, config.window_s, config.hop_s);

  const double max_freq = profile.formant_ceiling_hz - config.ceiling_margin_hz;

  FormantTrack track;
  track.participant_id = profile.id;
  track.frames.reserve(frames.frames.size());
  for (std::size_t k = 0; k < frames.frames.size(); ++k) {
    FormantFrame out;
    out.time_s = frames.start_times[k];
    const auto& frame = frames.frames[k];
    double energy = 0.0;
    for (const double v : frame) energy += v * v;
    if (energy > 0.0) {
      const auto coeffs = lpc_burg(frame, config.lpc_order);
      auto cands = lpc_to_formants(coeffs, analysis_rate, 0);
      std::vector<FormantCandidate> kept;
      for (const auto& c : cands) {
        if (c.frequency_hz >= config.min_freq_hz &&
            c.frequency_hz <= max_freq &&
            c.bandwidth_hz < config.max_bandwidth_hz) {
          kept.push_back(c);
        }
      }
      if (kept.size() >= 3) {
        out.f1 = kept[0].frequency_hz;
        out.b1 = kept[0].bandwidth_hz;
        out.f2 = kept[1].frequency_hz;
        out.b2 = kept[1].bandwidth_hz;
        out.f3 = kept[2].frequency_hz;
        out.b3 = kept[2].bandwidth_hz;
      }
    }
    track.frames.push_back(out);
  }

  interpolate_gaps(track, config.max_gap_frames);
  return track;
}

namespace {

// Central difference with edge replication; absent neighbors fall back to
// the center value, absent centers stay absent.
std::vector<std::optional<double>> central_difference(
    const std::vector<std::optional<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::optional<double>> d(n);
  for (std::size_t t = 0; t < n; ++t) {
    if (!x[t]) continue;
    const double left = (t > 0 && x[t - 1]) ? *x[t - 1] : *x[t];
    const double right = (t + 1 < n && x[t + 1]) ? *x[t + 1] : *x[t];
    d[t] = (right - left) / 2.0;
  }
  return d;
}

}  // namespace

TransformTrack formant_transforms(const FormantTrack& track) {
  if (track.frames.empty()) throw DataError("formant_transforms: empty track");
  TransformTrack out;
  out.f3_minus_f2.reserve(track.frames.size());
  for (const auto& fr : track.frames) {
    if (fr.f2 && fr.f3) {
      out.f3_minus_f2.push_back(*fr.f3 - *fr.f2);
    } else {
      out.f3_minus_f2.push_back(std::nullopt);
    }
  }
  out.delta_f3_minus_f2 = central_difference(out.f3_minus_f2);
  return out;
}

const NormRow& NormTable::match(double age_years, const std::string& sex) const {
  const NormRow* best = nullptr;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& row : rows) {
    if (row.sex != sex) continue;
    const double dist = std::abs(row.age_years - age_years);
    if (dist < best_dist ||
        (dist == best_dist && best && row.age_years < best->age_years)) {
      best = &row;
      best_dist = dist;
    }
  }
  if (best == nullptr || best_dist > 2.0) {
    throw DataError("no norm row within 2 years of age " +
                    format_double(age_years) + " (" + sex + ")");
  }
  return *best;
}

NormTable load_norm_table(const std::string& path) {
  const CsvTable csv = read_csv(path);
  const std::size_t ci_age = csv.column("age");
  const std::size_t ci_sex = csv.column("sex");
  const std::size_t cols[6] = {csv.column("f1_mean"), csv.column("f1_sd"),
                               csv.column("f2_mean"), csv.column("f2_sd"),
                               csv.column("f3_mean"), csv.column("f3_sd")};
  NormTable table;
  int line = 1;
  for (const auto& row : csv.rows) {
    ++line;
    NormRow r;
    const double age = parse_double_field(row[ci_age], path, line);
    r.age_years = static_cast<int>(std::lround(age));
    r.sex = row[ci_sex];
    if (r.sex != "female" && r.sex != "male") {
      throw ParseError(path + ": sex must be female or male", line);
    }
    for (int i = 0; i < 3; ++i) {
      r.mean[i] = parse_double_field(row[cols[2 * i]], path, line);
      r.sd[i] = parse_double_field(row[cols[2 * i + 1]], path, line);
      if (r.sd[i] <= 0.0) {
        throw ParseError(path + ": SD must be positive", line);
      }
    }
    table.rows.push_back(std::move(r));
  }
  if (table.rows.empty()) throw DataError(path + ": no norm rows");

  // Ages must form a contiguous span per sex.
  for (const std::string sex : {"female", "male"}) {
    std::vector<int> ages;
    for (const auto& r : table.rows) {
      if (r.sex == sex) ages.push_back(r.age_years);
    }
    std::sort(ages.begin(), ages.end());
    for (std::size_t i = 1; i < ages.size(); ++i) {
      if (ages[i] == ages[i - 1]) {
        throw DataError(path + ": duplicate age " + std::to_string(ages[i]) +
                        " for " + sex);
      }
      if (ages[i] != ages[i - 1] + 1) {
        throw DataError(path + ": age span for " + sex +
                        " is not contiguous near " + std::to_string(ages[i]));
      }
    }
  }
  return table;
}

FrameSeries normalize_formants(const FormantTrack& track,
                               const TransformTrack& transforms,
                               const NormTable& norms,
                               const ParticipantProfile& profile) {
  if (track.frames.size() != transforms.f3_minus_f2.size()) {
    throw DataError("normalize_formants: track/transform length mismatch");
  }
  const NormRow& row = norms.match(profile.age_years, profile.sex);
  const double dist_mean = row.mean[2] - row.mean[1];
  const double dist_sd =
      std::sqrt(row.sd[2] * row.sd[2] + row.sd[1] * row.sd[1]);

  const std::size_t n = track.frames.size();
  std::vector<std::optional<double>> zdist(n);
  for (std::size_t t = 0; t < n; ++t) {
    if (transforms.f3_minus_f2[t]) {
      zdist[t] = (*transforms.f3_minus_f2[t] - dist_mean) / dist_sd;
    }
  }
  const auto zdelta = central_difference(zdist);

  FrameSeries out;
  out.id = FeatureSet::FORMANTS5;
  out.channel_names = feature_set_channel_names(FeatureSet::FORMANTS5);
  out.channels.assign(5, std::vector<double>(n, 0.0));
  if (!track.frames.empty()) out.start_time_s = track.frames.front().time_s;
  for (std::size_t t = 0; t < n; ++t) {
    const auto& fr = track.frames[t];
    if (fr.f1) out.channels[0][t] = (*fr.f1 - row.mean[0]) / row.sd[0];
    if (fr.f2) out.channels[1][t] = (*fr.f2 - row.mean[1]) / row.sd[1];
    if (fr.f3) out.channels[2][t] = (*fr.f3 - row.mean[2]) / row.sd[2];
    if (zdist[t]) out.channels[3][t] = *zdist[t];
    if (zdelta[t]) out.channels[4][t] = *zdelta[t];
  }
  out.validate();
  return out;
}

void save_formant_track_csv(const std::string& path, const FormantTrack& track,
                            const TransformTrack& transforms) {
  if (track.frames.size() != transforms.f3_minus_f2.size()) {
    throw DataError("save_formant_track_csv: length mismatch");
  }
  CsvTable table;
  table.header = {"time_s", "f1", "f2", "f3", "f3_minus_f2",
                  "delta_f3_minus_f2"};
  auto cell = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  for (std::size_t t = 0; t < track.frames.size(); ++t) {
    const auto& fr = track.frames[t];
    table.rows.push_back({format_double(fr.time_s), cell(fr.f1), cell(fr.f2),
                          cell(fr.f3), cell(transforms.f3_minus_f2[t]),
                          cell(transforms.delta_f3_minus_f2[t])});
  }
  write_csv(path, table);
}

}  // namespace rmdx
