// rmdx/metrics.cpp

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

#include "rmdx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "rmdx/errors.hpp"

namespace rmdx {

namespace {

void check_binary_labels(const std::vector<int>& labels) {
  for (const int y : labels) {
    if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
  }
}

}  // namespace

ConfusionMetrics confusion_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels,
                                   double threshold) {
  if (scores.empty()) throw DataError("confusion_metrics: empty input");
  if (scores.size() != labels.size()) {
    throw DataError("confusion_metrics: size mismatch");
  }
  check_binary_labels(labels);

  // cm[truth][prediction]
  int cm[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int pred = scores[i] >= threshold ? 1 : 0;
    ++cm[labels[i]][pred];
  }

  ConfusionMetrics out;
  const int n = static_cast<int>(scores.size());
  for (int c = 0; c < 2; ++c) {
    const int tp = cm[c][c];
    const int predicted = cm[0][c] + cm[1][c];
    const int support = cm[c][0] + cm[c][1];
    out.support[c] = support;
    out.precision_class[c] = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
    out.recall_class[c] = support > 0 ? static_cast<double>(tp) / support : 0.0;
    const double pr = out.precision_class[c] + out.recall_class[c];
    out.f1_class[c] =
        pr > 0.0 ? 2.0 * out.precision_class[c] * out.recall_class[c] / pr
                 : 0.0;
    out.precision_weighted += support * out.precision_class[c];
    out.recall_weighted += support * out.recall_class[c];
    out.f1_weighted += support * out.f1_class[c];
  }
  out.precision_weighted /= n;
  out.recall_weighted /= n;
  out.f1_weighted /= n;
  return out;
}

double auroc(const std::vector<double>& scores,
             const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw DataError("auroc: empty or mismatched input");
  }
  check_binary_labels(labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Average ranks over tie groups, then the Mann-Whitney identity.
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = avg;
    i = j;
  }

  double rank_sum_pos = 0.0;
  std::size_t n1 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[k] == 1) {
      rank_sum_pos += rank[k];
      ++n1;
    }
  }
  const std::size_t n0 = n - n1;
  if (n0 == 0 || n1 == 0) throw DataError("AUROC undefined for single-class input");
  const double u1 =
      rank_sum_pos - static_cast<double>(n1) * (n1 + 1) / 2.0;
  return u1 / (static_cast<double>(n0) * static_cast<double>(n1));
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_var(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (const double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

EffectSizeResult cohens_d(const std::vector<double>& group0,
                          const std::vector<double>& group1) {
  const std::size_t n0 = group0.size(), n1 = group1.size();
  if (n0 < 2 || n1 < 2) throw DataError("cohens_d: each group needs >= 2 values");
  const double m0 = mean_of(group0), m1 = mean_of(group1);
  const double v0 = sample_var(group0, m0), v1 = sample_var(group1, m1);
  const double pooled =
      std::sqrt(((n0 - 1) * v0 + (n1 - 1) * v1) /
                static_cast<double>(n0 + n1 - 2));
  if (pooled <= 0.0) throw DataError("cohens_d: zero pooled SD");

  EffectSizeResult out;
  out.n0 = static_cast<int>(n0);
  out.n1 = static_cast<int>(n1);
  out.d = (m0 - m1) / pooled;
  const double ntot = static_cast<double>(n0 + n1);
  const double se = std::sqrt(ntot / (static_cast<double>(n0) * n1) +
                              out.d * out.d / (2.0 * ntot));
  out.ci_low = out.d - 1.96 * se;
  out.ci_high = out.d + 1.96 * se;
  out.label = classify_effect_size(out.d);
  return out;
}

std::string classify_effect_size(double d) {
  const double a = std::abs(d);
  if (a < 0.2) return "negligible";
  if (a < 0.5) return "small";
  if (a < 0.8) return "medium";
  return "large";
}

namespace {

// Average ranks doubled so ties (x.5 ranks) stay integral.
std::vector<std::int64_t> double_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<std::int64_t> rank2(n, 0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && v[order[j]] == v[order[i]]) ++j;
    const std::int64_t sum2 = static_cast<std::int64_t>(i + 1 + j);  // 2*avg rank
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = sum2;
    i = j;
  }
  return rank2;
}

// 4 * sum of squared rank differences, exactly, from doubled ranks.
std::int64_t sum_sq4(const std::vector<std::int64_t>& rx,
                     const std::vector<std::int64_t>& ry) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const std::int64_t d = rx[i] - ry[i];
    s += d * d;
  }
  return s;
}

std::int64_t abs64(std::int64_t v) { return v < 0 ? -v : v; }

}  // namespace

SpearmanResult spearman_exact(const std::vector<double>& x,
                              const std::vector<double>& y) {
  if (x.size() != y.size()) throw ConfigError("spearman_exact: size mismatch");
  const int n = static_cast<int>(x.size());
  if (n < 2) throw ConfigError("spearman_exact: need n >= 2");
  if (n > 10) {
    throw ConfigError(
        "spearman_exact: n > 10 is outside the exact-enumeration regime");
  }

  const auto rx = double_ranks(x);
  auto ry = double_ranks(y);
  // rho = 1 - 6*S/D with S = sum d^2 over unit ranks; using doubled ranks,
  // S = S4/4, so rho = (D - 1.5*S4)/D. Compare |2D - 3*S4| in integers for
  // an exact permutation test.
  const std::int64_t d_denom =
      static_cast<std::int64_t>(n) * (static_cast<std::int64_t>(n) * n - 1);
  const std::int64_t s4_obs = sum_sq4(rx, ry);
  const std::int64_t t_obs = abs64(2 * d_denom - 3 * s4_obs);

  SpearmanResult out;
  out.n = n;
  out.rho = 1.0 - 1.5 * static_cast<double>(s4_obs) / static_cast<double>(d_denom);

  std::vector<std::int64_t> perm = ry;
  std::sort(perm.begin(), perm.end());
  std::uint64_t total = 0, hits = 0;
  do {
    ++total;
    if (abs64(2 * d_denom - 3 * sum_sq4(rx, perm)) >= t_obs) ++hits;
  } while (std::next_permutation(perm.begin(), perm.end()));
  out.p_two_sided = static_cast<double>(hits) / static_cast<double>(total);
  return out;
}

namespace {

MetricSummary summarize(std::vector<double> v) {
  MetricSummary s;
  const std::size_t n = v.size();
  s.mean = mean_of(v);
  s.sd = n > 1 ? std::sqrt(sample_var(v, s.mean)) : 0.0;
  std::sort(v.begin(), v.end());
  s.median = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return s;
}

}  // namespace

FoldAggregate aggregate_folds(const std::vector<FoldReport>& reports) {
  if (reports.empty()) throw DataError("aggregate_folds: no reports");
  std::vector<double> f1, pr, rc, au;
  for (const auto& r : reports) {
    f1.push_back(r.f1_weighted);
    pr.push_back(r.precision_weighted);
    rc.push_back(r.recall_weighted);
    au.push_back(r.auroc);
  }
  FoldAggregate out;
  out.n_folds = static_cast<int>(reports.size());
  out.sd_degenerate = out.n_folds == 1;
  out.f1 = summarize(std::move(f1));
  out.precision = summarize(std::move(pr));
  out.recall = summarize(std::move(rc));
  out.auroc = summarize(std::move(au));
  return out;
}

namespace {

TrajectoryRibbon ribbon_for(const std::vector<BinnedSegment>& group) {
  const std::size_t n_bins = group.front().bins.size();
  const std::size_t n_ch = group.front().bins.front().size();
  const double n = static_cast<double>(group.size());
  TrajectoryRibbon r;
  r.mean.assign(n_bins, std::vector<double>(n_ch, 0.0));
  r.ci_low = r.mean;
  r.ci_high = r.mean;
  for (std::size_t b = 0; b < n_bins; ++b) {
    for (std::size_t c = 0; c < n_ch; ++c) {
      double m = 0.0;
      for (const auto& seg : group) m += seg.bins[b][c];
      m /= n;
      double var = 0.0;
      for (const auto& seg : group) {
        const double d = seg.bins[b][c] - m;
        var += d * d;
      }
      const double half = 1.96 * std::sqrt(var / n) / std::sqrt(n);
      r.mean[b][c] = m;
      r.ci_low[b][c] = m - half;
      r.ci_high[b][c] = m + half;
    }
  }
  return r;
}

void check_group(const std::vector<BinnedSegment>& group, const char* name) {
  if (group.size() < 2) {
    throw DataError(std::string("trajectory_with_ci: ") + name +
                    " needs >= 2 segments");
  }
  const auto& first = group.front();
  for (const auto& seg : group) {
    if (seg.bins.size() != first.bins.size() ||
        seg.channel_names != first.channel_names) {
      throw DataError("trajectory_with_ci: inconsistent segment shapes");
    }
  }
}

}  // namespace

TrajectorySummary trajectory_with_ci(const std::vector<BinnedSegment>& group0,
                                     const std::vector<BinnedSegment>& group1) {
  check_group(group0, "group 0");
  check_group(group1, "group 1");
  if (group0.front().channel_names != group1.front().channel_names ||
      group0.front().bins.size() != group1.front().bins.size()) {
    throw DataError("trajectory_with_ci: groups have different shapes");
  }
  TrajectorySummary out;
  out.channel_names = group0.front().channel_names;
  out.n0 = static_cast<int>(group0.size());
  out.n1 = static_cast<int>(group1.size());
  out.group0 = ribbon_for(group0);
  out.group1 = ribbon_for(group1);
  return out;
}

}  // namespace rmdx
