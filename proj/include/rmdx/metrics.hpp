// rmdx/metrics.hpp

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

#ifndef RMDX_METRICS_HPP_
#define RMDX_METRICS_HPP_

#include <string>
#include <vector>

#include "rmdx/textgrid.hpp"

namespace rmdx {

// Support-weighted precision/recall/F1 for a binary task, plus the
// per-class values they average.
struct ConfusionMetrics {
  double precision_weighted = 0.0;
  double recall_weighted = 0.0;
  double f1_weighted = 0.0;
  double precision_class[2] = {0.0, 0.0};
  double recall_class[2] = {0.0, 0.0};
  double f1_class[2] = {0.0, 0.0};
  int support[2] = {0, 0};
};

struct Prediction {
  std::string utterance_id;
  double score = 0.0;
  int label = 0;
};

// Per-fold test metrics with the raw prediction dump.
struct FoldReport {
  std::string participant_id;
  std::string feature_set;
  std::string model;  // "bilstm" or "bigru"
  double f1_weighted = 0.0;
  double precision_weighted = 0.0;
  double recall_weighted = 0.0;
  double auroc = 0.0;
  std::vector<Prediction> predictions;
};

struct EffectSizeResult {
  double d = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n0 = 0;
  int n1 = 0;
  std::string label;  // negligible / small / medium / large
};

struct SpearmanResult {
  double rho = 0.0;
  double p_two_sided = 1.0;
  int n = 0;
};

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;      // sample SD (n-1); 0 when n = 1
  double median = 0.0;
};

struct FoldAggregate {
  MetricSummary f1, precision, recall, auroc;
  int n_folds = 0;
  bool sd_degenerate = false;  // true when n_folds == 1
};

// Per-bin class means with 95% normal-approximation ribbons
// (mean +/- 1.96 * population SD / sqrt(n)).
struct TrajectoryRibbon {
  std::vector<std::vector<double>> mean;     // n_bins x channels
  std::vector<std::vector<double>> ci_low;
  std::vector<std::vector<double>> ci_high;
};

struct TrajectorySummary {
  std::vector<std::string> channel_names;
  TrajectoryRibbon group0, group1;
  int n0 = 0;
  int n1 = 0;
};

// Thresholds scores at `threshold` (prediction 1 when score >= threshold)
// and computes support-weighted precision/recall/F1. A class that is never
// predicted gets precision 0; a class with no support gets recall/F1 0.
ConfusionMetrics confusion_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels,
                                   double threshold = 0.5);

// Probability that a random positive outscores a random negative, ties
// counted half (tie-corrected rank formulation). Requires both classes.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Pooled-SD standardized mean difference (group0 mean - group1 mean) with
// 95% CI from the normal-approximation standard error
// sqrt((n0+n1)/(n0*n1) + d^2/(2*(n0+n1))).
EffectSizeResult cohens_d(const std::vector<double>& group0,
                          const std::vector<double>& group1);

// |d| < 0.2 negligible, < 0.5 small, < 0.8 medium, else large.
std::string classify_effect_size(double d);

// Spearman rank correlation rho = 1 - 6*sum(d^2)/(n(n^2-1)) on average
// ranks, with a two-sided p from exhaustive enumeration of all rank
// permutations. Refuses n > 10 (outside the exact regime).
SpearmanResult spearman_exact(const std::vector<double>& x,
                              const std::vector<double>& y);

// Mean / sample SD / median of each metric across folds.
FoldAggregate aggregate_folds(const std::vector<FoldReport>& reports);

// Per-bin per-channel class means with CI ribbons; needs >= 2 segments per
// group and identical bin/channel shapes.
TrajectorySummary trajectory_with_ci(const std::vector<BinnedSegment>& group0,
                                     const std::vector<BinnedSegment>& group1);

}  // namespace rmdx

#endif  // RMDX_METRICS_HPP_
