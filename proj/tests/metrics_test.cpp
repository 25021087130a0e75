// tests/metrics_test.cpp

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

#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "rmdx/errors.hpp"
#include "rmdx/metrics.hpp"
#include "rmdx/rng.hpp"
#include "support/test_util.hpp"

using namespace rmdx;

namespace {

BinnedSegment constant_segment(double value, std::size_t n_bins = 3) {
  BinnedSegment seg;
  seg.channel_names = {"tbcl"};
  seg.bins.assign(n_bins, std::vector<double>{value});
  return seg;
}

FoldReport report_with(double f1, double precision, double recall, double au) {
  FoldReport r;
  r.f1_weighted = f1;
  r.precision_weighted = precision;
  r.recall_weighted = recall;
  r.auroc = au;
  return r;
}

}  // namespace

TEST_CASE("confusion metrics match the hand-worked 4-sample case") {
  const std::vector<double> scores = {0.1, 0.2, 0.9, 0.8};
  const std::vector<int> labels = {0, 0, 0, 1};
  const ConfusionMetrics m = confusion_metrics(scores, labels);
  CHECK(m.support[0] == 3);
  CHECK(m.support[1] == 1);
  CHECK(m.precision_class[0] == doctest::Approx(1.0));
  CHECK(m.recall_class[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.f1_class[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.precision_class[1] == doctest::Approx(0.5));
  CHECK(m.recall_class[1] == doctest::Approx(1.0));
  CHECK(m.f1_class[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.f1_weighted ==
        doctest::Approx((3.0 * 0.8 + 2.0 / 3.0) / 4.0).epsilon(1e-12));
  CHECK(m.precision_weighted == doctest::Approx(0.875).epsilon(1e-12));
  CHECK(m.recall_weighted == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("confusion metric edge conventions") {
  // Perfect predictions.
  const ConfusionMetrics perfect =
      confusion_metrics({0.1, 0.9, 0.2, 0.8}, {0, 1, 0, 1});
  CHECK(perfect.f1_weighted == doctest::Approx(1.0));
  CHECK(perfect.precision_weighted == doctest::Approx(1.0));
  CHECK(perfect.recall_weighted == doctest::Approx(1.0));

  // Nothing predicted positive: class-1 precision is 0 by convention.
  const ConfusionMetrics skew = confusion_metrics({0.1, 0.2}, {0, 1});
  CHECK(skew.precision_class[1] == 0.0);
  CHECK(skew.f1_class[1] == 0.0);
  CHECK(std::isfinite(skew.f1_weighted));

  // A score equal to the threshold predicts positive.
  const ConfusionMetrics edge = confusion_metrics({0.5}, {1});
  CHECK(edge.recall_class[1] == 1.0);

  CHECK_THROWS_AS(confusion_metrics({}, {}), DataError);
  CHECK_THROWS_AS(confusion_metrics({0.5}, {0, 1}), DataError);
  CHECK_THROWS_AS(confusion_metrics({0.5}, {2}), DataError);
}

TEST_CASE("weighted recall equals accuracy") {
  Rng rng(404);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform_int(40));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = rng.uniform();
      labels[i] = static_cast<int>(rng.uniform_int(2));
    }
    labels[0] = 0;
    labels[n - 1] = 1;
    const ConfusionMetrics m = confusion_metrics(scores, labels);
    double correct = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if ((scores[i] >= 0.5 ? 1 : 0) == labels[i]) correct += 1.0;
    }
    CHECK(m.recall_weighted ==
          doctest::Approx(correct / static_cast<double>(n)).epsilon(1e-12));
  }
}

TEST_CASE("AUROC frozen cases") {
  CHECK(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) ==
        doctest::Approx(0.75).epsilon(1e-12));
  CHECK(auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
  CHECK_THROWS_WITH_AS(auroc({0.5, 0.6}, {1, 1}),
                       doctest::Contains("AUROC undefined"), DataError);
  CHECK_THROWS_AS(auroc({}, {}), DataError);
  CHECK_THROWS_AS(auroc({0.5}, {0, 1}), DataError);
}

TEST_CASE("AUROC equals the pair-count definition, ties at half") {
  Rng rng(505);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 4 + static_cast<std::size_t>(rng.uniform_int(47));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Quantized scores force tie groups.
      scores[i] = static_cast<double>(rng.uniform_int(8)) / 8.0;
      labels[i] = static_cast<int>(rng.uniform_int(2));
    }
    labels[0] = 0;
    labels[1] = 1;
    CHECK(auroc(scores, labels) ==
          doctest::Approx(test::auroc_pair_oracle(scores, labels))
              .epsilon(1e-12));
  }
}

TEST_CASE("AUROC is invariant under strictly increasing transforms") {
  Rng rng(606);
  std::vector<double> scores(25);
  std::vector<int> labels(25);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = rng.uniform(-3.0, 3.0);
    labels[i] = static_cast<int>(rng.uniform_int(2));
  }
  labels[0] = 0;
  labels[1] = 1;
  const double base = auroc(scores, labels);

  std::vector<double> warped = scores;
  for (double& s : warped) s = std::exp(s);
  CHECK(auroc(warped, labels) == doctest::Approx(base).epsilon(1e-12));
  for (std::size_t i = 0; i < scores.size(); ++i) {
    warped[i] = std::atan(scores[i]) * 10.0 + 4.0;
  }
  CHECK(auroc(warped, labels) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("Cohen's d matches the hand-worked case") {
  const EffectSizeResult r = cohens_d({2, 3, 4}, {1, 2, 3});
  CHECK(r.d == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.n0 == 3);
  CHECK(r.n1 == 3);
  CHECK(r.label == "large");
  const double se = std::sqrt(6.0 / 9.0 + 1.0 / 12.0);
  CHECK(r.ci_low == doctest::Approx(1.0 - 1.96 * se).epsilon(1e-12));
  CHECK(r.ci_high == doctest::Approx(1.0 + 1.96 * se).epsilon(1e-12));

  const EffectSizeResult zero = cohens_d({1, 2, 3}, {1, 2, 3});
  CHECK(zero.d == doctest::Approx(0.0).scale(1.0));
  CHECK(zero.ci_low < 0.0);
  CHECK(zero.ci_high > 0.0);
  CHECK(zero.label == "negligible");

  CHECK_THROWS_WITH_AS(cohens_d({2, 2, 2}, {2, 2, 2}),
                       doctest::Contains("zero pooled SD"), DataError);
  CHECK_THROWS_AS(cohens_d({1}, {1, 2}), DataError);
}

TEST_CASE("Cohen's d symmetry, scale equivariance, oracle agreement") {
  Rng rng(707);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> a(5 + rng.uniform_int(10));
    std::vector<double> b(5 + rng.uniform_int(10));
    for (double& v : a) v = rng.normal(0.3, 1.0);
    for (double& v : b) v = rng.normal(-0.2, 1.4);

    const EffectSizeResult fwd = cohens_d(a, b);
    const EffectSizeResult rev = cohens_d(b, a);
    CHECK(fwd.d == doctest::Approx(-rev.d).epsilon(1e-12));
    CHECK(fwd.d == doctest::Approx(test::cohens_d_oracle(a, b)).epsilon(1e-12));

    std::vector<double> ca = a, cb = b;
    for (double& v : ca) v *= 3.7;
    for (double& v : cb) v *= 3.7;
    CHECK(cohens_d(ca, cb).d == doctest::Approx(fwd.d).epsilon(1e-12));
  }
}

TEST_CASE("effect-size labels use the 0.2 / 0.5 / 0.8 cuts") {
  CHECK(classify_effect_size(0.39) == "small");
  CHECK(classify_effect_size(0.08) == "negligible");
  CHECK(classify_effect_size(-0.22) == "small");
  CHECK(classify_effect_size(0.19999) == "negligible");
  CHECK(classify_effect_size(0.2) == "small");
  CHECK(classify_effect_size(0.5) == "medium");
  CHECK(classify_effect_size(0.8) == "large");
  CHECK(classify_effect_size(-0.8) == "large");
  CHECK(classify_effect_size(-3.1) == "large");
}

TEST_CASE("Spearman rho and exact p on the six-point case") {
  const std::vector<double> x = {1, 2, 3, 4, 5, 6};
  const std::vector<double> y = {3, 6, 5, 2, 4, 1};
  const SpearmanResult r = spearman_exact(x, y);
  CHECK(r.n == 6);
  // sum d^2 = 54 -> rho = 1 - 324/210 = -19/35.
  CHECK(r.rho == doctest::Approx(-19.0 / 35.0).epsilon(1e-12));
  CHECK(r.p_two_sided >= 0.295);
  CHECK(r.p_two_sided <= 0.305);

  const test::SpearmanOracle oracle = test::spearman_oracle(x, y);
  CHECK(r.rho == doctest::Approx(oracle.rho).epsilon(1e-12));
  CHECK(r.p_two_sided == doctest::Approx(oracle.p_two_sided).epsilon(1e-12));
}

TEST_CASE("Spearman endpoints and refusals") {
  const SpearmanResult inc =
      spearman_exact({1, 2, 3, 4, 5, 6}, {2, 4, 8, 16, 32, 64});
  CHECK(inc.rho == doctest::Approx(1.0));
  CHECK(inc.p_two_sided == doctest::Approx(2.0 / 720.0).epsilon(1e-12));

  const SpearmanResult two = spearman_exact({1, 2}, {5, 3});
  CHECK(two.rho == doctest::Approx(-1.0));
  CHECK(two.p_two_sided == doctest::Approx(1.0));

  std::vector<double> big(11);
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<double>(i);
  CHECK_THROWS_AS(spearman_exact(big, big), ConfigError);
  CHECK_THROWS_AS(spearman_exact({1.0}, {2.0}), ConfigError);
  CHECK_THROWS_AS(spearman_exact({1, 2}, {1, 2, 3}), ConfigError);
}

TEST_CASE("Spearman agrees with independent enumeration on random data") {
  Rng rng(808);
  for (int rep = 0; rep < 8; ++rep) {
    const std::size_t n = 3 + static_cast<std::size_t>(rng.uniform_int(5));
    std::vector<double> x(n), y(n);
    // Tie-free by construction: distinct uniform draws.
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform() + static_cast<double>(i) * 2.0;
      y[i] = rng.uniform();
    }
    rng.shuffle(x);
    const SpearmanResult r = spearman_exact(x, y);
    const test::SpearmanOracle oracle = test::spearman_oracle(x, y);
    CHECK(r.rho == doctest::Approx(oracle.rho).epsilon(1e-12));
    CHECK(r.p_two_sided == doctest::Approx(oracle.p_two_sided).epsilon(1e-12));
  }
}

TEST_CASE("Spearman averages ranks over ties") {
  // x ranks (1, 2.5, 2.5, 4): sum d^2 = 0.5 -> rho = 1 - 3/60 = 0.95.
  const SpearmanResult r = spearman_exact({1, 2, 2, 3}, {1, 2, 3, 4});
  CHECK(r.rho == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(r.p_two_sided > 0.0);
  CHECK(r.p_two_sided <= 1.0);
}

TEST_CASE("fold aggregation reproduces the six-fold shape") {
  std::vector<FoldReport> reports;
  const double f1s[6] = {0.92, 0.95, 0.85, 0.90, 0.95, 0.83};
  const double aus[6] = {0.99, 0.98, 0.90, 0.95, 0.97, 0.88};
  for (int i = 0; i < 6; ++i) {
    reports.push_back(report_with(f1s[i], f1s[i] - 0.01, f1s[i] + 0.01,
                                  aus[i]));
  }
  const FoldAggregate agg = aggregate_folds(reports);
  CHECK(agg.n_folds == 6);
  CHECK(!agg.sd_degenerate);
  CHECK(agg.f1.mean == doctest::Approx(0.90).epsilon(1e-12));
  CHECK(agg.f1.sd == doctest::Approx(std::sqrt(0.00256)).epsilon(1e-9));
  CHECK(agg.f1.median == doctest::Approx(0.91).epsilon(1e-12));
  // Each metric is summarized from its own column.
  CHECK(agg.precision.mean == doctest::Approx(0.89).epsilon(1e-12));
  CHECK(agg.recall.mean == doctest::Approx(0.91).epsilon(1e-12));
  CHECK(agg.auroc.median == doctest::Approx((0.95 + 0.97) / 2.0));

  const FoldAggregate three = aggregate_folds(
      {report_with(0.9, 0.9, 0.9, 0.9), report_with(0.8, 0.8, 0.8, 0.8),
       report_with(0.7, 0.7, 0.7, 0.7)});
  CHECK(three.f1.mean == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(three.f1.median == doctest::Approx(0.8).epsilon(1e-12));

  const FoldAggregate one = aggregate_folds({report_with(0.9, 0.9, 0.9, 0.9)});
  CHECK(one.sd_degenerate);
  CHECK(one.f1.sd == 0.0);
  CHECK(one.f1.median == doctest::Approx(0.9));

  CHECK_THROWS_AS(aggregate_folds({}), DataError);
}

TEST_CASE("trajectory ribbons use 1.96 population SE") {
  const std::vector<BinnedSegment> g0 = {constant_segment(0.0),
                                         constant_segment(2.0)};
  const std::vector<BinnedSegment> g1 = {constant_segment(5.0),
                                         constant_segment(5.0)};
  const TrajectorySummary s = trajectory_with_ci(g0, g1);
  CHECK(s.n0 == 2);
  CHECK(s.n1 == 2);
  CHECK(s.channel_names == std::vector<std::string>{"tbcl"});
  const double half = 1.96 / std::sqrt(2.0);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(s.group0.mean[b][0] == doctest::Approx(1.0));
    CHECK(s.group0.ci_low[b][0] == doctest::Approx(1.0 - half).epsilon(1e-9));
    CHECK(s.group0.ci_high[b][0] == doctest::Approx(1.0 + half).epsilon(1e-9));
    // Identical segments collapse to zero-width ribbons.
    CHECK(s.group1.mean[b][0] == doctest::Approx(5.0));
    CHECK(s.group1.ci_low[b][0] == doctest::Approx(5.0));
    CHECK(s.group1.ci_high[b][0] == doctest::Approx(5.0));
  }
}

TEST_CASE("ribbon width scales as the inverse square root of n") {
  std::vector<BinnedSegment> small, large;
  for (int i = 0; i < 4; ++i) small.push_back(constant_segment(i % 2 * 2.0));
  for (int i = 0; i < 16; ++i) large.push_back(constant_segment(i % 2 * 2.0));
  // Both groups have per-bin population SD exactly 1.
  const TrajectorySummary s = trajectory_with_ci(small, large);
  const double w4 = s.group0.ci_high[0][0] - s.group0.ci_low[0][0];
  const double w16 = s.group1.ci_high[0][0] - s.group1.ci_low[0][0];
  CHECK(w4 / w16 == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("trajectory input validation") {
  const std::vector<BinnedSegment> ok = {constant_segment(0.0),
                                         constant_segment(1.0)};
  CHECK_THROWS_AS(trajectory_with_ci({constant_segment(0.0)}, ok), DataError);
  CHECK_THROWS_AS(trajectory_with_ci(ok, {constant_segment(0.0)}), DataError);

  std::vector<BinnedSegment> ragged = ok;
  ragged[1] = constant_segment(1.0, 5);
  CHECK_THROWS_AS(trajectory_with_ci(ragged, ok), DataError);

  const std::vector<BinnedSegment> other_shape = {constant_segment(0.0, 5),
                                                  constant_segment(1.0, 5)};
  CHECK_THROWS_AS(trajectory_with_ci(ok, other_shape), DataError);
}
