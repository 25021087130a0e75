// rmdx/pipeline.hpp

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

#ifndef RMDX_PIPELINE_HPP_
#define RMDX_PIPELINE_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rmdx/formant.hpp"
#include "rmdx/inversion.hpp"
#include "rmdx/metrics.hpp"
#include "rmdx/neural.hpp"
#include "rmdx/series.hpp"
#include "rmdx/textgrid.hpp"

namespace rmdx {

inline constexpr const char* kVersion = "0.1.0";

// Where tract-variable inputs come from: the manifest's tv_path column, the
// deterministic formant-based stand-in, or whichever of the two is
// available per utterance.
enum class TvOrigin { AUTO, FROM_FILE, PSEUDO };

const char* tv_origin_name(TvOrigin origin);
TvOrigin tv_origin_from_name(const std::string& name);

// One run's complete configuration; serialized to JSON so a single file
// reproduces the run.
struct RunConfig {
  std::string manifest_path;
  std::string participants_path;
  std::string norm_table_path;
  std::string out_dir = "run";
  FeatureSet feature_set = FeatureSet::FUSED14;
  TvOrigin tv_source = TvOrigin::AUTO;
  std::string rhotic_tier = "rhotic";
  std::uint64_t seed = 7;
  double val_fraction = 0.15;
  double failure_threshold = 0.10;
  int n_bins = 10;
  bool grid = false;
  Architecture architecture;  // input_channels is derived from feature_set
  TrainConfig train;
  GridSpec grid_spec;
  TrackerConfig tracker;
  SourceConfig source;

  void validate() const;
};

// Parses the JSON config document and applies `--set key.path=value`
// overrides (values are parsed as JSON scalars; bare words become
// strings). Unknown keys are rejected.
RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides,
                           const std::string& origin);
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides);
std::string serialize_run_config(const RunConfig& config);

// Hash over every setting and input-file digest that influences outputs;
// checkpoints and fold reports carry it so a rerun can tell current
// artifacts from stale ones.
std::string run_config_hash(const RunConfig& config);

struct ExtractReport {
  int total = 0;
  int failed = 0;
  std::vector<std::string> failures;  // "utterance_id: error" lines
  std::vector<std::string> warnings;
};

// Feature extraction over the whole manifest: per utterance a formant CSV,
// a feature CSV for the configured set, and a binned TV CSV when the
// annotation names a rhotic interval. Individual utterance failures are
// collected; the call throws only when more than
// failure_threshold * total utterances fail.
ExtractReport cmd_extract(const RunConfig& config);

struct TrainReport {
  int trained = 0;
  int skipped = 0;  // folds already complete under the same config hash
  std::vector<std::string> fold_participants;
};

// LOPO training over the extracted feature cache: one checkpoint and one
// fold report per participant, deterministic for a given config, resumable
// (folds whose outputs carry the current config hash are skipped).
TrainReport cmd_train(const RunConfig& config);

// Aggregates fold reports under out_dir into mean/SD/median metric tables
// per feature set, a per-fold metric CSV, and the age-vs-AUROC table with
// a Spearman test when 2 <= n <= 10.
void cmd_evaluate(const RunConfig& config);

// Univariate analysis of the binned TV trajectories: per-channel Cohen's d
// between label groups (pooled bin values) and a per-bin trajectory table
// with 95% confidence ribbons.
void cmd_analyze(const RunConfig& config);

// Fold artifacts: the metric report plus training diagnostics; the JSON
// files under reports/ are byte-deterministic for a fixed config.
struct FoldArtifacts {
  FoldReport report;
  int stopped_epoch = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochLoss> curve;
  std::string config_hash;
};

void save_fold_report(const std::string& path, const FoldArtifacts& artifacts);
FoldArtifacts load_fold_report(const std::string& path);

// Binned-segment CSV (`bin,<channel...>`, one row per bin).
void save_binned_csv(const std::string& path, const BinnedSegment& segment);
BinnedSegment load_binned_csv(const std::string& path);

// Worker-count cap: RHOTIC_MDX_THREADS when set (must be >= 1), otherwise
// the hardware concurrency.
int thread_cap();

// Runs fn(0..n-1) across up to thread_cap() workers. Callers index into
// preallocated result slots, so output identity is independent of
// scheduling.
void parallel_for_index(int n, const std::function<void(int)>& fn);

}  // namespace rmdx

#endif  // RMDX_PIPELINE_HPP_
