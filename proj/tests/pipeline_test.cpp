// tests/pipeline_test.cpp

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
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rmdx/csv.hpp"
#include "rmdx/errors.hpp"
#include "rmdx/pipeline.hpp"
#include "support/test_util.hpp"

using namespace rmdx;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Restores (or clears) an environment variable when leaving scope.
class EnvGuard {
 public:
  explicit EnvGuard(const char* name) : name_(name) {
    const char* value = std::getenv(name);
    had_ = value != nullptr;
    if (had_) old_ = value;
  }
  ~EnvGuard() {
    if (had_) {
      ::setenv(name_.c_str(), old_.c_str(), 1);
    } else {
      ::unsetenv(name_.c_str());
    }
  }
  void set(const std::string& value) {
    ::setenv(name_.c_str(), value.c_str(), 1);
  }
  void clear() { ::unsetenv(name_.c_str()); }

 private:
  std::string name_;
  bool had_ = false;
  std::string old_;
};

void write_tv6_csv(const std::string& path, int frames, int variant) {
  std::ostringstream out;
  out << "time_s,la,lp,ttcl,ttcd,tbcl,tbcd\n";
  out.setf(std::ios::fixed);
  out.precision(6);
  for (int t = 0; t < frames; ++t) {
    out << 0.01 * t;
    for (int c = 0; c < 6; ++c) {
      out << ',' << 0.4 * std::sin(0.31 * t + 0.7 * c + variant);
    }
    out << '\n';
  }
  test::write_file(path, out.str());
}

// One interval tier named "rhotic" with a single labeled stretch
// [lo, hi]; an empty label leaves the whole tier blank.
std::string rhotic_grid(double xmax, double lo, double hi,
                        const std::string& label) {
  std::ostringstream g;
  g << "File type = \"ooTextFile\"\n"
    << "Object class = \"TextGrid\"\n\n"
    << "xmin = 0\nxmax = " << xmax << "\ntiers? <exists>\nsize = 1\n"
    << "item []:\n    item [1]:\n        class = \"IntervalTier\"\n"
    << "        name = \"rhotic\"\n        xmin = 0\n        xmax = " << xmax
    << "\n        intervals: size = 3\n"
    << "        intervals [1]:\n            xmin = 0\n            xmax = "
    << lo << "\n            text = \"\"\n"
    << "        intervals [2]:\n            xmin = " << lo
    << "\n            xmax = " << hi << "\n            text = \"" << label
    << "\"\n"
    << "        intervals [3]:\n            xmin = " << hi
    << "\n            xmax = " << xmax << "\n            text = \"\"\n";
  return g.str();
}

bool contains_entry(const std::vector<std::string>& lines,
                    const std::string& needle) {
  for (const auto& line : lines) {
    if (line.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("tv-source names round-trip") {
  CHECK(std::string(tv_origin_name(TvOrigin::AUTO)) == "auto");
  CHECK(std::string(tv_origin_name(TvOrigin::FROM_FILE)) == "file");
  CHECK(std::string(tv_origin_name(TvOrigin::PSEUDO)) == "pseudo");
  CHECK(tv_origin_from_name("auto") == TvOrigin::AUTO);
  CHECK(tv_origin_from_name("file") == TvOrigin::FROM_FILE);
  CHECK(tv_origin_from_name("pseudo") == TvOrigin::PSEUDO);
  CHECK_THROWS_AS(tv_origin_from_name("guess"), ConfigError);
}

TEST_CASE("config parsing fills defaults and reads every section") {
  const RunConfig defaults = parse_run_config("{}", {}, "test");
  CHECK(defaults.out_dir == "run");
  CHECK(defaults.feature_set == FeatureSet::FUSED14);
  CHECK(defaults.tv_source == TvOrigin::AUTO);
  CHECK(defaults.rhotic_tier == "rhotic");
  CHECK(defaults.seed == 7);
  CHECK(defaults.n_bins == 10);
  CHECK_FALSE(defaults.grid);
  CHECK(defaults.architecture.cell == CellType::BILSTM);
  CHECK(defaults.architecture.hidden_size == 56);
  CHECK(defaults.train.batch_size == 64);
  CHECK(defaults.train.optimizer == OptimizerKind::ADAM);

  const std::string doc = R"({
    "manifest": "m.csv",
    "participants": "p.csv",
    "norm_table": "n.csv",
    "out_dir": "exp1",
    "feature_set": "tv9",
    "tv_source": "pseudo",
    "rhotic_tier": "r-tier",
    "seed": 99,
    "val_fraction": 0.2,
    "failure_threshold": 0.25,
    "n_bins": 8,
    "grid": true,
    "architecture": {"cell": "bigru", "recurrent_layers": 1,
                     "hidden_size": 12, "dense_layers": 3,
                     "dense_width": 16, "dropout": 0.3},
    "train": {"learning_rate": 0.002, "batch_size": 32,
              "optimizer": "rmsprop", "max_epochs": 40, "patience": 4},
    "grid_spec": {"learning_rates": [0.001], "batch_sizes": [8],
                  "optimizers": ["sgd"], "recurrent_layers": [1],
                  "dense_layers": [2], "dropouts": [0.5]},
    "tracker": {"lpc_order": 14, "max_gap_frames": 3},
    "source": {"min_pitch_hz": 80, "max_pitch_hz": 350}
  })";
  const RunConfig c = parse_run_config(doc, {}, "test");
  CHECK(c.manifest_path == "m.csv");
  CHECK(c.participants_path == "p.csv");
  CHECK(c.norm_table_path == "n.csv");
  CHECK(c.out_dir == "exp1");
  CHECK(c.feature_set == FeatureSet::TV9);
  CHECK(c.tv_source == TvOrigin::PSEUDO);
  CHECK(c.rhotic_tier == "r-tier");
  CHECK(c.seed == 99);
  CHECK(c.val_fraction == 0.2);
  CHECK(c.failure_threshold == 0.25);
  CHECK(c.n_bins == 8);
  CHECK(c.grid);
  CHECK(c.architecture.cell == CellType::BIGRU);
  CHECK(c.architecture.recurrent_layers == 1);
  CHECK(c.architecture.hidden_size == 12);
  CHECK(c.architecture.dense_layers == 3);
  CHECK(c.architecture.dense_width == 16);
  CHECK(c.architecture.dropout == 0.3);
  CHECK(c.train.learning_rate == 0.002);
  CHECK(c.train.batch_size == 32);
  CHECK(c.train.optimizer == OptimizerKind::RMSPROP);
  CHECK(c.train.max_epochs == 40);
  CHECK(c.train.patience == 4);
  CHECK(c.grid_spec.learning_rates == std::vector<double>{0.001});
  CHECK(c.grid_spec.optimizers ==
        std::vector<OptimizerKind>{OptimizerKind::SGD});
  CHECK(c.grid_spec.dense_layers == std::vector<int>{2});
  CHECK(c.tracker.lpc_order == 14);
  CHECK(c.tracker.max_gap_frames == 3);
  CHECK(c.source.min_pitch_hz == 80);
  CHECK(c.source.max_pitch_hz == 350);
}

TEST_CASE("--set overrides reach nested keys and parse as JSON scalars") {
  const RunConfig c = parse_run_config(
      "{}",
      {"seed=123", "architecture.cell=bigru", "train.learning_rate=0.001",
       "feature_set=tv6", "out_dir=o2", "tracker.lpc_order=10", "grid=true"},
      "test");
  CHECK(c.seed == 123);
  CHECK(c.architecture.cell == CellType::BIGRU);
  CHECK(c.train.learning_rate == 0.001);
  CHECK(c.feature_set == FeatureSet::TV6);
  CHECK(c.out_dir == "o2");  // bare word stays a string
  CHECK(c.tracker.lpc_order == 10);
  CHECK(c.grid);

  // Later overrides win.
  const RunConfig last =
      parse_run_config("{}", {"seed=1", "seed=2"}, "test");
  CHECK(last.seed == 2);
}

TEST_CASE("config parsing rejects malformed documents and keys") {
  CHECK_THROWS_WITH_AS(parse_run_config("{not json", {}, "test"),
                       doctest::Contains("invalid JSON"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("[]", {}, "test"),
                       doctest::Contains("must be an object"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("{\"bogus\": 1}", {}, "test"),
                       doctest::Contains("unknown config key 'bogus'"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_run_config("{\"architecture\": {\"depth\": 3}}", {}, "test"),
      doctest::Contains("architecture.depth"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{\"feature_set\": \"bogus\"}", {}, "test"),
                  ConfigError);
  CHECK_THROWS_AS(
      parse_run_config("{\"train\": {\"optimizer\": \"momentum\"}}", {},
                       "test"),
      ConfigError);
  CHECK_THROWS_AS(parse_run_config("{\"n_bins\": \"many\"}", {}, "test"),
                  ConfigError);

  CHECK_THROWS_WITH_AS(parse_run_config("{}", {"seed"}, "test"),
                       doctest::Contains("--set expects"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("{}", {"=5"}, "test"),
                       doctest::Contains("--set expects"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("{}", {"a..b=1"}, "test"),
                       doctest::Contains("empty key segment"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_run_config("{\"seed\": 3}", {"seed.x=1"}, "test"),
      doctest::Contains("not a config section"), ConfigError);
}

TEST_CASE("config files load with overrides applied") {
  test::TempDir dir("config");
  CHECK_THROWS_WITH_AS(load_run_config(dir.str("absent.json"), {}),
                       doctest::Contains("cannot open config"), ConfigError);

  test::write_file(dir.str("run.json"), "{\"seed\": 5, \"out_dir\": \"x\"}");
  const RunConfig c = load_run_config(dir.str("run.json"), {"seed=9"});
  CHECK(c.seed == 9);
  CHECK(c.out_dir == "x");
}

TEST_CASE("serialized configs parse back to the same document") {
  RunConfig c;
  c.manifest_path = "m.csv";
  c.participants_path = "p.csv";
  c.norm_table_path = "n.csv";
  c.feature_set = FeatureSet::TV6;
  c.tv_source = TvOrigin::FROM_FILE;
  c.seed = 31;
  c.architecture.cell = CellType::BIGRU;
  c.architecture.hidden_size = 10;
  c.train.optimizer = OptimizerKind::SGD;
  c.tracker.lpc_order = 11;

  const std::string text = serialize_run_config(c);
  CHECK(text.find("\"feature_set\": \"TV6\"") != std::string::npos);
  CHECK(text.find("\"tv_source\": \"file\"") != std::string::npos);

  const RunConfig back = parse_run_config(text, {}, "round-trip");
  CHECK(serialize_run_config(back) == text);
  CHECK(back.seed == 31);
  CHECK(back.architecture.hidden_size == 10);
  CHECK(back.train.optimizer == OptimizerKind::SGD);
  CHECK(back.tracker.lpc_order == 11);
}

TEST_CASE("config validation enforces ranges and required paths") {
  RunConfig ok;
  ok.manifest_path = "m.csv";
  ok.participants_path = "p.csv";
  ok.feature_set = FeatureSet::TV6;
  ok.tv_source = TvOrigin::FROM_FILE;  // no formant pathway, no norm table
  CHECK_NOTHROW(ok.validate());

  RunConfig c = ok;
  c.manifest_path.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ok;
  c.participants_path.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ok;
  c.out_dir.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ok;
  c.rhotic_tier.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ok;
  c.val_fraction = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ok;
  c.failure_threshold = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ok;
  c.n_bins = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ok;
  c.architecture.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ok;
  c.train.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ok;
  c.train.patience = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  // Formant-based feature sets need the norm table; so does any TV source
  // that may fall back to the formant stand-in.
  c = ok;
  c.feature_set = FeatureSet::FORMANTS5;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("norm_table"),
                       ConfigError);
  c = ok;
  c.tv_source = TvOrigin::AUTO;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("norm_table"),
                       ConfigError);
  c.norm_table_path = "n.csv";
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("run hashes cover settings and input bytes but not out_dir") {
  test::TempDir dir("hash");
  test::write_file(dir.str("m.csv"), "utterance_id,...\n");
  test::write_file(dir.str("p.csv"), "id,...\n");

  RunConfig c;
  c.manifest_path = dir.str("m.csv");
  c.participants_path = dir.str("p.csv");
  c.feature_set = FeatureSet::TV6;
  c.tv_source = TvOrigin::FROM_FILE;

  const std::string h = run_config_hash(c);
  CHECK(h.size() == 64);
  CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(run_config_hash(c) == h);

  RunConfig moved = c;
  moved.out_dir = "elsewhere";
  CHECK(run_config_hash(moved) == h);

  RunConfig reseeded = c;
  reseeded.seed = 8;
  CHECK(run_config_hash(reseeded) != h);

  RunConfig retracked = c;
  retracked.tracker.lpc_order += 2;
  CHECK(run_config_hash(retracked) != h);

  test::write_file(dir.str("m.csv"), "utterance_id,...\nchanged\n");
  CHECK(run_config_hash(c) != h);

  RunConfig missing = c;
  missing.manifest_path = dir.str("not-there.csv");
  CHECK(run_config_hash(missing).size() == 64);
}

TEST_CASE("worker cap follows the environment override") {
  EnvGuard guard("RHOTIC_MDX_THREADS");
  guard.set("3");
  CHECK(thread_cap() == 3);
  guard.set("1");
  CHECK(thread_cap() == 1);
  guard.set("0");
  CHECK_THROWS_AS(thread_cap(), ConfigError);
  guard.set("-2");
  CHECK_THROWS_AS(thread_cap(), ConfigError);
  guard.set("abc");
  CHECK_THROWS_AS(thread_cap(), ConfigError);
  guard.set("2x");
  CHECK_THROWS_AS(thread_cap(), ConfigError);
  guard.clear();
  CHECK(thread_cap() >= 1);
}

TEST_CASE("parallel loop visits every index once and propagates errors") {
  EnvGuard guard("RHOTIC_MDX_THREADS");
  for (const char* workers : {"1", "3"}) {
    guard.set(workers);

    std::vector<int> hits(37, 0);
    std::vector<int> value(37, 0);
    parallel_for_index(37, [&](int i) {
      hits[static_cast<std::size_t>(i)] += 1;
      value[static_cast<std::size_t>(i)] = i * i;
    });
    for (int i = 0; i < 37; ++i) {
      CHECK(hits[static_cast<std::size_t>(i)] == 1);
      CHECK(value[static_cast<std::size_t>(i)] == i * i);
    }

    bool called = false;
    parallel_for_index(0, [&](int) { called = true; });
    CHECK_FALSE(called);

    CHECK_THROWS_WITH_AS(parallel_for_index(12,
                                            [&](int i) {
                                              if (i == 5) {
                                                throw DataError("boom 5");
                                              }
                                            }),
                         doctest::Contains("boom"), DataError);
  }
}

TEST_CASE("fold reports round-trip, mapping missing AUROC to null") {
  test::TempDir dir("fold-report");

  FoldArtifacts a;
  a.report.participant_id = "P01";
  a.report.feature_set = "TV6";
  a.report.model = "bigru";
  a.report.f1_weighted = 0.9;
  a.report.precision_weighted = 0.8125;
  a.report.recall_weighted = 0.75;
  a.report.auroc = std::numeric_limits<double>::quiet_NaN();
  a.report.predictions.push_back(Prediction{"u1", 0.73, 1});
  a.report.predictions.push_back(Prediction{"u2", 0.21, 0});
  a.curve.push_back(EpochLoss{0.7, 0.68});
  a.curve.push_back(EpochLoss{0.5, 0.52});
  a.stopped_epoch = 7;
  a.best_epoch = 5;
  a.best_val_loss = 0.42;
  a.config_hash = "deadbeef";

  const std::string path = dir.str("fold_P01.json");
  save_fold_report(path, a);
  CHECK(test::read_file(path).find("\"auroc\": null") != std::string::npos);

  const FoldArtifacts b = load_fold_report(path);
  CHECK(b.report.participant_id == "P01");
  CHECK(b.report.feature_set == "TV6");
  CHECK(b.report.model == "bigru");
  CHECK(b.report.f1_weighted == 0.9);
  CHECK(b.report.precision_weighted == 0.8125);
  CHECK(b.report.recall_weighted == 0.75);
  CHECK(std::isnan(b.report.auroc));
  REQUIRE(b.report.predictions.size() == 2);
  CHECK(b.report.predictions[0].utterance_id == "u1");
  CHECK(b.report.predictions[0].score == 0.73);
  CHECK(b.report.predictions[1].label == 0);
  REQUIRE(b.curve.size() == 2);
  CHECK(b.curve[1].train == 0.5);
  CHECK(b.stopped_epoch == 7);
  CHECK(b.best_epoch == 5);
  CHECK(b.best_val_loss == 0.42);
  CHECK(b.config_hash == "deadbeef");

  a.report.auroc = 0.875;
  save_fold_report(path, a);
  CHECK(load_fold_report(path).report.auroc == 0.875);

  CHECK_THROWS_WITH_AS(load_fold_report(dir.str("absent.json")),
                       doctest::Contains("cannot open"), DataError);
  test::write_file(dir.str("bad.json"), "garbage");
  CHECK_THROWS_WITH_AS(load_fold_report(dir.str("bad.json")),
                       doctest::Contains("invalid JSON"), DataError);
  test::write_file(dir.str("partial.json"), "{\"participant_id\": \"P\"}");
  CHECK_THROWS_WITH_AS(load_fold_report(dir.str("partial.json")),
                       doctest::Contains("malformed fold report"), DataError);
}

TEST_CASE("binned CSVs round-trip exactly") {
  test::TempDir dir("binned");

  BinnedSegment seg;
  seg.channel_names = {"la", "tbcl"};
  seg.bins = {{0.25, -0.5}, {1.0 / 3.0, 0.75}, {-0.125, 0.5}};
  const std::string path = dir.str("seg.csv");
  save_binned_csv(path, seg);

  const std::string text = test::read_file(path);
  CHECK(text.rfind("bin,la,tbcl\n0,", 0) == 0);

  const BinnedSegment back = load_binned_csv(path);
  CHECK(back.channel_names == seg.channel_names);
  REQUIRE(back.bins.size() == 3);
  CHECK(back.bins == seg.bins);  // format_double output re-parses exactly
  CHECK(back.interval.start_s == 0.0);
  CHECK(back.interval.end_s == 1.0);

  test::write_file(dir.str("head.csv"), "idx,la\n0,0.5\n");
  CHECK_THROWS_WITH_AS(load_binned_csv(dir.str("head.csv")),
                       doctest::Contains("not a binned-segment CSV"),
                       DataError);
  test::write_file(dir.str("empty.csv"), "bin,la\n");
  CHECK_THROWS_WITH_AS(load_binned_csv(dir.str("empty.csv")),
                       doctest::Contains("no bins"), DataError);
  test::write_file(dir.str("bad.csv"), "bin,la\n0,zero\n");
  CHECK_THROWS_AS(load_binned_csv(dir.str("bad.csv")), ParseError);
}

TEST_CASE("extraction caches TV features and tolerates partial failure") {
  test::TempDir dir("extract-tv");
  fs::create_directories(dir.path() / "in");

  // Two participants; u4's TV file is deliberately missing.
  const struct {
    const char* uid;
    const char* pid;
    const char* rating;
    int frames;
    int grid;  // 0 none, 1 labeled, 2 blank tier
  } rows[] = {
      {"u1", "PA", "0.9", 40, 1}, {"u2", "PA", "0.1", 35, 2},
      {"u8", "PA", "0.1", 30, 0}, {"u9", "PA", "0.95", 31, 0},
      {"u3", "PB", "0.8", 32, 0}, {"u4", "PB", "0.2", 0, 0},
      {"u5", "PB", "0.15", 33, 0}, {"u6", "PB", "0.85", 34, 0},
      {"u7", "PB", "0.2", 36, 0},
  };

  std::ostringstream manifest;
  manifest << "utterance_id,participant_id,avg_rating,audio_path,"
              "textgrid_path,tv_path\n";
  int variant = 0;
  for (const auto& row : rows) {
    std::string tv = dir.str(std::string("in/") + row.uid + ".csv");
    if (row.frames > 0) {
      write_tv6_csv(tv, row.frames, variant++);
    }
    std::string grid;
    if (row.grid != 0) {
      grid = dir.str(std::string("in/") + row.uid + ".TextGrid");
      const double xmax = row.frames / 100.0;
      test::write_file(grid, rhotic_grid(xmax, 0.1, 0.3,
                                         row.grid == 1 ? "r" : ""));
    }
    manifest << row.uid << ',' << row.pid << ',' << row.rating << ",,"
             << grid << ',' << tv << '\n';
  }
  test::write_file(dir.str("manifest.csv"), manifest.str());
  test::write_file(dir.str("participants.csv"),
                   "id,age,sex,formant_ceiling_hz\n"
                   "PA,7.0,female,5500\nPB,8.5,male,5500\n");

  RunConfig cfg;
  cfg.manifest_path = dir.str("manifest.csv");
  cfg.participants_path = dir.str("participants.csv");
  cfg.out_dir = dir.str("out");
  cfg.feature_set = FeatureSet::TV6;
  cfg.tv_source = TvOrigin::FROM_FILE;
  cfg.failure_threshold = 0.2;
  cfg.n_bins = 5;
  cfg.val_fraction = 0.3;
  cfg.architecture.cell = CellType::BIGRU;
  cfg.architecture.recurrent_layers = 1;
  cfg.architecture.hidden_size = 3;
  cfg.architecture.dense_layers = 1;
  cfg.architecture.dropout = 0.0;
  cfg.train.learning_rate = 0.01;
  cfg.train.batch_size = 4;
  cfg.train.max_epochs = 3;

  const ExtractReport report = cmd_extract(cfg);
  CHECK(report.total == 9);
  CHECK(report.failed == 1);
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].rfind("u4:", 0) == 0);
  CHECK(contains_entry(report.warnings, "u2: no labeled rhotic interval"));

  const fs::path out(cfg.out_dir);
  for (const char* uid : {"u1", "u2", "u3", "u5", "u6", "u7", "u8", "u9"}) {
    CHECK(fs::exists(out / "features" / "TV6" / (std::string(uid) + ".csv")));
  }
  CHECK_FALSE(fs::exists(out / "features" / "TV6" / "u4.csv"));
  CHECK(fs::exists(out / "binned" / "u1.csv"));
  CHECK_FALSE(fs::exists(out / "binned" / "u2.csv"));
  CHECK_FALSE(fs::exists(out / "binned" / "u3.csv"));

  // Written features are the per-utterance z-normalized TV channels.
  const FrameSeries cached = load_series_csv(
      (out / "features" / "TV6" / "u1.csv").string(), FeatureSet::TV6);
  const FrameSeries expected = znorm_utterance(
      load_tv_track(dir.str("in/u1.csv")));
  REQUIRE(cached.frame_count() == expected.frame_count());
  CHECK(cached.channels == expected.channels);

  // Binned outputs hold the raw (pre-normalization) TV trajectory.
  RhoticInterval interval;
  interval.start_s = 0.1;
  interval.end_s = 0.3;
  const BinnedSegment expected_bins =
      bin_segment(load_tv_track(dir.str("in/u1.csv")), interval, 5);
  const BinnedSegment cached_bins =
      load_binned_csv((out / "binned" / "u1.csv").string());
  CHECK(cached_bins.channel_names == expected_bins.channel_names);
  CHECK(cached_bins.bins == expected_bins.bins);

  const json em = json::parse(test::read_file(
      (out / "extract_manifest.json").string()));
  CHECK(em.at("config_hash").get<std::string>() == run_config_hash(cfg));
  REQUIRE(em.at("failures").size() == 1);
  CHECK(em.at("failures")[0].at("utterance_id") == "u4");
  CHECK(em.at("outputs").contains("features/TV6/u1.csv"));
  CHECK(em.at("outputs").contains("config.json"));
  CHECK(fs::exists(out / "config.json"));

  SUBCASE("training consumes the cache and skips recorded failures") {
    const TrainReport tr = cmd_train(cfg);
    CHECK(tr.trained == 2);
    CHECK(tr.skipped == 0);
    CHECK(tr.fold_participants == std::vector<std::string>{"PA", "PB"});
    CHECK(fs::exists(out / "checkpoints" / "fold_PA.json"));
    CHECK(fs::exists(out / "reports" / "fold_PB.json"));
    const FoldArtifacts fa =
        load_fold_report((out / "reports" / "fold_PA.json").string());
    CHECK(fa.report.participant_id == "PA");
    CHECK(fa.report.feature_set == "TV6");
    CHECK(fa.config_hash == run_config_hash(cfg));
    // PA's test fold holds its four cached utterances; u4 never trained.
    CHECK(fa.report.predictions.size() == 4);
  }

  SUBCASE("training without an extracted cache is an error") {
    RunConfig fresh = cfg;
    fresh.out_dir = dir.str("never-extracted");
    CHECK_THROWS_WITH_AS(cmd_train(fresh),
                         doctest::Contains("run extract first"), DataError);
  }

  SUBCASE("a zero failure budget turns the partial failure fatal") {
    RunConfig strict = cfg;
    strict.out_dir = dir.str("strict-out");
    strict.failure_threshold = 0.0;
    CHECK_THROWS_WITH_AS(cmd_extract(strict),
                         doctest::Contains("failed extraction"), DataError);
    // The manifest of attempted work is still on disk for inspection.
    CHECK(fs::exists(fs::path(strict.out_dir) / "extract_manifest.json"));
  }

  SUBCASE("evaluate and analyze refuse empty run directories") {
    RunConfig fresh = cfg;
    fresh.out_dir = dir.str("empty-run");
    CHECK_THROWS_WITH_AS(cmd_evaluate(fresh),
                         doctest::Contains("no fold reports"), DataError);
    CHECK_THROWS_WITH_AS(cmd_analyze(fresh),
                         doctest::Contains("no binned segments"), DataError);
  }
}

TEST_CASE("extraction derives features from audio when asked") {
  test::TempDir dir("extract-audio");
  fs::create_directories(dir.path() / "in");

  // A synthetic schwa-like vowel at the analysis rate itself.
  test::VowelSpec vowel;
  vowel.f1 = 550.0;
  vowel.b1 = 60.0;
  vowel.f2 = 1400.0;
  vowel.b2 = 90.0;
  vowel.f3 = 2600.0;
  vowel.b3 = 120.0;
  const std::vector<double> samples = test::synth_vowel(vowel, 11000, 0.4, 120.0);
  test::write_wav16(dir.str("in/v1.wav"), samples, 11000);
  test::write_file(dir.str("in/v1.TextGrid"), rhotic_grid(0.4, 0.1, 0.3, "r"));

  test::write_file(dir.str("manifest.csv"),
                   "utterance_id,participant_id,avg_rating,audio_path,"
                   "textgrid_path,tv_path\n"
                   "v1,PC,0.9," + dir.str("in/v1.wav") + "," +
                       dir.str("in/v1.TextGrid") + ",\n");
  test::write_file(dir.str("participants.csv"),
                   "id,age,sex,formant_ceiling_hz\nPC,7.0,female,5500\n");
  std::ostringstream norms;
  norms << "age,sex,f1_mean,f1_sd,f2_mean,f2_sd,f3_mean,f3_sd\n";
  for (int age = 6; age <= 8; ++age) {
    norms << age << ",female,700,110,1800,180,3100,250\n";
  }
  test::write_file(dir.str("norms.csv"), norms.str());

  RunConfig cfg;
  cfg.manifest_path = dir.str("manifest.csv");
  cfg.participants_path = dir.str("participants.csv");
  cfg.norm_table_path = dir.str("norms.csv");
  cfg.failure_threshold = 0.0;
  cfg.n_bins = 4;

  SUBCASE("formant features with a raw-track cache") {
    cfg.feature_set = FeatureSet::FORMANTS5;
    cfg.out_dir = dir.str("out-formants");
    const ExtractReport report = cmd_extract(cfg);
    CHECK(report.failed == 0);

    const fs::path out(cfg.out_dir);
    const std::string raw =
        test::read_file((out / "cache" / "formants" / "v1.csv").string());
    CHECK(raw.rfind("time_s,f1,f2,f3,f3_minus_f2,delta_f3_minus_f2\n", 0) ==
          0);
    const FrameSeries feats = load_series_csv(
        (out / "features" / "FORMANTS5" / "v1.csv").string(),
        FeatureSet::FORMANTS5);
    CHECK(feats.channels.size() == 5);
    CHECK(feats.frame_count() >= 35);  // 0.4 s at 10 ms hops
  }

  SUBCASE("pseudo tract variables when no TV file exists") {
    cfg.feature_set = FeatureSet::TV6;
    cfg.tv_source = TvOrigin::PSEUDO;
    cfg.out_dir = dir.str("out-pseudo");
    const ExtractReport report = cmd_extract(cfg);
    CHECK(report.failed == 0);

    const fs::path out(cfg.out_dir);
    const FrameSeries feats = load_series_csv(
        (out / "features" / "TV6" / "v1.csv").string(), FeatureSet::TV6);
    CHECK(feats.channels.size() == 6);
    const BinnedSegment bins =
        load_binned_csv((out / "binned" / "v1.csv").string());
    CHECK(bins.channel_names.size() == 6);
    CHECK(bins.bins.size() == 4);
  }

  SUBCASE("source features extend TV files to the nine-channel set") {
    write_tv6_csv(dir.str("in/v1_tv.csv"), 38, 3);
    test::write_file(dir.str("manifest.csv"),
                     "utterance_id,participant_id,avg_rating,audio_path,"
                     "textgrid_path,tv_path\n"
                     "v1,PC,0.9," + dir.str("in/v1.wav") + ",," +
                         dir.str("in/v1_tv.csv") + "\n");
    cfg.feature_set = FeatureSet::TV9;
    cfg.tv_source = TvOrigin::FROM_FILE;
    cfg.out_dir = dir.str("out-tv9");
    const ExtractReport report = cmd_extract(cfg);
    CHECK(report.failed == 0);

    const FrameSeries feats = load_series_csv(
        (fs::path(cfg.out_dir) / "features" / "TV9" / "v1.csv").string(),
        FeatureSet::TV9);
    CHECK(feats.channels.size() == 9);
    // Truncated to the shorter of the TV track and the source frames.
    CHECK(feats.frame_count() <= 38);
    CHECK(feats.frame_count() >= 30);
  }
}

TEST_CASE("train, evaluate, and analyze compose over a generated corpus") {
  test::TempDir dir("e2e");
  test::CorpusSpec spec;
  spec.participants = 3;
  spec.utterances_per_class = 3;
  spec.min_frames = 60;
  spec.max_frames = 90;
  spec.formants_run = "runA";
  spec.tv_run = "runB";
  const test::CorpusPaths paths = test::generate_corpus(dir.path(), spec);

  RunConfig cfg;
  cfg.manifest_path = paths.manifest;
  cfg.participants_path = paths.participants;
  cfg.norm_table_path = paths.norm_table;
  cfg.out_dir = paths.tv_run;
  cfg.feature_set = FeatureSet::TV6;
  cfg.tv_source = TvOrigin::FROM_FILE;
  cfg.val_fraction = 0.2;
  cfg.architecture.cell = CellType::BIGRU;
  cfg.architecture.recurrent_layers = 1;
  cfg.architecture.hidden_size = 4;
  cfg.architecture.dense_layers = 1;
  cfg.architecture.dropout = 0.0;
  cfg.train.learning_rate = 0.01;
  cfg.train.batch_size = 8;
  cfg.train.optimizer = OptimizerKind::ADAM;
  cfg.train.max_epochs = 6;
  cfg.train.patience = 5;

  const TrainReport first = cmd_train(cfg);
  CHECK(first.trained == 3);
  CHECK(first.skipped == 0);
  CHECK(first.fold_participants ==
        std::vector<std::string>{"P01", "P02", "P03"});

  const fs::path out(cfg.out_dir);
  const std::string hash = run_config_hash(cfg);
  for (const char* p : {"P01", "P02", "P03"}) {
    const std::string stem = std::string("fold_") + p + ".json";
    CHECK(fs::exists(out / "checkpoints" / stem));
    const FoldArtifacts fa =
        load_fold_report((out / "reports" / stem).string());
    CHECK(fa.config_hash == hash);
    CHECK(fa.report.predictions.size() == 6);
    CHECK(fa.stopped_epoch == static_cast<int>(fa.curve.size()));
    const Checkpoint ck =
        load_checkpoint((out / "checkpoints" / stem).string());
    CHECK(ck.config_hash == hash);
  }

  // A rerun under the same configuration touches nothing.
  const TrainReport second = cmd_train(cfg);
  CHECK(second.trained == 0);
  CHECK(second.skipped == 3);

  cmd_evaluate(cfg);
  const CsvTable metrics =
      read_csv((out / "eval" / "fold_metrics.csv").string());
  CHECK(metrics.header.size() == 6);
  CHECK(metrics.rows.size() == 3);
  CHECK(fs::exists(out / "eval" / "age_auroc.csv"));
  const json agg =
      json::parse(test::read_file((out / "eval" / "aggregate.json").string()));
  REQUIRE(agg.at("feature_sets").contains("TV6"));
  const json& block = agg.at("feature_sets").at("TV6");
  CHECK(block.at("n_folds") == 3);
  CHECK(block.at("f1").at("mean").get<double>() >= 0.0);
  CHECK(block.at("f1").at("mean").get<double>() <= 1.0);
  CHECK_FALSE(block.at("spearman_age_auroc").is_null());
  CHECK(block.at("spearman_age_auroc").at("n") == 3);

  cmd_analyze(cfg);
  const CsvTable effects =
      read_csv((out / "analysis" / "effect_sizes.csv").string());
  REQUIRE(effects.rows.size() == 6);  // one row per TV channel
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < effects.rows.size(); ++i) {
    CHECK(effects.rows[i][0] == std::to_string(i + 1));
    const double d = std::abs(std::stod(effects.rows[i][2]));
    CHECK(d <= prev + 1e-12);
    prev = d;
  }
  const CsvTable traj =
      read_csv((out / "analysis" / "trajectories.csv").string());
  CHECK(traj.header ==
        std::vector<std::string>{"bin", "channel", "class", "mean", "ci_low",
                                 "ci_high"});
  CHECK(traj.rows.size() == 10 * 6 * 2);

  // The same configuration in a fresh directory reproduces the reports
  // byte for byte (the hash ignores out_dir).
  test::CorpusSpec spec2 = spec;
  spec2.formants_run = "runA2";
  spec2.tv_run = "runB2";
  const test::CorpusPaths paths2 = test::generate_corpus(dir.path(), spec2);
  RunConfig cfg2 = cfg;
  cfg2.out_dir = paths2.tv_run;
  const TrainReport rerun = cmd_train(cfg2);
  CHECK(rerun.trained == 3);
  for (const char* p : {"P01", "P02", "P03"}) {
    const std::string stem = std::string("fold_") + p + ".json";
    CHECK(test::read_file((out / "reports" / stem).string()) ==
          test::read_file((fs::path(cfg2.out_dir) / "reports" / stem)
                              .string()));
    CHECK(test::read_file((out / "checkpoints" / stem).string()) ==
          test::read_file((fs::path(cfg2.out_dir) / "checkpoints" / stem)
                              .string()));
  }

  // Changing the seed invalidates the cached folds and retrains them.
  RunConfig reseeded = cfg;
  reseeded.seed = 8;
  const TrainReport retrained = cmd_train(reseeded);
  CHECK(retrained.trained == 3);
  CHECK(retrained.skipped == 0);
}
