// rmdx/rhotic_mdx.cpp

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

#include <cctype>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rmdx/errors.hpp"
#include "rmdx/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string feature_set;
  CLI::Option* out_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* feature_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "JSON run-configuration file");
  cmd->add_option("--set", args.overrides,
                  "Override a config value, e.g. --set train.batch_size=32");
  args.out_opt = cmd->add_option("--out", args.out_dir, "Output directory");
  args.seed_opt = cmd->add_option("--seed", args.seed, "Base random seed");
  args.feature_opt = cmd->add_option(
      "--feature-set", args.feature_set,
      "Feature set: FORMANTS5, TV6, TV9, or FUSED14");
}

rmdx::RunConfig build_config(const CommonArgs& args) {
  rmdx::RunConfig config =
      args.config_path.empty()
          ? rmdx::parse_run_config("{}", args.overrides, "<defaults>")
          : rmdx::load_run_config(args.config_path, args.overrides);
  if (args.out_opt != nullptr && *args.out_opt) config.out_dir = args.out_dir;
  if (args.seed_opt != nullptr && *args.seed_opt) config.seed = args.seed;
  if (args.feature_opt != nullptr && *args.feature_opt) {
    std::string name = args.feature_set;
    for (char& c : name) {
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    config.feature_set = rmdx::feature_set_from_name(name);
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mispronunciation detection for /r/ in child speech"};
  app.require_subcommand(1);

  CommonArgs extract_args, train_args, eval_args, analyze_args;
  CLI::App* extract =
      app.add_subcommand("extract", "Extract feature CSVs from the corpus");
  add_common(extract, extract_args);
  CLI::App* train =
      app.add_subcommand("train", "Train LOPO folds on the feature cache");
  add_common(train, train_args);
  bool grid_flag = false;
  train->add_flag("--grid", grid_flag,
                  "Exhaustive hyperparameter search before the final folds");
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "Aggregate fold reports into tables");
  add_common(evaluate, eval_args);
  CLI::App* analyze = app.add_subcommand(
      "analyze", "Univariate effect sizes over binned TV trajectories");
  add_common(analyze, analyze_args);
  CLI::App* version = app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (version->parsed()) {
      std::cout << "rhotic-mdx " << rmdx::kVersion << "\n";
      return 0;
    }
    if (extract->parsed()) {
      const rmdx::RunConfig config = build_config(extract_args);
      const rmdx::ExtractReport report = rmdx::cmd_extract(config);
      for (const auto& line : report.warnings) {
        std::cerr << "warning: " << line << "\n";
      }
      for (const auto& line : report.failures) {
        std::cerr << "failed: " << line << "\n";
      }
      std::cout << "extracted " << (report.total - report.failed) << " of "
                << report.total << " utterances into " << config.out_dir
                << "\n";
      return 0;
    }
    if (train->parsed()) {
      rmdx::RunConfig config = build_config(train_args);
      if (grid_flag) config.grid = true;
      const rmdx::TrainReport report = rmdx::cmd_train(config);
      std::cout << "trained " << report.trained << " fold(s), skipped "
                << report.skipped << " up-to-date fold(s) in " << config.out_dir
                << "\n";
      return 0;
    }
    if (evaluate->parsed()) {
      const rmdx::RunConfig config = build_config(eval_args);
      rmdx::cmd_evaluate(config);
      std::cout << "wrote " << config.out_dir << "/eval/aggregate.json, "
                << "fold_metrics.csv, age_auroc.csv\n";
      return 0;
    }
    if (analyze->parsed()) {
      const rmdx::RunConfig config = build_config(analyze_args);
      rmdx::cmd_analyze(config);
      std::cout << "wrote " << config.out_dir
                << "/analysis/effect_sizes.csv, trajectories.csv\n";
      return 0;
    }
  } catch (const rmdx::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const rmdx::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
