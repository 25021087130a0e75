// rmdx/pipeline.cpp

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

#include "rmdx/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rmdx/audio.hpp"
#include "rmdx/csv.hpp"
#include "rmdx/dataset.hpp"
#include "rmdx/errors.hpp"
#include "rmdx/hashing.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rmdx {

const char* tv_origin_name(TvOrigin origin) {
  switch (origin) {
    case TvOrigin::AUTO:
      return "auto";
    case TvOrigin::FROM_FILE:
      return "file";
    default:
      return "pseudo";
  }
}

TvOrigin tv_origin_from_name(const std::string& name) {
  if (name == "auto") return TvOrigin::AUTO;
  if (name == "file") return TvOrigin::FROM_FILE;
  if (name == "pseudo") return TvOrigin::PSEUDO;
  throw ConfigError("unknown tv_source '" + name + "' (auto|file|pseudo)");
}

namespace {

// ---------------------------------------------------------------- config --

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& origin, const std::string& scope) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (allowed.find(key) == allowed.end()) {
      throw ConfigError(origin + ": unknown config key '" +
                        (scope.empty() ? key : scope + "." + key) + "'");
    }
  }
}

json tracker_to_json(const TrackerConfig& t) {
  return json{{"preemphasis_hz", t.preemphasis_hz},
              {"window_s", t.window_s},
              {"hop_s", t.hop_s},
              {"lpc_order", t.lpc_order},
              {"min_freq_hz", t.min_freq_hz},
              {"ceiling_margin_hz", t.ceiling_margin_hz},
              {"max_bandwidth_hz", t.max_bandwidth_hz},
              {"max_gap_frames", t.max_gap_frames}};
}

json source_to_json(const SourceConfig& s) {
  return json{{"window_s", s.window_s},
              {"hop_s", s.hop_s},
              {"min_pitch_hz", s.min_pitch_hz},
              {"max_pitch_hz", s.max_pitch_hz},
              {"voicing_threshold", s.voicing_threshold}};
}

json grid_to_json(const GridSpec& g) {
  std::vector<std::string> opts;
  for (const auto o : g.optimizers) opts.emplace_back(optimizer_name(o));
  return json{{"learning_rates", g.learning_rates},
              {"batch_sizes", g.batch_sizes},
              {"optimizers", opts},
              {"recurrent_layers", g.recurrent_layers},
              {"dense_layers", g.dense_layers},
              {"dropouts", g.dropouts}};
}

json config_to_json(const RunConfig& c) {
  return json{
      {"manifest", c.manifest_path},
      {"participants", c.participants_path},
      {"norm_table", c.norm_table_path},
      {"out_dir", c.out_dir},
      {"feature_set", feature_set_name(c.feature_set)},
      {"tv_source", tv_origin_name(c.tv_source)},
      {"rhotic_tier", c.rhotic_tier},
      {"seed", c.seed},
      {"val_fraction", c.val_fraction},
      {"failure_threshold", c.failure_threshold},
      {"n_bins", c.n_bins},
      {"grid", c.grid},
      {"architecture",
       json{{"cell", cell_type_name(c.architecture.cell)},
            {"recurrent_layers", c.architecture.recurrent_layers},
            {"hidden_size", c.architecture.hidden_size},
            {"dense_layers", c.architecture.dense_layers},
            {"dense_width", c.architecture.dense_width},
            {"dropout", c.architecture.dropout}}},
      {"train",
       json{{"learning_rate", c.train.learning_rate},
            {"batch_size", c.train.batch_size},
            {"optimizer", optimizer_name(c.train.optimizer)},
            {"max_epochs", c.train.max_epochs},
            {"patience", c.train.patience}}},
      {"grid_spec", grid_to_json(c.grid_spec)},
      {"tracker", tracker_to_json(c.tracker)},
      {"source", source_to_json(c.source)}};
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

RunConfig config_from_json(const json& j, const std::string& origin) {
  RunConfig c;
  if (!j.is_object()) throw ConfigError(origin + ": config must be an object");
  check_keys(j,
             {"manifest", "participants", "norm_table", "out_dir",
              "feature_set", "tv_source", "rhotic_tier", "seed",
              "val_fraction", "failure_threshold", "n_bins", "grid",
              "architecture", "train", "grid_spec", "tracker", "source"},
             origin, "");
  try {
    read_field(j, "manifest", c.manifest_path);
    read_field(j, "participants", c.participants_path);
    read_field(j, "norm_table", c.norm_table_path);
    read_field(j, "out_dir", c.out_dir);
    if (j.contains("feature_set")) {
      c.feature_set =
          feature_set_from_name(upper(j.at("feature_set").get<std::string>()));
    }
    if (j.contains("tv_source")) {
      c.tv_source = tv_origin_from_name(j.at("tv_source").get<std::string>());
    }
    read_field(j, "rhotic_tier", c.rhotic_tier);
    read_field(j, "seed", c.seed);
    read_field(j, "val_fraction", c.val_fraction);
    read_field(j, "failure_threshold", c.failure_threshold);
    read_field(j, "n_bins", c.n_bins);
    read_field(j, "grid", c.grid);

    if (j.contains("architecture")) {
      const json& a = j.at("architecture");
      check_keys(a,
                 {"cell", "recurrent_layers", "hidden_size", "dense_layers",
                  "dense_width", "dropout"},
                 origin, "architecture");
      if (a.contains("cell")) {
        c.architecture.cell = cell_type_from_name(a.at("cell").get<std::string>());
      }
      read_field(a, "recurrent_layers", c.architecture.recurrent_layers);
      read_field(a, "hidden_size", c.architecture.hidden_size);
      read_field(a, "dense_layers", c.architecture.dense_layers);
      read_field(a, "dense_width", c.architecture.dense_width);
      read_field(a, "dropout", c.architecture.dropout);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t,
                 {"learning_rate", "batch_size", "optimizer", "max_epochs",
                  "patience"},
                 origin, "train");
      read_field(t, "learning_rate", c.train.learning_rate);
      read_field(t, "batch_size", c.train.batch_size);
      if (t.contains("optimizer")) {
        c.train.optimizer =
            optimizer_from_name(t.at("optimizer").get<std::string>());
      }
      read_field(t, "max_epochs", c.train.max_epochs);
      read_field(t, "patience", c.train.patience);
    }
    if (j.contains("grid_spec")) {
      const json& g = j.at("grid_spec");
      check_keys(g,
                 {"learning_rates", "batch_sizes", "optimizers",
                  "recurrent_layers", "dense_layers", "dropouts"},
                 origin, "grid_spec");
      read_field(g, "learning_rates", c.grid_spec.learning_rates);
      read_field(g, "batch_sizes", c.grid_spec.batch_sizes);
      if (g.contains("optimizers")) {
        c.grid_spec.optimizers.clear();
        for (const auto& name : g.at("optimizers")) {
          c.grid_spec.optimizers.push_back(
              optimizer_from_name(name.get<std::string>()));
        }
      }
      read_field(g, "recurrent_layers", c.grid_spec.recurrent_layers);
      read_field(g, "dense_layers", c.grid_spec.dense_layers);
      read_field(g, "dropouts", c.grid_spec.dropouts);
    }
    if (j.contains("tracker")) {
      const json& t = j.at("tracker");
      check_keys(t,
                 {"preemphasis_hz", "window_s", "hop_s", "lpc_order",
                  "min_freq_hz", "ceiling_margin_hz", "max_bandwidth_hz",
                  "max_gap_frames"},
                 origin, "tracker");
      read_field(t, "preemphasis_hz", c.tracker.preemphasis_hz);
      read_field(t, "window_s", c.tracker.window_s);
      read_field(t, "hop_s", c.tracker.hop_s);
      read_field(t, "lpc_order", c.tracker.lpc_order);
      read_field(t, "min_freq_hz", c.tracker.min_freq_hz);
      read_field(t, "ceiling_margin_hz", c.tracker.ceiling_margin_hz);
      read_field(t, "max_bandwidth_hz", c.tracker.max_bandwidth_hz);
      read_field(t, "max_gap_frames", c.tracker.max_gap_frames);
    }
    if (j.contains("source")) {
      const json& s = j.at("source");
      check_keys(s,
                 {"window_s", "hop_s", "min_pitch_hz", "max_pitch_hz",
                  "voicing_threshold"},
                 origin, "source");
      read_field(s, "window_s", c.source.window_s);
      read_field(s, "hop_s", c.source.hop_s);
      read_field(s, "min_pitch_hz", c.source.min_pitch_hz);
      read_field(s, "max_pitch_hz", c.source.max_pitch_hz);
      read_field(s, "voicing_threshold", c.source.voicing_threshold);
    }
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

// ----------------------------------------------------------- small utils --

std::string safe_name(const std::string& id) {
  std::string out;
  out.reserve(id.size());
  for (const char ch : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) != 0 ||
                    ch == '_' || ch == '-' || ch == '.';
    out.push_back(ok ? ch : '_');
  }
  return out;
}

std::string utc_now() {
  const std::time_t tt =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  return j;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isspace(c) != 0;
  });
}

FrameSeries truncate_series(FrameSeries s, std::size_t n) {
  for (auto& channel : s.channels) {
    if (channel.size() > n) channel.resize(n);
  }
  return s;
}

FrameSeries tv6_view(const FrameSeries& tv) {
  if (tv.id == FeatureSet::TV6) return tv;
  FrameSeries out = tv;
  out.id = FeatureSet::TV6;
  out.channel_names = feature_set_channel_names(FeatureSet::TV6);
  out.channels.resize(6);
  return out;
}

std::map<std::string, ParticipantProfile> participant_registry(
    const std::string& path) {
  std::map<std::string, ParticipantProfile> registry;
  for (auto& p : load_participants(path)) registry[p.id] = p;
  return registry;
}

double json_double_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN()
                     : j.get<double>();
}

json nan_to_null(double v) {
  if (std::isfinite(v)) return json(v);
  return json();
}

}  // namespace

void RunConfig::validate() const {
  if (manifest_path.empty()) throw ConfigError("config: manifest path not set");
  if (participants_path.empty()) {
    throw ConfigError("config: participants path not set");
  }
  if (out_dir.empty()) throw ConfigError("config: out_dir not set");
  if (rhotic_tier.empty()) throw ConfigError("config: rhotic_tier empty");
  if (val_fraction <= 0.0 || val_fraction >= 0.5) {
    throw ConfigError("config: val_fraction must be in (0, 0.5)");
  }
  if (failure_threshold < 0.0 || failure_threshold > 1.0) {
    throw ConfigError("config: failure_threshold must be in [0, 1]");
  }
  if (n_bins < 1) throw ConfigError("config: n_bins < 1");
  Architecture arch = architecture;
  arch.input_channels = feature_set_channels(feature_set);
  arch.validate();
  if (train.learning_rate <= 0.0) {
    throw ConfigError("config: learning_rate must be > 0");
  }
  if (train.batch_size < 1) throw ConfigError("config: batch_size < 1");
  if (train.max_epochs < 1) throw ConfigError("config: max_epochs < 1");
  if (train.patience < 1) throw ConfigError("config: patience < 1");
  const bool wants_formants = feature_set == FeatureSet::FORMANTS5 ||
                              feature_set == FeatureSet::FUSED14 ||
                              tv_source != TvOrigin::FROM_FILE;
  if (wants_formants && norm_table_path.empty()) {
    throw ConfigError(
        "config: norm_table path required for formant-based features");
  }
}

RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides,
                           const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects KEY.PATH=VALUE, got '" + item + "'");
    }
    const std::string path = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // bare word: treat as a string
    }
    json* at = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(
          start, dot == std::string::npos ? std::string::npos : dot - start);
      if (key.empty()) {
        throw ConfigError("--set: empty key segment in '" + path + "'");
      }
      if (dot == std::string::npos) {
        (*at)[key] = parsed;
        break;
      }
      at = &(*at)[key];
      if (!at->is_object() && !at->is_null()) {
        throw ConfigError("--set: '" + key + "' is not a config section");
      }
      start = dot + 1;
    }
  }
  return config_from_json(j, origin);
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), overrides, path);
}

std::string serialize_run_config(const RunConfig& config) {
  return config_to_json(config).dump(1) + "\n";
}

std::string run_config_hash(const RunConfig& config) {
  json j = config_to_json(config);
  j.erase("out_dir");  // relocating a run does not invalidate it
  j["inputs"] = json::object();
  for (const std::string& path :
       {config.manifest_path, config.participants_path,
        config.norm_table_path}) {
    if (!path.empty() && fs::exists(path)) {
      j["inputs"][path] = sha256_file(path);
    }
  }
  j["version"] = kVersion;
  return sha256_hex(j.dump());
}

// -------------------------------------------------------------- parallel --

int thread_cap() {
  const char* env = std::getenv("RHOTIC_MDX_THREADS");
  if (env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == nullptr || *end != '\0' || v < 1) {
      throw ConfigError("RHOTIC_MDX_THREADS must be a positive integer");
    }
    return static_cast<int>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for_index(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int workers = std::min(thread_cap(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          next.store(n);  // stop handing out further work
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// --------------------------------------------------------------- extract --

namespace {

struct UtteranceOutcome {
  bool ok = true;
  std::string error;
  std::vector<std::string> written;  // paths relative to out_dir
  std::vector<std::string> warnings;
};

struct ExtractContext {
  const RunConfig* config = nullptr;
  const NormTable* norms = nullptr;  // null when no formant pathway is active
  fs::path out;
};

// All per-utterance work: formant tracking, TV resolution, feature-CSV and
// binned-CSV emission. Throws Error subclasses on per-utterance failure.
void process_utterance(const ExtractContext& ctx, const UtteranceRecord& rec,
                       const ParticipantProfile& profile,
                       UtteranceOutcome& outcome) {
  const RunConfig& cfg = *ctx.config;
  const std::string stem = safe_name(rec.utterance_id) + ".csv";

  AudioBuffer audio;
  bool audio_loaded = false;
  auto get_audio = [&]() -> const AudioBuffer& {
    if (!audio_loaded) {
      if (rec.audio_path.empty()) {
        throw DataError("no audio path in manifest");
      }
      audio = read_wav(rec.audio_path);
      audio_loaded = true;
    }
    return audio;
  };

  FrameSeries formants5;
  bool have_formants = false;
  auto get_formants = [&]() -> const FrameSeries& {
    if (!have_formants) {
      if (ctx.norms == nullptr) {
        throw DataError("norm table not loaded for formant pathway");
      }
      const FormantTrack track =
          track_formants(get_audio(), profile, cfg.tracker);
      const TransformTrack transforms = formant_transforms(track);
      const fs::path rel = fs::path("cache") / "formants" / stem;
      save_formant_track_csv((ctx.out / rel).string(), track, transforms);
      outcome.written.push_back(rel.generic_string());
      formants5 = normalize_formants(track, transforms, *ctx.norms, profile);
      have_formants = true;
    }
    return formants5;
  };

  auto attach_source = [&](const FrameSeries& tv6) {
    const FrameSeries src = estimate_source_features(get_audio(), cfg.source);
    const std::size_t n = std::min(tv6.frame_count(), src.frame_count());
    if (n < 2) throw DataError("too few frames for source features");
    return concat_series(truncate_series(tv6, n), truncate_series(src, n),
                         FeatureSet::TV9);
  };

  const bool want_tv9 = cfg.feature_set == FeatureSet::TV9 ||
                        cfg.feature_set == FeatureSet::FUSED14;
  const bool want_tv = want_tv9 || cfg.feature_set == FeatureSet::TV6 ||
                       !rec.textgrid_path.empty();

  FrameSeries tv_raw;  // TV6 or TV9, pre-normalization
  bool have_tv = false;
  if (want_tv) {
    TvOrigin origin = cfg.tv_source;
    if (origin == TvOrigin::AUTO) {
      origin = rec.tv_path.empty() ? TvOrigin::PSEUDO : TvOrigin::FROM_FILE;
    }
    if (origin == TvOrigin::FROM_FILE) {
      if (rec.tv_path.empty()) {
        if (cfg.feature_set == FeatureSet::FORMANTS5) {
          outcome.warnings.push_back(rec.utterance_id +
                                     ": no TV file; binned output skipped");
        } else {
          throw DataError("tv_source=file but manifest has no tv_path");
        }
      } else {
        tv_raw = load_tv_track(rec.tv_path);
        if (want_tv9 && tv_raw.id == FeatureSet::TV6) {
          tv_raw = attach_source(tv_raw);
        }
        have_tv = true;
      }
    } else {
      tv_raw = pseudo_invert(get_formants());
      if (want_tv9) tv_raw = attach_source(tv_raw);
      have_tv = true;
    }
  }

  // Feature series written for the configured set; this is exactly what
  // training consumes.
  FrameSeries features;
  switch (cfg.feature_set) {
    case FeatureSet::FORMANTS5:
      features = get_formants();
      break;
    case FeatureSet::TV6:
      features = znorm_utterance(tv6_view(tv_raw));
      break;
    case FeatureSet::TV9:
      features = znorm_utterance(tv_raw);
      break;
    case FeatureSet::FUSED14: {
      const FrameSeries& f5 = get_formants();
      const FrameSeries tv9n = znorm_utterance(tv_raw);
      const std::size_t n = std::min(f5.frame_count(), tv9n.frame_count());
      if (n < 1) throw DataError("no overlapping frames for fused features");
      features = concat_series(truncate_series(f5, n),
                               truncate_series(tv9n, n), FeatureSet::FUSED14);
      break;
    }
    default:
      throw ConfigError("unsupported feature set for extraction");
  }
  {
    const fs::path rel =
        fs::path("features") / feature_set_name(cfg.feature_set) / stem;
    save_series_csv((ctx.out / rel).string(), features);
    outcome.written.push_back(rel.generic_string());
  }

  // Binned raw-TV trajectories for the univariate analysis, when the
  // utterance has an annotated rhotic interval.
  if (!rec.textgrid_path.empty() && have_tv) {
    const TextGrid grid = read_textgrid(rec.textgrid_path);
    for (const auto& w : grid.warnings) {
      outcome.warnings.push_back(rec.utterance_id + ": " + w);
    }
    const auto tier =
        std::find_if(grid.tiers.begin(), grid.tiers.end(),
                     [&](const IntervalTier& t) {
                       return t.name == cfg.rhotic_tier;
                     });
    int labeled = 0;
    if (tier != grid.tiers.end()) {
      for (const auto& iv : tier->intervals) {
        if (!is_blank(iv.text)) ++labeled;
      }
    }
    if (labeled == 0 && tier != grid.tiers.end()) {
      outcome.warnings.push_back(rec.utterance_id +
                                 ": no labeled rhotic interval");
    } else {
      // Missing tier or multiple labels are annotation errors.
      const RhoticInterval interval =
          extract_rhotic_interval(grid, cfg.rhotic_tier);
      const BinnedSegment segment =
          bin_segment(tv6_view(tv_raw), interval, cfg.n_bins);
      const fs::path rel = fs::path("binned") / stem;
      save_binned_csv((ctx.out / rel).string(), segment);
      outcome.written.push_back(rel.generic_string());
    }
  }
}

}  // namespace

ExtractReport cmd_extract(const RunConfig& config) {
  config.validate();
  const std::vector<UtteranceRecord> records =
      load_manifest(config.manifest_path);
  const auto registry = participant_registry(config.participants_path);
  for (const auto& rec : records) {
    if (registry.find(rec.participant_id) == registry.end()) {
      throw DataError("manifest references unknown participant '" +
                      rec.participant_id + "'");
    }
  }
  {
    // Sanitized file stems must stay unique.
    std::set<std::string> stems;
    for (const auto& rec : records) {
      if (!stems.insert(safe_name(rec.utterance_id)).second) {
        throw DataError("utterance ids collide after filename sanitization: " +
                        rec.utterance_id);
      }
    }
  }

  const bool formant_pathway = config.feature_set == FeatureSet::FORMANTS5 ||
                               config.feature_set == FeatureSet::FUSED14 ||
                               config.tv_source != TvOrigin::FROM_FILE;
  NormTable norms;
  if (formant_pathway) norms = load_norm_table(config.norm_table_path);

  const fs::path out(config.out_dir);
  fs::create_directories(out / "cache" / "formants");
  fs::create_directories(out / "features" / feature_set_name(config.feature_set));
  fs::create_directories(out / "binned");

  ExtractContext ctx;
  ctx.config = &config;
  ctx.norms = formant_pathway ? &norms : nullptr;
  ctx.out = out;

  std::vector<UtteranceOutcome> outcomes(records.size());
  parallel_for_index(static_cast<int>(records.size()), [&](int i) {
    auto& outcome = outcomes[static_cast<std::size_t>(i)];
    const auto& rec = records[static_cast<std::size_t>(i)];
    try {
      process_utterance(ctx, rec, registry.at(rec.participant_id), outcome);
    } catch (const Error& e) {
      outcome.ok = false;
      outcome.error = e.what();
      // Drop partial outputs so a failed utterance leaves no trace.
      for (const auto& rel : outcome.written) {
        std::error_code ec;
        fs::remove(out / rel, ec);
      }
      outcome.written.clear();
    }
  });

  ExtractReport report;
  report.total = static_cast<int>(records.size());
  json outputs = json::object();
  json failures = json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& outcome = outcomes[i];
    for (const auto& w : outcome.warnings) report.warnings.push_back(w);
    if (!outcome.ok) {
      ++report.failed;
      report.failures.push_back(records[i].utterance_id + ": " +
                                outcome.error);
      failures.push_back(json{{"utterance_id", records[i].utterance_id},
                              {"error", outcome.error}});
      continue;
    }
    for (const auto& rel : outcome.written) {
      outputs[rel] = sha256_file((out / rel).string());
    }
  }

  const std::string config_text = serialize_run_config(config);
  write_text_file(out / "config.json", config_text);
  outputs["config.json"] = sha256_hex(config_text);

  json manifest;
  manifest["version"] = kVersion;
  manifest["created_utc"] = utc_now();
  manifest["config_hash"] = run_config_hash(config);
  manifest["outputs"] = outputs;
  manifest["failures"] = failures;
  manifest["warnings"] = report.warnings;
  write_text_file(out / "extract_manifest.json", manifest.dump(1) + "\n");

  if (report.failed >
      config.failure_threshold * static_cast<double>(report.total)) {
    throw DataError(std::to_string(report.failed) + " of " +
                    std::to_string(report.total) +
                    " utterances failed extraction (threshold " +
                    format_double(config.failure_threshold) + ")");
  }
  return report;
}

// ----------------------------------------------------------------- train --

namespace {

json fold_artifacts_to_json(const FoldArtifacts& a) {
  json preds = json::array();
  for (const auto& p : a.report.predictions) {
    preds.push_back(json{{"utterance_id", p.utterance_id},
                         {"score", p.score},
                         {"label", p.label}});
  }
  json curve = json::array();
  for (const auto& e : a.curve) {
    curve.push_back(json{{"train", e.train}, {"validation", e.validation}});
  }
  return json{{"participant_id", a.report.participant_id},
              {"feature_set", a.report.feature_set},
              {"model", a.report.model},
              {"f1_weighted", a.report.f1_weighted},
              {"precision_weighted", a.report.precision_weighted},
              {"recall_weighted", a.report.recall_weighted},
              {"auroc", nan_to_null(a.report.auroc)},
              {"predictions", preds},
              {"curve", curve},
              {"stopped_epoch", a.stopped_epoch},
              {"best_epoch", a.best_epoch},
              {"best_val_loss", a.best_val_loss},
              {"config_hash", a.config_hash}};
}

FoldArtifacts fold_artifacts_from_json(const json& j, const std::string& origin) {
  try {
    FoldArtifacts a;
    a.report.participant_id = j.at("participant_id").get<std::string>();
    a.report.feature_set = j.at("feature_set").get<std::string>();
    a.report.model = j.at("model").get<std::string>();
    a.report.f1_weighted = j.at("f1_weighted").get<double>();
    a.report.precision_weighted = j.at("precision_weighted").get<double>();
    a.report.recall_weighted = j.at("recall_weighted").get<double>();
    a.report.auroc = json_double_or_nan(j.at("auroc"));
    for (const auto& p : j.at("predictions")) {
      a.report.predictions.push_back(
          Prediction{p.at("utterance_id").get<std::string>(),
                     p.at("score").get<double>(), p.at("label").get<int>()});
    }
    for (const auto& e : j.at("curve")) {
      a.curve.push_back(EpochLoss{e.at("train").get<double>(),
                                  e.at("validation").get<double>()});
    }
    a.stopped_epoch = j.at("stopped_epoch").get<int>();
    a.best_epoch = j.at("best_epoch").get<int>();
    a.best_val_loss = j.at("best_val_loss").get<double>();
    a.config_hash = j.at("config_hash").get<std::string>();
    return a;
  } catch (const json::exception& e) {
    throw DataError(origin + ": malformed fold report: " + e.what());
  }
}

// Fold outputs are current when both files exist and carry the hash of the
// present configuration.
bool fold_complete(const fs::path& ckpt, const fs::path& report,
                   const std::string& hash) {
  if (!fs::exists(ckpt) || !fs::exists(report)) return false;
  try {
    if (load_checkpoint(ckpt.string()).config_hash != hash) return false;
    return load_fold_report(report.string()).config_hash == hash;
  } catch (const Error&) {
    return false;
  }
}

std::vector<double> predict_scores(
    const Architecture& arch, const ModelParams& params,
    const std::vector<const LabeledExample*>& examples, int batch_size) {
  std::vector<double> scores;
  scores.reserve(examples.size());
  for (std::size_t at = 0; at < examples.size();
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t nb =
        std::min(static_cast<std::size_t>(batch_size), examples.size() - at);
    SequenceBatch batch;
    for (std::size_t i = at; i < at + nb; ++i) {
      batch.push_back(&examples[i]->features);
    }
    const Eigen::VectorXd probs =
        forward(arch, params, batch, false, nullptr, nullptr);
    for (Eigen::Index i = 0; i < probs.size(); ++i) scores.push_back(probs(i));
  }
  return scores;
}

void write_grid_results(const fs::path& path, const GridSearchOutcome& outcome) {
  CsvTable table;
  table.header = {"learning_rate", "batch_size",      "optimizer",
                  "recurrent_layers", "dense_layers", "dropout",
                  "param_count",   "mean_val_loss"};
  for (const auto& r : outcome.table) {
    table.rows.push_back({format_double(r.point.config.learning_rate),
                          std::to_string(r.point.config.batch_size),
                          optimizer_name(r.point.config.optimizer),
                          std::to_string(r.point.arch.recurrent_layers),
                          std::to_string(r.point.arch.dense_layers),
                          format_double(r.point.arch.dropout),
                          std::to_string(r.param_count),
                          format_double(r.mean_val_loss)});
  }
  write_csv(path.string(), table);
}

}  // namespace

void save_fold_report(const std::string& path, const FoldArtifacts& artifacts) {
  write_text_file(path, fold_artifacts_to_json(artifacts).dump(1) + "\n");
}

FoldArtifacts load_fold_report(const std::string& path) {
  return fold_artifacts_from_json(read_json_file(path), path);
}

TrainReport cmd_train(const RunConfig& config) {
  config.validate();
  const std::vector<UtteranceRecord> records =
      load_manifest(config.manifest_path);
  {
    std::set<std::string> participants;
    for (const auto& rec : records) participants.insert(rec.participant_id);
    if (participants.size() < 2) {
      throw DataError("LOPO needs at least 2 participants, found " +
                      std::to_string(participants.size()));
    }
  }

  const fs::path out(config.out_dir);
  // Utterances the extract stage recorded as failed are excluded; any other
  // gap in the cache is an error.
  std::set<std::string> failed_utterances;
  const fs::path extract_manifest = out / "extract_manifest.json";
  if (fs::exists(extract_manifest)) {
    const json m = read_json_file(extract_manifest);
    if (m.contains("failures")) {
      for (const auto& f : m.at("failures")) {
        failed_utterances.insert(f.at("utterance_id").get<std::string>());
      }
    }
  }

  const fs::path feature_dir =
      out / "features" / feature_set_name(config.feature_set);
  std::vector<LabeledExample> corpus;
  corpus.reserve(records.size());
  for (const auto& rec : records) {
    const fs::path path = feature_dir / (safe_name(rec.utterance_id) + ".csv");
    if (!fs::exists(path)) {
      if (failed_utterances.count(rec.utterance_id) > 0) continue;
      throw DataError("incomplete feature cache: missing " + path.string() +
                      " (run extract first)");
    }
    const FrameSeries series =
        load_series_csv(path.string(), config.feature_set);
    LabeledExample ex;
    ex.features = window_sequence(series);
    ex.label = derive_label(rec.avg_rating);
    ex.participant_id = rec.participant_id;
    ex.utterance_id = rec.utterance_id;
    corpus.push_back(std::move(ex));
  }
  if (corpus.empty()) throw DataError("feature cache is empty");

  const std::vector<Fold> folds =
      lopo_splits(corpus, config.val_fraction, config.seed);
  const std::string hash = run_config_hash(config);

  Architecture arch = config.architecture;
  arch.input_channels = feature_set_channels(config.feature_set);
  TrainConfig base = config.train;

  if (config.grid) {
    std::vector<FoldSets> sets;
    for (const auto& fold : folds) {
      FoldSets fs_;
      for (const auto i : fold.train) fs_.train.push_back(&corpus[i]);
      for (const auto i : fold.validation) {
        fs_.validation.push_back(&corpus[i]);
      }
      sets.push_back(std::move(fs_));
    }
    base.seed = config.seed;
    const GridSearchOutcome outcome =
        grid_search(config.grid_spec, arch, base, sets);
    fs::create_directories(out / "grid");
    write_grid_results(out / "grid" / "grid_results.csv", outcome);
    json best;
    best["architecture"] =
        json{{"cell", cell_type_name(outcome.best.point.arch.cell)},
             {"recurrent_layers", outcome.best.point.arch.recurrent_layers},
             {"hidden_size", outcome.best.point.arch.hidden_size},
             {"dense_layers", outcome.best.point.arch.dense_layers},
             {"dense_width", outcome.best.point.arch.dense_width},
             {"dropout", outcome.best.point.arch.dropout}};
    best["train"] =
        json{{"learning_rate", outcome.best.point.config.learning_rate},
             {"batch_size", outcome.best.point.config.batch_size},
             {"optimizer", optimizer_name(outcome.best.point.config.optimizer)}};
    best["mean_val_loss"] = outcome.best.mean_val_loss;
    best["param_count"] = outcome.best.param_count;
    write_text_file(out / "grid" / "best.json", best.dump(1) + "\n");
    arch = outcome.best.point.arch;
    base = outcome.best.point.config;
  }

  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "reports");

  TrainReport summary;
  std::vector<int> trained(folds.size(), 0);
  parallel_for_index(static_cast<int>(folds.size()), [&](int f) {
    const Fold& fold = folds[static_cast<std::size_t>(f)];
    const std::string stem = "fold_" + safe_name(fold.test_participant);
    const fs::path ckpt_path = out / "checkpoints" / (stem + ".json");
    const fs::path report_path = out / "reports" / (stem + ".json");
    if (fold_complete(ckpt_path, report_path, hash)) return;

    TrainConfig cfg = base;
    cfg.seed = config.seed + static_cast<std::uint64_t>(f);
    std::vector<int> train_labels;
    std::vector<const LabeledExample*> train_set, val_set, test_set;
    for (const auto i : fold.train) {
      train_set.push_back(&corpus[i]);
      train_labels.push_back(corpus[i].label);
    }
    for (const auto i : fold.validation) val_set.push_back(&corpus[i]);
    for (const auto i : fold.test) test_set.push_back(&corpus[i]);
    const auto [w0, w1] = class_weights(train_labels);
    cfg.weight0 = w0;
    cfg.weight1 = w1;

    const TrainedModel model = train(arch, cfg, train_set, val_set);

    const std::vector<double> scores =
        predict_scores(arch, model.params, test_set, cfg.batch_size);
    std::vector<int> labels;
    for (const auto* ex : test_set) labels.push_back(ex->label);

    FoldArtifacts artifacts;
    artifacts.report.participant_id = fold.test_participant;
    artifacts.report.feature_set = feature_set_name(config.feature_set);
    artifacts.report.model = cell_type_name(arch.cell);
    const ConfusionMetrics cm = confusion_metrics(scores, labels);
    artifacts.report.f1_weighted = cm.f1_weighted;
    artifacts.report.precision_weighted = cm.precision_weighted;
    artifacts.report.recall_weighted = cm.recall_weighted;
    try {
      artifacts.report.auroc = auroc(scores, labels);
    } catch (const Error&) {
      artifacts.report.auroc = std::numeric_limits<double>::quiet_NaN();
    }
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      artifacts.report.predictions.push_back(
          Prediction{test_set[i]->utterance_id, scores[i], labels[i]});
    }
    artifacts.stopped_epoch = model.stopped_epoch;
    artifacts.best_epoch = model.best_epoch;
    artifacts.best_val_loss = model.best_val_loss;
    artifacts.curve = model.curve;
    artifacts.config_hash = hash;
    save_fold_report(report_path.string(), artifacts);

    Checkpoint ckpt;
    ckpt.architecture = arch;
    ckpt.params = model.params;
    ckpt.seed = cfg.seed;
    ckpt.config_hash = hash;
    save_checkpoint(ckpt_path.string(), ckpt);
    trained[static_cast<std::size_t>(f)] = 1;
  });

  for (std::size_t f = 0; f < folds.size(); ++f) {
    summary.fold_participants.push_back(folds[f].test_participant);
    if (trained[f] != 0) {
      ++summary.trained;
    } else {
      ++summary.skipped;
    }
  }
  return summary;
}

// -------------------------------------------------------------- evaluate --

void cmd_evaluate(const RunConfig& config) {
  const fs::path out(config.out_dir);
  const fs::path reports_dir = out / "reports";
  std::vector<fs::path> paths;
  if (fs::is_directory(reports_dir)) {
    for (const auto& entry : fs::directory_iterator(reports_dir)) {
      if (entry.path().extension() == ".json") paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) {
    throw DataError("no fold reports found under " + reports_dir.string());
  }

  std::map<std::string, std::vector<FoldReport>> groups;
  for (const auto& path : paths) {
    const FoldArtifacts a = load_fold_report(path.string());
    groups[a.report.feature_set].push_back(a.report);
  }
  const auto registry = participant_registry(config.participants_path);

  fs::create_directories(out / "eval");

  CsvTable metrics_table;
  metrics_table.header = {"feature_set",        "participant",
                          "weighted_f1",        "weighted_precision",
                          "weighted_recall",    "auroc"};

  json aggregate;
  aggregate["version"] = kVersion;
  aggregate["feature_sets"] = json::object();

  for (const auto& [set_name, reports] : groups) {
    std::vector<FoldReport> sorted = reports;
    std::sort(sorted.begin(), sorted.end(),
              [](const FoldReport& a, const FoldReport& b) {
                return a.participant_id < b.participant_id;
              });

    CsvTable age_table;
    age_table.header = {"participant", "age", "sex", "auroc"};
    std::vector<double> ages, aurocs;
    for (const auto& rep : sorted) {
      metrics_table.rows.push_back(
          {set_name, rep.participant_id, format_double(rep.f1_weighted),
           format_double(rep.precision_weighted),
           format_double(rep.recall_weighted),
           std::isfinite(rep.auroc) ? format_double(rep.auroc) : ""});
      const auto it = registry.find(rep.participant_id);
      if (it == registry.end()) {
        throw DataError("fold report participant '" + rep.participant_id +
                        "' missing from the participant registry");
      }
      age_table.rows.push_back(
          {rep.participant_id, format_double(it->second.age_years),
           it->second.sex,
           std::isfinite(rep.auroc) ? format_double(rep.auroc) : ""});
      if (std::isfinite(rep.auroc)) {
        ages.push_back(it->second.age_years);
        aurocs.push_back(rep.auroc);
      }
    }
    // One Figure-5-style table per feature set; the unsuffixed name covers
    // the usual one-set run directory.
    const std::string age_name =
        groups.size() == 1 ? "age_auroc.csv" : "age_auroc_" + set_name + ".csv";
    write_csv((out / "eval" / age_name).string(), age_table);

    const FoldAggregate agg = aggregate_folds(sorted);
    auto summary_json = [](const MetricSummary& s) {
      return json{{"mean", s.mean}, {"sd", s.sd}, {"median", s.median}};
    };
    json block;
    block["n_folds"] = agg.n_folds;
    block["f1"] = summary_json(agg.f1);
    block["precision"] = summary_json(agg.precision);
    block["recall"] = summary_json(agg.recall);
    std::vector<FoldReport> with_auroc;
    for (const auto& rep : sorted) {
      if (std::isfinite(rep.auroc)) with_auroc.push_back(rep);
    }
    if (!with_auroc.empty()) {
      block["auroc"] = summary_json(aggregate_folds(with_auroc).auroc);
    } else {
      block["auroc"] = nullptr;
    }
    block["n_auroc"] = static_cast<int>(with_auroc.size());

    if (ages.size() >= 2 && ages.size() <= 10) {
      const SpearmanResult sp = spearman_exact(ages, aurocs);
      block["spearman_age_auroc"] = json{
          {"rho", sp.rho}, {"p_two_sided", sp.p_two_sided}, {"n", sp.n}};
    } else {
      block["spearman_age_auroc"] = nullptr;
    }
    aggregate["feature_sets"][set_name] = block;
  }

  write_csv((out / "eval" / "fold_metrics.csv").string(), metrics_table);
  write_text_file(out / "eval" / "aggregate.json", aggregate.dump(1) + "\n");
}

// --------------------------------------------------------------- analyze --

void save_binned_csv(const std::string& path, const BinnedSegment& segment) {
  CsvTable table;
  table.header.push_back("bin");
  for (const auto& name : segment.channel_names) table.header.push_back(name);
  for (std::size_t k = 0; k < segment.bins.size(); ++k) {
    std::vector<std::string> row;
    row.push_back(std::to_string(k));
    for (const double v : segment.bins[k]) row.push_back(format_double(v));
    table.rows.push_back(std::move(row));
  }
  write_csv(path, table);
}

BinnedSegment load_binned_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  if (table.header.empty() || table.header[0] != "bin") {
    throw DataError(path + ": not a binned-segment CSV");
  }
  BinnedSegment segment;
  segment.channel_names.assign(table.header.begin() + 1, table.header.end());
  int line = 1;
  for (const auto& row : table.rows) {
    ++line;
    std::vector<double> bin;
    for (std::size_t c = 1; c < row.size(); ++c) {
      bin.push_back(parse_double_field(row[c], path, line));
    }
    if (bin.size() != segment.channel_names.size()) {
      throw ParseError(path + ": ragged binned row", line);
    }
    segment.bins.push_back(std::move(bin));
  }
  if (segment.bins.empty()) throw DataError(path + ": no bins");
  segment.interval.start_s = 0.0;
  segment.interval.end_s = 1.0;
  return segment;
}

void cmd_analyze(const RunConfig& config) {
  const std::vector<UtteranceRecord> records =
      load_manifest(config.manifest_path);
  const fs::path out(config.out_dir);

  std::vector<BinnedSegment> group0, group1;  // derhotic / fully rhotic
  for (const auto& rec : records) {
    const fs::path path =
        out / "binned" / (safe_name(rec.utterance_id) + ".csv");
    if (!fs::exists(path)) continue;
    BinnedSegment segment = load_binned_csv(path.string());
    if (derive_label(rec.avg_rating) == 1) {
      group1.push_back(std::move(segment));
    } else {
      group0.push_back(std::move(segment));
    }
  }
  if (group0.empty() && group1.empty()) {
    throw DataError("no binned segments found under " +
                    (out / "binned").string() + " (run extract first)");
  }
  if (group0.empty() || group1.empty()) {
    throw DataError("cannot analyze: one label class has no binned segments");
  }

  const std::vector<std::string>& channels = group0.front().channel_names;
  const std::size_t n_bins = group0.front().bins.size();
  for (const auto* group : {&group0, &group1}) {
    for (const auto& segment : *group) {
      if (segment.channel_names != channels ||
          segment.bins.size() != n_bins) {
        throw DataError("binned segments disagree in shape");
      }
    }
  }

  // Observations per channel: every bin value of every segment in the
  // group.
  auto pooled = [&](const std::vector<BinnedSegment>& group, std::size_t c) {
    std::vector<double> values;
    values.reserve(group.size() * n_bins);
    for (const auto& segment : group) {
      for (const auto& bin : segment.bins) values.push_back(bin[c]);
    }
    return values;
  };

  struct Row {
    std::string channel;
    EffectSizeResult result;
  };
  std::vector<Row> rows;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    rows.push_back({channels[c], cohens_d(pooled(group0, c),
                                          pooled(group1, c))});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::abs(a.result.d) > std::abs(b.result.d);
  });

  fs::create_directories(out / "analysis");
  CsvTable effects;
  effects.header = {"rank",    "channel", "cohens_d", "ci_low",
                    "ci_high", "magnitude", "n0",     "n1"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    effects.rows.push_back({std::to_string(i + 1), row.channel,
                            format_double(row.result.d),
                            format_double(row.result.ci_low),
                            format_double(row.result.ci_high),
                            row.result.label, std::to_string(row.result.n0),
                            std::to_string(row.result.n1)});
  }
  write_csv((out / "analysis" / "effect_sizes.csv").string(), effects);

  const TrajectorySummary trajectory = trajectory_with_ci(group0, group1);
  CsvTable traj;
  traj.header = {"bin", "channel", "class", "mean", "ci_low", "ci_high"};
  for (std::size_t k = 0; k < n_bins; ++k) {
    for (std::size_t c = 0; c < trajectory.channel_names.size(); ++c) {
      for (int cls = 0; cls < 2; ++cls) {
        const TrajectoryRibbon& ribbon =
            cls == 0 ? trajectory.group0 : trajectory.group1;
        traj.rows.push_back({std::to_string(k), trajectory.channel_names[c],
                             std::to_string(cls),
                             format_double(ribbon.mean[k][c]),
                             format_double(ribbon.ci_low[k][c]),
                             format_double(ribbon.ci_high[k][c])});
      }
    }
  }
  write_csv((out / "analysis" / "trajectories.csv").string(), traj);
}

}  // namespace rmdx
