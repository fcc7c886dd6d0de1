/* Copyright 2026 The adakws Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Configuration-driven orchestration: resolve a TOML config into a fully
// materialized experiment grid (methods x conditions x seeds), execute cells
// on a worker pool, and render Tables-1..4-shaped and batch-sweep-shaped
// outputs. Reports are deterministic given the config; wall-clock fields are
// the declared exception.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "adakws/corruption.hpp"
#include "adakws/dataset.hpp"
#include "adakws/model.hpp"
#include "adakws/toml_lite.hpp"
#include "adakws/trainer.hpp"
#include "adakws/tta.hpp"

namespace adakws {

/// Malformed or contradictory configuration (CLI exit code 2).
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// ---------------------------------------------------------------------------
// Config structures
// ---------------------------------------------------------------------------

struct DatasetConfig {
  std::string dir;
  std::vector<std::string> keywords;  // empty: labels.txt, else sorted subdirs
  std::string validation_list;        // empty: <dir>/validation_list.txt when present
  std::string testing_list;
  std::string split = "test";  // which split feeds adaptation: train|val|test
};

struct NoiseBankConfig {
  std::string dir;
  std::string manifest;
};

struct ExperimentConfig {
  std::string checkpoint;
  std::string out_dir;
  std::vector<std::string> methods;
  std::vector<uint64_t> seeds;
  int jobs = 0;  // 0 = hardware concurrency
  DatasetConfig dataset;
  std::vector<NoiseSpec> noise;
  NoiseBankConfig bank;
  AdaptConfig base;                                   // [adapt]
  std::map<std::string, AdaptConfig> per_method;      // resolved overrides
  std::vector<int> sweep_batch_sizes = {32, 64, 128, 256, 512};

  const AdaptConfig& adapt_for(const std::string& method) const {
    auto it = per_method.find(method);
    if (it == per_method.end()) {
      throw ConfigError(str_cat("method '", method, "' was not resolved"));
    }
    return it->second;
  }
};

struct TrainRunConfig {
  TrainConfig train;
  ModelConfig model;
  DatasetConfig dataset;
  std::string out_checkpoint = "checkpoint.akws";
  std::string metrics_out;  // optional
};

// ---------------------------------------------------------------------------
// TOML -> config
// ---------------------------------------------------------------------------

namespace config_detail {

inline void expect_keys(const nlohmann::json& section, const std::set<std::string>& allowed,
                        const std::string& ctx) {
  for (const auto& [key, value] : section.items()) {
    if (!allowed.count(key)) {
      throw ConfigError(str_cat("unknown key '", key, "' in [", ctx, "]"));
    }
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(str_cat("bad type for '", key, "' in [", ctx, "]"));
  }
}

template <typename T>
T require(const nlohmann::json& j, const std::string& key, const std::string& ctx) {
  if (!j.contains(key)) throw ConfigError(str_cat("missing '", key, "' in [", ctx, "]"));
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(str_cat("bad type for '", key, "' in [", ctx, "]"));
  }
}

inline void apply_adapt_overrides(AdaptConfig& cfg, const nlohmann::json& section,
                                  const std::string& ctx) {
  expect_keys(section,
              {"tau_ent", "tau_ent_mode", "tau_pkc", "sigma", "lr", "momentum", "batch_size",
               "time_masks", "time_mask_len", "freq_masks", "freq_mask_len", "mask_fill",
               "use_entropy_sampler", "use_pkc_sampler", "use_reweighting", "sar_rho",
               "sar_reset_ema_threshold", "sar_ema_momentum", "overrides"},
              ctx);
  cfg.tau_ent = get_or<float>(section, "tau_ent", cfg.tau_ent, ctx);
  if (section.contains("tau_ent_mode")) {
    const std::string mode = section.at("tau_ent_mode").get<std::string>();
    if (mode == "fraction") {
      cfg.tau_ent_mode = TauEntMode::FractionOfMaxEntropy;
    } else if (mode == "nats") {
      cfg.tau_ent_mode = TauEntMode::AbsoluteNats;
    } else {
      throw ConfigError(str_cat("tau_ent_mode must be 'fraction' or 'nats', got '", mode, "'"));
    }
  }
  cfg.tau_pkc = get_or<float>(section, "tau_pkc", cfg.tau_pkc, ctx);
  cfg.sigma = get_or<float>(section, "sigma", cfg.sigma, ctx);
  cfg.lr = get_or<float>(section, "lr", cfg.lr, ctx);
  cfg.momentum = get_or<float>(section, "momentum", cfg.momentum, ctx);
  cfg.batch_size = get_or<int>(section, "batch_size", cfg.batch_size, ctx);
  cfg.mask_policy.num_time_masks =
      get_or<int>(section, "time_masks", cfg.mask_policy.num_time_masks, ctx);
  cfg.mask_policy.max_time_len =
      get_or<int>(section, "time_mask_len", cfg.mask_policy.max_time_len, ctx);
  cfg.mask_policy.num_freq_masks =
      get_or<int>(section, "freq_masks", cfg.mask_policy.num_freq_masks, ctx);
  cfg.mask_policy.max_freq_len =
      get_or<int>(section, "freq_mask_len", cfg.mask_policy.max_freq_len, ctx);
  cfg.mask_policy.fill = get_or<float>(section, "mask_fill", cfg.mask_policy.fill, ctx);
  cfg.use_entropy_sampler =
      get_or<bool>(section, "use_entropy_sampler", cfg.use_entropy_sampler, ctx);
  cfg.use_pkc_sampler = get_or<bool>(section, "use_pkc_sampler", cfg.use_pkc_sampler, ctx);
  cfg.use_reweighting = get_or<bool>(section, "use_reweighting", cfg.use_reweighting, ctx);
  cfg.sar_rho = get_or<float>(section, "sar_rho", cfg.sar_rho, ctx);
  cfg.sar_reset_ema_threshold =
      get_or<float>(section, "sar_reset_ema_threshold", cfg.sar_reset_ema_threshold, ctx);
  cfg.sar_ema_momentum = get_or<float>(section, "sar_ema_momentum", cfg.sar_ema_momentum, ctx);
}

inline DatasetConfig read_dataset(const nlohmann::json& root) {
  if (!root.contains("dataset")) throw ConfigError("missing [dataset] section");
  const auto& section = root.at("dataset");
  expect_keys(section, {"dir", "keywords", "validation_list", "testing_list", "split"},
              "dataset");
  DatasetConfig d;
  d.dir = require<std::string>(section, "dir", "dataset");
  d.keywords = get_or<std::vector<std::string>>(section, "keywords", {}, "dataset");
  d.validation_list = get_or<std::string>(section, "validation_list", "", "dataset");
  d.testing_list = get_or<std::string>(section, "testing_list", "", "dataset");
  d.split = get_or<std::string>(section, "split", "test", "dataset");
  if (d.split != "train" && d.split != "val" && d.split != "test") {
    throw ConfigError(str_cat("dataset split must be train|val|test, got '", d.split, "'"));
  }
  return d;
}

}  // namespace config_detail

/// "gaussian:<delta>" or "env:<category>:<snr_db>".
inline NoiseSpec parse_noise_spec(const std::string& text) {
  const auto fail = [&]() -> NoiseSpec {
    throw ConfigError(str_cat("cannot parse noise spec '", text,
                              "' (expected gaussian:<delta> or env:<category>:<snr_db>)"));
  };
  const size_t c1 = text.find(':');
  if (c1 == std::string::npos) return fail();
  const std::string kind = text.substr(0, c1);
  try {
    if (kind == "gaussian") {
      return NoiseSpec::gaussian(std::stod(text.substr(c1 + 1)));
    }
    if (kind == "env") {
      const size_t c2 = text.rfind(':');
      if (c2 == c1) return fail();
      return NoiseSpec::environmental(text.substr(c1 + 1, c2 - c1 - 1),
                                      std::stod(text.substr(c2 + 1)));
    }
  } catch (const std::exception&) {
    return fail();
  }
  return fail();
}

inline ExperimentConfig load_experiment_config(const nlohmann::json& root) {
  ExperimentConfig cfg;
  if (!root.contains("experiment")) throw ConfigError("missing [experiment] section");
  const auto& exp = root.at("experiment");
  config_detail::expect_keys(exp,
                             {"checkpoint", "out_dir", "methods", "seeds", "jobs",
                              "sweep_batch_sizes"},
                             "experiment");
  cfg.checkpoint = config_detail::require<std::string>(exp, "checkpoint", "experiment");
  cfg.out_dir = config_detail::get_or<std::string>(exp, "out_dir", "runs", "experiment");
  cfg.methods = config_detail::get_or<std::vector<std::string>>(exp, "methods",
                                                                {"Unadapted", "AdaKWS"},
                                                                "experiment");
  cfg.seeds = config_detail::get_or<std::vector<uint64_t>>(exp, "seeds", {0}, "experiment");
  cfg.jobs = config_detail::get_or<int>(exp, "jobs", 0, "experiment");
  cfg.sweep_batch_sizes = config_detail::get_or<std::vector<int>>(
      exp, "sweep_batch_sizes", cfg.sweep_batch_sizes, "experiment");
  if (cfg.methods.empty()) throw ConfigError("experiment needs at least one method");
  if (cfg.seeds.empty()) throw ConfigError("experiment needs at least one seed");
  for (const auto& m : cfg.methods) parse_method(m);  // validates names

  cfg.dataset = config_detail::read_dataset(root);

  if (root.contains("noise")) {
    const auto& arr = root.at("noise");
    if (!arr.is_array()) throw ConfigError("[[noise]] must be an array of tables");
    for (const auto& n : arr) {
      config_detail::expect_keys(n, {"kind", "delta", "category", "snr_db"}, "noise");
      const std::string kind = config_detail::require<std::string>(n, "kind", "noise");
      if (kind == "gaussian") {
        cfg.noise.push_back(
            NoiseSpec::gaussian(config_detail::require<double>(n, "delta", "noise")));
      } else if (kind == "env") {
        cfg.noise.push_back(NoiseSpec::environmental(
            config_detail::require<std::string>(n, "category", "noise"),
            config_detail::require<double>(n, "snr_db", "noise")));
      } else if (kind == "none") {
        cfg.noise.push_back(NoiseSpec::none());
      } else {
        throw ConfigError(str_cat("noise kind must be gaussian|env|none, got '", kind, "'"));
      }
    }
  }
  if (cfg.noise.empty()) throw ConfigError("experiment needs at least one [[noise]] condition");

  if (root.contains("noise_bank")) {
    const auto& bank = root.at("noise_bank");
    config_detail::expect_keys(bank, {"dir", "manifest"}, "noise_bank");
    cfg.bank.dir = config_detail::get_or<std::string>(bank, "dir", "", "noise_bank");
    cfg.bank.manifest = config_detail::require<std::string>(bank, "manifest", "noise_bank");
  }
  for (const auto& n : cfg.noise) {
    if (n.kind == NoiseSpec::Kind::Environmental && cfg.bank.manifest.empty()) {
      throw ConfigError("environmental noise conditions need a [noise_bank] section");
    }
  }

  if (root.contains("adapt")) {
    config_detail::apply_adapt_overrides(cfg.base, root.at("adapt"), "adapt");
  }
  for (const auto& m : cfg.methods) {
    AdaptConfig resolved = cfg.base;
    resolved.method = parse_method(m);
    if (root.contains("adapt") && root.at("adapt").contains("overrides")) {
      const auto& overrides = root.at("adapt").at("overrides");
      if (overrides.contains(m)) {
        config_detail::apply_adapt_overrides(resolved, overrides.at(m),
                                             "adapt.overrides." + m);
      }
    }
    resolved.validate();
    cfg.per_method.emplace(m, resolved);
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config_file(const std::string& path) {
  try {
    return load_experiment_config(toml::parse_file(path));
  } catch (const toml::ParseError& e) {
    throw ConfigError(e.what());
  }
}

inline SynthSpec load_synth_config(const nlohmann::json& root, std::string* out_dir) {
  if (!root.contains("synth")) throw ConfigError("missing [synth] section");
  const auto& section = root.at("synth");
  config_detail::expect_keys(section, {"out_dir", "num_classes", "clips_per_class", "seed"},
                             "synth");
  SynthSpec spec;
  spec.num_classes = config_detail::get_or<int>(section, "num_classes", 10, "synth");
  spec.clips_per_class = config_detail::get_or<int>(section, "clips_per_class", 200, "synth");
  spec.seed = config_detail::get_or<uint64_t>(section, "seed", 0, "synth");
  *out_dir = config_detail::require<std::string>(section, "out_dir", "synth");
  return spec;
}

inline TrainRunConfig load_train_config(const nlohmann::json& root) {
  TrainRunConfig cfg;
  cfg.dataset = config_detail::read_dataset(root);
  if (root.contains("train")) {
    const auto& t = root.at("train");
    config_detail::expect_keys(t,
                               {"out_checkpoint", "metrics_out", "epochs", "batch_size", "lr",
                                "momentum", "weight_decay", "label_smoothing", "seed"},
                               "train");
    cfg.out_checkpoint =
        config_detail::get_or<std::string>(t, "out_checkpoint", cfg.out_checkpoint, "train");
    cfg.metrics_out = config_detail::get_or<std::string>(t, "metrics_out", "", "train");
    cfg.train.epochs = config_detail::get_or<int>(t, "epochs", cfg.train.epochs, "train");
    cfg.train.batch_size =
        config_detail::get_or<int>(t, "batch_size", cfg.train.batch_size, "train");
    cfg.train.lr = config_detail::get_or<float>(t, "lr", cfg.train.lr, "train");
    cfg.train.momentum = config_detail::get_or<float>(t, "momentum", cfg.train.momentum, "train");
    cfg.train.weight_decay =
        config_detail::get_or<float>(t, "weight_decay", cfg.train.weight_decay, "train");
    cfg.train.label_smoothing =
        config_detail::get_or<float>(t, "label_smoothing", cfg.train.label_smoothing, "train");
    cfg.train.seed = config_detail::get_or<uint64_t>(t, "seed", cfg.train.seed, "train");
  }
  if (root.contains("model")) {
    const auto& m = root.at("model");
    config_detail::expect_keys(
        m, {"num_classes", "stem_channels", "blocks", "input_frames", "with_batchnorm"},
        "model");
    cfg.model.num_classes = config_detail::get_or<int>(m, "num_classes", 0, "model");
    cfg.model.stem_channels =
        config_detail::get_or<int>(m, "stem_channels", cfg.model.stem_channels, "model");
    cfg.model.input_frames =
        config_detail::get_or<int>(m, "input_frames", cfg.model.input_frames, "model");
    cfg.model.with_batchnorm =
        config_detail::get_or<bool>(m, "with_batchnorm", true, "model");
    if (m.contains("blocks")) {
      cfg.model.blocks.clear();
      for (const auto& b : m.at("blocks")) {
        if (!b.is_array() || b.size() != 2) {
          throw ConfigError("model blocks must be pairs like [[24,1],[32,2]]");
        }
        cfg.model.blocks.push_back({b.at(0).get<int>(), b.at(1).get<int>()});
      }
    }
  } else {
    cfg.model.num_classes = 0;  // filled from the dataset labels
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Dataset resolution
// ---------------------------------------------------------------------------

inline DatasetSplits resolve_dataset(const DatasetConfig& cfg) {
  namespace fs = std::filesystem;
  std::vector<std::string> keywords = cfg.keywords;
  if (keywords.empty()) {
    const fs::path labels = fs::path(cfg.dir) / "labels.txt";
    if (fs::exists(labels)) {
      keywords = load_labels_file(labels.string());
    } else {
      for (const auto& e : fs::directory_iterator(cfg.dir)) {
        if (e.is_directory()) keywords.push_back(e.path().filename().string());
      }
      std::sort(keywords.begin(), keywords.end());
    }
  }
  std::string val_list = cfg.validation_list;
  std::string test_list = cfg.testing_list;
  if (val_list.empty() && test_list.empty()) {
    const fs::path v = fs::path(cfg.dir) / "validation_list.txt";
    const fs::path t = fs::path(cfg.dir) / "testing_list.txt";
    if (fs::exists(v) && fs::exists(t)) {
      val_list = v.string();
      test_list = t.string();
    }
  }
  return scan_gsc(cfg.dir, keywords, val_list, test_list);
}

inline const Manifest& pick_split(const DatasetSplits& splits, const std::string& name) {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  return splits.test;
}

// ---------------------------------------------------------------------------
// Digests
// ---------------------------------------------------------------------------

inline nlohmann::json adapt_to_json(const AdaptConfig& c) {
  return {{"method", method_name(c.method)},
          {"tau_ent", static_cast<double>(c.tau_ent)},
          {"tau_ent_mode",
           c.tau_ent_mode == TauEntMode::FractionOfMaxEntropy ? "fraction" : "nats"},
          {"tau_pkc", static_cast<double>(c.tau_pkc)},
          {"sigma", static_cast<double>(c.sigma)},
          {"lr", static_cast<double>(c.lr)},
          {"momentum", static_cast<double>(c.momentum)},
          {"batch_size", c.batch_size},
          {"mask",
           {{"time_masks", c.mask_policy.num_time_masks},
            {"time_mask_len", c.mask_policy.max_time_len},
            {"freq_masks", c.mask_policy.num_freq_masks},
            {"freq_mask_len", c.mask_policy.max_freq_len},
            {"fill", static_cast<double>(c.mask_policy.fill)}}},
          {"use_entropy_sampler", c.use_entropy_sampler},
          {"use_pkc_sampler", c.use_pkc_sampler},
          {"use_reweighting", c.use_reweighting},
          {"sar",
           {{"rho", static_cast<double>(c.sar_rho)},
            {"reset_ema_threshold", static_cast<double>(c.sar_reset_ema_threshold)},
            {"ema_momentum", static_cast<double>(c.sar_ema_momentum)}}}};
}

inline nlohmann::json dataset_noise_json(const ExperimentConfig& cfg) {
  nlohmann::json noise = nlohmann::json::array();
  for (const auto& n : cfg.noise) noise.push_back(n.label());
  return {{"dataset",
           {{"dir", cfg.dataset.dir},
            {"keywords", cfg.dataset.keywords},
            {"validation_list", cfg.dataset.validation_list},
            {"testing_list", cfg.dataset.testing_list},
            {"split", cfg.dataset.split}}},
          {"noise", noise},
          {"noise_bank", {{"dir", cfg.bank.dir}, {"manifest", cfg.bank.manifest}}}};
}

/// Stable hash of the resolved config; whitespace and key order in the TOML
/// never reach it. Execution-only fields (out_dir, jobs) are excluded.
inline std::string experiment_digest(const ExperimentConfig& cfg) {
  nlohmann::json j = dataset_noise_json(cfg);
  j["checkpoint"] = cfg.checkpoint;
  j["methods"] = cfg.methods;
  j["seeds"] = cfg.seeds;
  j["sweep_batch_sizes"] = cfg.sweep_batch_sizes;
  nlohmann::json adapt = nlohmann::json::object();
  for (const auto& [name, ac] : cfg.per_method) adapt[name] = adapt_to_json(ac);
  j["adapt"] = adapt;
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

inline std::string dataset_digest(const ExperimentConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(dataset_noise_json(cfg).dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Run reports
// ---------------------------------------------------------------------------

struct CellResult {
  std::string row;        // method name, or toggle-combo label for ablations
  std::string condition;  // noise label
  uint64_t seed = 0;
  int batch_size = 0;
  double accuracy = 0.0;
  int64_t n_samples = 0;
  int64_t n_updates = 0;
  double selected_fraction = 0.0;  // mean fraction of samples passing selection
  double wall_seconds = 0.0;       // excluded from the determinism contract

  nlohmann::json to_json() const {
    return {{"row", row},
            {"condition", condition},
            {"seed", seed},
            {"batch_size", batch_size},
            {"accuracy", accuracy},
            {"n_samples", n_samples},
            {"n_updates", n_updates},
            {"selected_fraction", selected_fraction},
            {"wall_seconds", wall_seconds}};
  }
  static CellResult from_json(const nlohmann::json& j) {
    CellResult c;
    c.row = j.at("row").get<std::string>();
    c.condition = j.at("condition").get<std::string>();
    c.seed = j.at("seed").get<uint64_t>();
    c.batch_size = j.at("batch_size").get<int>();
    c.accuracy = j.at("accuracy").get<double>();
    c.n_samples = j.at("n_samples").get<int64_t>();
    c.n_updates = j.at("n_updates").get<int64_t>();
    c.selected_fraction = j.value("selected_fraction", 0.0);
    c.wall_seconds = j.value("wall_seconds", 0.0);
    return c;
  }
};

struct RunReport {
  std::string schema = "adakws-run/1";
  std::string tool_version = kVersion;
  std::string kind = "grid";  // grid | ablation | batch_sweep
  std::string config_digest;
  std::string dataset_digest;
  std::vector<CellResult> cells;

  /// Column key for a cell: noise condition, or batch size in sweep mode.
  std::string column_of(const CellResult& cell) const {
    return kind == "batch_sweep" ? "bs=" + std::to_string(cell.batch_size) : cell.condition;
  }

  nlohmann::json to_json() const {
    nlohmann::json cells_j = nlohmann::json::array();
    for (const auto& c : cells) cells_j.push_back(c.to_json());

    // Aggregates: mean and sample std over seeds per (row, column).
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
    for (const auto& c : cells) {
      auto key = std::make_pair(c.row, column_of(c));
      if (!groups.count(key)) order.push_back(key);
      groups[key].push_back(c.accuracy);
    }
    nlohmann::json aggregates = nlohmann::json::array();
    for (const auto& key : order) {
      const auto& values = groups[key];
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      const double stdev =
          values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
      aggregates.push_back({{"row", key.first},
                            {"column", key.second},
                            {"mean_accuracy", mean},
                            {"std_accuracy", stdev},
                            {"n_seeds", values.size()}});
    }
    return {{"schema", schema},
            {"tool_version", tool_version},
            {"kind", kind},
            {"config_digest", config_digest},
            {"dataset_digest", dataset_digest},
            {"cells", cells_j},
            {"aggregates", aggregates}};
  }

  static RunReport from_json(const nlohmann::json& j) {
    RunReport r;
    r.schema = j.at("schema").get<std::string>();
    r.tool_version = j.at("tool_version").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.dataset_digest = j.at("dataset_digest").get<std::string>();
    for (const auto& c : j.at("cells")) r.cells.push_back(CellResult::from_json(c));
    return r;
  }
};

inline void save_run_report(const RunReport& report, const std::string& path) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream out(path);
  if (!out) fail_runtime("cannot write report ", path);
  out << report.to_json().dump(2) << "\n";
}

inline RunReport load_run_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_runtime("cannot open report ", path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) fail_runtime("corrupt report JSON in ", path);
  return RunReport::from_json(j);
}

/// Removes every wall-clock field, recursively. The remainder is the
/// deterministic part of a report.
inline void strip_wall_clock(nlohmann::json& j) {
  if (j.is_object()) {
    j.erase("wall_seconds");
    for (auto& [key, value] : j.items()) strip_wall_clock(value);
  } else if (j.is_array()) {
    for (auto& v : j) strip_wall_clock(v);
  }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace exec_detail {

template <typename Fn>
void parallel_for(size_t n, int jobs, Fn fn) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  jobs = std::min<int>(jobs, static_cast<int>(n));
  if (jobs <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs - 1; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct CellTask {
  size_t index;
  std::string row;
  NoiseSpec noise;
  AdaptConfig adapt;  // fully resolved, seed set
};

/// Runs a task list. Tasks sharing (noise, seed, batch_size) reuse one
/// prepared stream; groups execute in parallel, tasks within a group
/// sequentially.
inline std::vector<CellResult> execute_cells(const Checkpoint& checkpoint,
                                             const Manifest& manifest, const NoiseBank* bank,
                                             const std::vector<CellTask>& tasks, int jobs) {
  const MfccExtractor extractor;
  if (manifest.entries.empty()) fail_invalid("adaptation split is empty");

  std::map<std::tuple<std::string, uint64_t, int>, std::vector<size_t>> groups;
  std::vector<std::tuple<std::string, uint64_t, int>> group_order;
  for (size_t i = 0; i < tasks.size(); ++i) {
    const auto key = std::make_tuple(tasks[i].noise.label(), tasks[i].adapt.seed,
                                     tasks[i].adapt.batch_size);
    if (!groups.count(key)) group_order.push_back(key);
    groups[key].push_back(i);
  }

  std::vector<CellResult> results(tasks.size());
  parallel_for(group_order.size(), jobs, [&](size_t g) {
    const auto& members = groups.at(group_order[g]);
    const CellTask& first = tasks[members.front()];
    const auto stream = prepare_condition_stream(manifest, first.noise, bank, first.adapt,
                                                 extractor, checkpoint.stats);
    for (size_t idx : members) {
      const CellTask& task = tasks[idx];
      try {
        ConditionReport report =
            run_condition_stream(checkpoint, stream, task.noise, task.adapt);
        CellResult cell;
        cell.row = task.row;
        cell.condition = task.noise.label();
        cell.seed = task.adapt.seed;
        cell.batch_size = task.adapt.batch_size;
        cell.accuracy = report.accuracy;
        cell.n_samples = report.n_samples;
        cell.n_updates = report.n_updates;
        double selected = 0.0;
        int64_t total = 0;
        for (const auto& s : report.steps) {
          selected += static_cast<double>(s.n_selected());
          total += static_cast<int64_t>(s.selected_final.size());
        }
        cell.selected_fraction = total > 0 ? selected / static_cast<double>(total) : 0.0;
        cell.wall_seconds = report.wall_seconds;
        results[task.index] = cell;
      } catch (const std::exception& e) {
        fail_runtime("cell (method=", task.row, ", condition=", task.noise.label(),
                     ", seed=", task.adapt.seed, ") failed: ", e.what());
      }
    }
  });
  return results;
}

}  // namespace exec_detail

/// Executes the full methods x conditions x seeds grid.
inline RunReport run_experiment(const ExperimentConfig& cfg) {
  const Checkpoint checkpoint = load_checkpoint(cfg.checkpoint);
  const DatasetSplits splits = resolve_dataset(cfg.dataset);
  const Manifest& manifest = pick_split(splits, cfg.dataset.split);

  NoiseBank bank;
  const NoiseBank* bank_ptr = nullptr;
  for (const auto& n : cfg.noise) {
    if (n.kind == NoiseSpec::Kind::Environmental) {
      bank = load_noise_bank(cfg.bank.dir, cfg.bank.manifest);
      bank_ptr = &bank;
      break;
    }
  }

  std::vector<exec_detail::CellTask> tasks;
  for (const auto& method : cfg.methods) {
    for (const auto& noise : cfg.noise) {
      for (uint64_t seed : cfg.seeds) {
        AdaptConfig adapt = cfg.adapt_for(method);
        adapt.seed = seed;
        tasks.push_back({tasks.size(), method, noise, adapt});
      }
    }
  }

  RunReport report;
  report.kind = "grid";
  report.config_digest = experiment_digest(cfg);
  report.dataset_digest = dataset_digest(cfg);
  report.cells = exec_detail::execute_cells(checkpoint, manifest, bank_ptr, tasks, cfg.jobs);
  return report;
}

/// The four toggle rows: (on,on,on), (on,on,off), (on,off,on), (off,on,on)
/// for {entropy sampler, PKC sampler, reweighting}, same conditions/seeds.
inline RunReport run_ablation(const ExperimentConfig& cfg) {
  const AdaptConfig base = cfg.adapt_for("AdaKWS");
  if (base.method != Method::AdaKWS) throw ConfigError("ablation requires method AdaKWS");

  struct Row {
    const char* label;
    bool ent, pkc, rw;
  };
  const Row rows[] = {{"ent+pkc+rw", true, true, true},
                      {"ent+pkc", true, true, false},
                      {"ent+rw", true, false, true},
                      {"pkc+rw", false, true, true}};

  const Checkpoint checkpoint = load_checkpoint(cfg.checkpoint);
  const DatasetSplits splits = resolve_dataset(cfg.dataset);
  const Manifest& manifest = pick_split(splits, cfg.dataset.split);
  NoiseBank bank;
  const NoiseBank* bank_ptr = nullptr;
  for (const auto& n : cfg.noise) {
    if (n.kind == NoiseSpec::Kind::Environmental) {
      bank = load_noise_bank(cfg.bank.dir, cfg.bank.manifest);
      bank_ptr = &bank;
      break;
    }
  }

  std::vector<exec_detail::CellTask> tasks;
  for (const Row& row : rows) {
    for (const auto& noise : cfg.noise) {
      for (uint64_t seed : cfg.seeds) {
        AdaptConfig adapt = base;
        adapt.use_entropy_sampler = row.ent;
        adapt.use_pkc_sampler = row.pkc;
        adapt.use_reweighting = row.rw;
        adapt.seed = seed;
        tasks.push_back({tasks.size(), row.label, noise, adapt});
      }
    }
  }

  RunReport report;
  report.kind = "ablation";
  report.config_digest = experiment_digest(cfg);
  report.dataset_digest = dataset_digest(cfg);
  report.cells = exec_detail::execute_cells(checkpoint, manifest, bank_ptr, tasks, cfg.jobs);
  return report;
}

/// AdaKWS across the configured batch sizes on each condition.
inline RunReport run_batch_sweep(const ExperimentConfig& cfg) {
  const AdaptConfig base = cfg.adapt_for("AdaKWS");
  if (cfg.sweep_batch_sizes.empty()) throw ConfigError("sweep_batch_sizes is empty");

  const Checkpoint checkpoint = load_checkpoint(cfg.checkpoint);
  const DatasetSplits splits = resolve_dataset(cfg.dataset);
  const Manifest& manifest = pick_split(splits, cfg.dataset.split);
  NoiseBank bank;
  const NoiseBank* bank_ptr = nullptr;
  for (const auto& n : cfg.noise) {
    if (n.kind == NoiseSpec::Kind::Environmental) {
      bank = load_noise_bank(cfg.bank.dir, cfg.bank.manifest);
      bank_ptr = &bank;
      break;
    }
  }

  std::vector<exec_detail::CellTask> tasks;
  for (int batch_size : cfg.sweep_batch_sizes) {
    for (const auto& noise : cfg.noise) {
      for (uint64_t seed : cfg.seeds) {
        AdaptConfig adapt = base;
        adapt.batch_size = batch_size;
        adapt.seed = seed;
        tasks.push_back({tasks.size(), "AdaKWS", noise, adapt});
      }
    }
  }

  RunReport report;
  report.kind = "batch_sweep";
  report.config_digest = experiment_digest(cfg);
  report.dataset_digest = dataset_digest(cfg);
  report.cells = exec_detail::execute_cells(checkpoint, manifest, bank_ptr, tasks, cfg.jobs);
  return report;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Rows = methods (or toggle combos), columns = conditions (or batch sizes)
/// plus an arithmetic-mean "Average"; accuracy as percent with 2 decimals.
inline std::string render_report(const std::vector<RunReport>& reports,
                                 const std::string& format) {
  if (reports.empty()) fail_invalid("render_report: no reports");
  if (format != "csv" && format != "markdown") {
    fail_invalid("render format must be csv or markdown, got '", format, "'");
  }
  for (const auto& r : reports) {
    if (r.dataset_digest != reports.front().dataset_digest) {
      fail_invalid("reports have mismatched dataset digests: ", r.dataset_digest, " vs ",
                   reports.front().dataset_digest);
    }
  }

  std::vector<std::string> rows, columns;
  std::map<std::pair<std::string, std::string>, std::vector<double>> values;
  for (const auto& report : reports) {
    for (const auto& cell : report.cells) {
      const std::string column = report.column_of(cell);
      if (std::find(rows.begin(), rows.end(), cell.row) == rows.end()) rows.push_back(cell.row);
      if (std::find(columns.begin(), columns.end(), column) == columns.end()) {
        columns.push_back(column);
      }
      values[{cell.row, column}].push_back(cell.accuracy);
    }
  }

  auto mean_of = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return v.empty() ? 0.0 : m / static_cast<double>(v.size());
  };
  char buf[32];
  auto pct = [&buf](double fraction) {
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return std::string(buf);
  };

  std::string out;
  const bool md = format == "markdown";
  auto emit_row = [&](const std::vector<std::string>& fields) {
    if (md) {
      out += "|";
      for (const auto& f : fields) out += " " + f + " |";
      out += "\n";
    } else {
      for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ",";
        out += fields[i];
      }
      out += "\n";
    }
  };

  std::vector<std::string> header = {"Method"};
  header.insert(header.end(), columns.begin(), columns.end());
  header.push_back("Average");
  emit_row(header);
  if (md) {
    std::vector<std::string> rule(header.size(), "---");
    emit_row(rule);
  }
  for (const auto& row : rows) {
    std::vector<std::string> fields = {row};
    double sum = 0.0;
    int present = 0;
    for (const auto& column : columns) {
      auto it = values.find({row, column});
      if (it == values.end()) {
        fields.push_back("-");
        continue;
      }
      const double m = mean_of(it->second);
      sum += m;
      ++present;
      fields.push_back(pct(m));
    }
    fields.push_back(present > 0 ? pct(sum / present) : "-");
    emit_row(fields);
  }
  return out;
}

}  // namespace adakws
