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

// adakws command line: one subcommand per reproducible step.
//   synth        generate the synthetic keyword dataset
//   train        source-domain training -> checkpoint
//   adapt        run the TTA grid (methods x conditions x seeds)
//   ablate       the four sampler/reweighting toggle rows
//   sweep-batch  batch-size sweep
//   report       render RunReport JSON as csv/markdown
//   corrupt      materialize corrupted WAVs
//   mfcc         debug: WAV -> feature file
// Exit codes: 0 success, 1 runtime/cell failure, 2 config error.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "adakws/experiment.hpp"

namespace {

namespace fs = std::filesystem;
using namespace adakws;

void apply_adapt_flags(ExperimentConfig& cfg, const std::string& method,
                       const std::string& noise, int64_t seed) {
  if (!method.empty()) {
    parse_method(method);
    if (!cfg.per_method.count(method)) {
      AdaptConfig resolved = cfg.base;
      resolved.method = parse_method(method);
      resolved.validate();
      cfg.per_method.emplace(method, resolved);
    }
    cfg.methods = {method};
  }
  if (!noise.empty()) cfg.noise = {parse_noise_spec(noise)};
  if (seed >= 0) cfg.seeds = {static_cast<uint64_t>(seed)};
}

std::string default_out(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

void finish_run(const RunReport& report, const std::string& out_path) {
  save_run_report(report, out_path);
  std::cout << render_report({report}, "markdown");
  std::cout << "\nreport written to " << out_path << "\n";
}

int run_synth(const std::string& config_path) {
  std::string out_dir;
  SynthSpec spec = load_synth_config(toml::parse_file(config_path), &out_dir);
  auto splits = synth_generate(spec, out_dir);
  std::cout << "synthetic dataset: " << spec.num_classes << " classes x "
            << spec.clips_per_class << " clips -> " << out_dir << "\n"
            << "splits: train " << splits.train.size() << ", val " << splits.val.size()
            << ", test " << splits.test.size() << "\n";
  return 0;
}

int run_train(const std::string& config_path) {
  TrainRunConfig cfg = load_train_config(toml::parse_file(config_path));
  DatasetSplits splits = resolve_dataset(cfg.dataset);
  if (cfg.model.num_classes == 0) {
    cfg.model.num_classes = static_cast<int>(splits.train.labels.size());
  }
  MfccExtractor extractor;
  std::cout << "training on " << splits.train.size() << " clips, validating on "
            << splits.val.size() << " (" << cfg.model.num_classes << " classes)\n";
  TrainResult result =
      train_source(cfg.train, cfg.model, splits.train, splits.val, extractor);
  for (const auto& m : result.metrics) {
    std::cout << "epoch " << m.epoch << ": lr " << m.lr << ", loss " << m.train_loss
              << ", val acc " << m.val_accuracy << "\n";
  }
  if (const auto parent = fs::path(cfg.out_checkpoint).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  save_checkpoint(result.checkpoint, cfg.out_checkpoint);
  std::cout << "best epoch " << result.checkpoint.meta.best_epoch << " (val acc "
            << result.checkpoint.meta.clean_accuracy << ") -> " << cfg.out_checkpoint << "\n";
  if (!cfg.metrics_out.empty()) {
    std::ofstream metrics(cfg.metrics_out);
    metrics << metrics_to_json(result.metrics).dump(2) << "\n";
  }
  return 0;
}

int run_corrupt(const std::string& in_dir, const std::string& out_dir,
                const std::string& noise_text, uint64_t seed, const std::string& bank_dir,
                const std::string& bank_manifest) {
  const NoiseSpec spec = parse_noise_spec(noise_text);
  NoiseBank bank;
  const NoiseBank* bank_ptr = nullptr;
  if (spec.kind == NoiseSpec::Kind::Environmental) {
    if (bank_manifest.empty()) {
      throw ConfigError("env noise needs --noise-manifest (and usually --noise-dir)");
    }
    bank = load_noise_bank(bank_dir, bank_manifest);
    bank_ptr = &bank;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(in_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  const uint64_t base = derive_seed(seed, tta_detail::kCorruptStream);
  for (size_t i = 0; i < files.size(); ++i) {
    AudioClip clip = load_wav(files[i].string());
    AudioClip noisy = corrupt_clip(clip, spec, bank_ptr, derive_seed(base, i));
    const fs::path rel = fs::relative(files[i], in_dir);
    const fs::path dest = fs::path(out_dir) / rel;
    fs::create_directories(dest.parent_path());
    write_wav_pcm16(dest.string(), noisy.samples);
  }
  std::cout << "corrupted " << files.size() << " clips (" << spec.label() << ") -> " << out_dir
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"test-time adaptation for small-footprint keyword spotting"};
  app.set_version_flag("--version", std::string("adakws ") + kVersion);
  app.require_subcommand(1);

  std::string config_path, method, noise, out_path, format = "csv";
  std::vector<std::string> report_inputs;
  std::string in_path, out_dir, bank_dir, bank_manifest;
  int64_t seed_flag = -1;
  uint64_t corrupt_seed = 0;

  auto* synth = app.add_subcommand("synth", "generate the synthetic keyword dataset");
  synth->add_option("--config", config_path, "TOML config with a [synth] section")->required();

  auto* train = app.add_subcommand("train", "train the source model");
  train->add_option("--config", config_path, "TOML config with [dataset]/[train]/[model]")
      ->required();

  auto* adapt = app.add_subcommand("adapt", "run the adaptation grid");
  adapt->add_option("--config", config_path, "TOML experiment config")->required();
  adapt->add_option("--method", method, "restrict to one method");
  adapt->add_option("--noise", noise, "restrict to one condition (gaussian:<d>|env:<cat>:<snr>)");
  adapt->add_option("--seed", seed_flag, "restrict to one seed");
  adapt->add_option("--out", out_path, "RunReport output path");

  auto* ablate = app.add_subcommand("ablate", "run the sampler/reweighting toggle rows");
  ablate->add_option("--config", config_path, "TOML experiment config")->required();
  ablate->add_option("--out", out_path, "RunReport output path");

  auto* sweep = app.add_subcommand("sweep-batch", "run the batch-size sweep");
  sweep->add_option("--config", config_path, "TOML experiment config")->required();
  sweep->add_option("--out", out_path, "RunReport output path");

  auto* report = app.add_subcommand("report", "render RunReport JSON as a table");
  report->add_option("--in", report_inputs, "RunReport JSON file(s)")->required();
  report->add_option("--format", format, "csv or markdown")->default_val("csv");
  report->add_option("--out", out_path, "write the table here instead of stdout");

  auto* corrupt = app.add_subcommand("corrupt", "materialize corrupted WAVs");
  corrupt->add_option("--in", in_path, "input directory of WAVs")->required();
  corrupt->add_option("--out", out_dir, "output directory (mirrors input layout)")->required();
  corrupt->add_option("--noise", noise, "gaussian:<delta>|env:<category>:<snr_db>")->required();
  corrupt->add_option("--seed", corrupt_seed, "corruption seed")->default_val(0);
  corrupt->add_option("--noise-dir", bank_dir, "noise bank root");
  corrupt->add_option("--noise-manifest", bank_manifest, "noise bank CSV manifest");

  auto* mfcc = app.add_subcommand("mfcc", "debug: WAV -> feature file");
  mfcc->add_option("--in", in_path, "input WAV")->required();
  mfcc->add_option("--out", out_path, "output feature file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are config errors
  }

  try {
    if (*synth) return run_synth(config_path);
    if (*train) return run_train(config_path);
    if (*adapt || *ablate || *sweep) {
      ExperimentConfig cfg = load_experiment_config_file(config_path);
      if (*adapt) apply_adapt_flags(cfg, method, noise, seed_flag);
      RunReport result = *adapt    ? run_experiment(cfg)
                         : *ablate ? run_ablation(cfg)
                                   : run_batch_sweep(cfg);
      const char* name = *adapt ? "grid.json" : *ablate ? "ablation.json" : "batch_sweep.json";
      finish_run(result, out_path.empty() ? default_out(cfg, name) : out_path);
      return 0;
    }
    if (*report) {
      std::vector<RunReport> reports;
      for (const auto& path : report_inputs) reports.push_back(load_run_report(path));
      const std::string table = render_report(reports, format);
      if (out_path.empty()) {
        std::cout << table;
      } else {
        std::ofstream out(out_path);
        out << table;
      }
      return 0;
    }
    if (*corrupt) {
      return run_corrupt(in_path, out_dir, noise, corrupt_seed, bank_dir, bank_manifest);
    }
    if (*mfcc) {
      write_feature_map(out_path, MfccExtractor().extract(load_wav(in_path)));
      std::cout << "features written to " << out_path << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const toml::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
