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

#include <fstream>

#include <gtest/gtest.h>

#include "adakws/experiment.hpp"
#include "testutil.hpp"

namespace adakws {
namespace {

TEST(TomlLiteTest, TablesValuesAndArrays) {
  const std::string text = R"(# top comment
title = "adakws"   # inline comment
count = 42
ratio = -0.5
flag = true
list = [1, 2, 3]
names = ["a", "b"]
nested = [[24, 1], [32, 2]]

[alpha]
x = 1
[alpha.beta]
y = "deep"

[[noise]]
kind = "gaussian"
delta = 0.01

[[noise]]
kind = "env"
category = "babble"
snr_db = -10.0
)";
  auto j = toml::parse(text);
  EXPECT_EQ(j.at("title").get<std::string>(), "adakws");
  EXPECT_EQ(j.at("count").get<int>(), 42);
  EXPECT_DOUBLE_EQ(j.at("ratio").get<double>(), -0.5);
  EXPECT_TRUE(j.at("flag").get<bool>());
  EXPECT_EQ(j.at("list").size(), 3u);
  EXPECT_EQ(j.at("nested").at(1).at(0).get<int>(), 32);
  EXPECT_EQ(j.at("alpha").at("beta").at("y").get<std::string>(), "deep");
  ASSERT_EQ(j.at("noise").size(), 2u);
  EXPECT_EQ(j.at("noise").at(1).at("category").get<std::string>(), "babble");
  EXPECT_DOUBLE_EQ(j.at("noise").at(1).at("snr_db").get<double>(), -10.0);
}

TEST(TomlLiteTest, ErrorsCarryLineNumbers) {
  try {
    toml::parse("a = 1\nb = @bad\n", "test.toml");
    FAIL() << "expected parse error";
  } catch (const toml::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("test.toml:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(toml::parse("a = 1\na = 2\n"), toml::ParseError);
  EXPECT_THROW(toml::parse("[unclosed\n"), toml::ParseError);
  EXPECT_THROW(toml::parse("x = \"unterminated\n"), toml::ParseError);
}

TEST(NoiseSpecParseTest, StringForms) {
  NoiseSpec g = parse_noise_spec("gaussian:0.03");
  EXPECT_EQ(g.kind, NoiseSpec::Kind::Gaussian);
  EXPECT_DOUBLE_EQ(g.delta, 0.03);
  NoiseSpec e = parse_noise_spec("env:babble:-10");
  EXPECT_EQ(e.kind, NoiseSpec::Kind::Environmental);
  EXPECT_EQ(e.category, "babble");
  EXPECT_DOUBLE_EQ(e.snr_db, -10.0);
  EXPECT_THROW(parse_noise_spec("salt-and-pepper:1"), ConfigError);
  EXPECT_THROW(parse_noise_spec("gaussian"), ConfigError);
}

std::string base_config_toml(const std::string& checkpoint, const std::string& data_dir) {
  return str_cat(R"([experiment]
checkpoint = ")", checkpoint, R"("
methods = ["Unadapted", "Tent", "AdaKWS"]
seeds = [1, 2, 3]
jobs = 2

[dataset]
dir = ")", data_dir, R"("
split = "test"

[[noise]]
kind = "gaussian"
delta = 0.01

[[noise]]
kind = "gaussian"
delta = 0.02

[[noise]]
kind = "gaussian"
delta = 0.03

[adapt]
batch_size = 4
tau_ent = 2.0
tau_pkc = -0.9

[adapt.overrides.Tent]
lr = 0.0005
)");
}

struct GridFixture {
  testutil::TempDir tmp;
  std::string data_dir;
  std::string ckpt_path;

  GridFixture() {
    SynthSpec spec;
    spec.num_classes = 3;
    spec.clips_per_class = 10;
    spec.seed = 17;
    data_dir = tmp.file("synth");
    auto splits = synth_generate(spec, data_dir);

    Checkpoint ckpt;
    ckpt.config = ModelConfig{};
    ckpt.config.num_classes = 3;
    ckpt.model = KwsModel::build(ckpt.config, 5);
    ckpt.labels = splits.test.labels;
    ckpt.stats.mean.assign(40, 0.0f);
    ckpt.stats.stdev.assign(40, 1.0f);
    ckpt_path = tmp.file("model.akws");
    save_checkpoint(ckpt, ckpt_path);
  }
};

TEST(ConfigTest, ResolvesDefaultsAndOverrides) {
  GridFixture fx;
  auto cfg = load_experiment_config(toml::parse(base_config_toml(fx.ckpt_path, fx.data_dir)));
  EXPECT_EQ(cfg.methods.size(), 3u);
  EXPECT_EQ(cfg.noise.size(), 3u);
  EXPECT_FLOAT_EQ(cfg.adapt_for("AdaKWS").lr, 1e-3f);
  EXPECT_FLOAT_EQ(cfg.adapt_for("Tent").lr, 5e-4f);  // per-method override
  EXPECT_EQ(cfg.adapt_for("Tent").batch_size, 4);
  EXPECT_EQ(cfg.adapt_for("AdaKWS").method, Method::AdaKWS);
}

TEST(ConfigTest, DigestIgnoresFormattingButTracksSemantics) {
  GridFixture fx;
  const std::string a = base_config_toml(fx.ckpt_path, fx.data_dir);
  // Same semantics, different whitespace/comments and reordered keys.
  std::string b = a;
  b = "# reformatted\n" + b;
  size_t pos = b.find("tau_ent = 2.0");
  ASSERT_NE(pos, std::string::npos);
  b.replace(pos, 13, "tau_ent   =    2.0");
  pos = b.find("batch_size = 4\ntau_ent   =    2.0");
  ASSERT_NE(pos, std::string::npos);
  b.replace(pos, std::string("batch_size = 4\ntau_ent   =    2.0").size(),
            "tau_ent = 2.0\nbatch_size = 4");

  auto cfg_a = load_experiment_config(toml::parse(a));
  auto cfg_b = load_experiment_config(toml::parse(b));
  EXPECT_EQ(experiment_digest(cfg_a), experiment_digest(cfg_b));

  std::string c = a;
  pos = c.find("tau_pkc = -0.9");
  ASSERT_NE(pos, std::string::npos);
  c.replace(pos, 14, "tau_pkc = -0.8");
  auto cfg_c = load_experiment_config(toml::parse(c));
  EXPECT_NE(experiment_digest(cfg_a), experiment_digest(cfg_c));
}

TEST(ConfigTest, RejectsUnknownKeysAndBadMethods) {
  GridFixture fx;
  std::string bad_key = base_config_toml(fx.ckpt_path, fx.data_dir);
  bad_key += "\n[adapt.overrides.Tent]\n";  // duplicate table is fine; bad key below
  bad_key.replace(bad_key.find("tau_ent = 2.0"), 13, "tau_entropy = 2.0");
  EXPECT_THROW(load_experiment_config(toml::parse(bad_key)), ConfigError);

  std::string bad_method = base_config_toml(fx.ckpt_path, fx.data_dir);
  bad_method.replace(bad_method.find("\"Tent\""), 6, "\"Tint\"");
  EXPECT_THROW(load_experiment_config(toml::parse(bad_method)), InvalidArgument);

  EXPECT_THROW(load_experiment_config(toml::parse("[experiment]\ncheckpoint = \"x\"\n")),
               ConfigError);  // no dataset / no noise
}

TEST(RunExperimentTest, SingleCellGrid) {
  GridFixture fx;
  std::string cfg_text = str_cat(R"([experiment]
checkpoint = ")", fx.ckpt_path, R"("
methods = ["Unadapted"]
seeds = [7]

[dataset]
dir = ")", fx.data_dir, R"("

[[noise]]
kind = "gaussian"
delta = 0.03

[adapt]
batch_size = 4
)");
  auto cfg = load_experiment_config(toml::parse(cfg_text));
  RunReport report = run_experiment(cfg);
  ASSERT_EQ(report.cells.size(), 1u);
  EXPECT_EQ(report.cells[0].row, "Unadapted");
  EXPECT_EQ(report.cells[0].condition, "gaussian:0.03");
  EXPECT_EQ(report.cells[0].seed, 7u);
  EXPECT_EQ(report.cells[0].n_samples, 3);  // 3 classes x 1 test clip
}

TEST(RunExperimentTest, FullGridHasTwentySevenCellsAndSeedAggregates) {
  GridFixture fx;
  auto cfg = load_experiment_config(toml::parse(base_config_toml(fx.ckpt_path, fx.data_dir)));
  RunReport report = run_experiment(cfg);
  EXPECT_EQ(report.cells.size(), 27u);  // 3 methods x 3 conditions x 3 seeds
  auto j = report.to_json();
  EXPECT_EQ(j.at("aggregates").size(), 9u);  // 3 methods x 3 conditions
  for (const auto& agg : j.at("aggregates")) {
    EXPECT_EQ(agg.at("n_seeds").get<int>(), 3);
  }
}

TEST(RunExperimentTest, RerunIsByteIdenticalModuloWallClock) {
  GridFixture fx;
  std::string cfg_text = base_config_toml(fx.ckpt_path, fx.data_dir);
  // Shrink to keep the double run quick.
  cfg_text.replace(cfg_text.find("seeds = [1, 2, 3]"), 17, "seeds = [1]");
  auto cfg = load_experiment_config(toml::parse(cfg_text));
  auto a = run_experiment(cfg).to_json();
  auto b = run_experiment(cfg).to_json();
  strip_wall_clock(a);
  strip_wall_clock(b);
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(RunAblationTest, EmitsTheFourToggleRows) {
  GridFixture fx;
  std::string cfg_text = str_cat(R"([experiment]
checkpoint = ")", fx.ckpt_path, R"("
methods = ["AdaKWS"]
seeds = [3]

[dataset]
dir = ")", fx.data_dir, R"("

[[noise]]
kind = "gaussian"
delta = 0.03

[adapt]
batch_size = 4
tau_ent = 2.0
tau_pkc = -0.9
)");
  auto cfg = load_experiment_config(toml::parse(cfg_text));
  RunReport report = run_ablation(cfg);
  ASSERT_EQ(report.cells.size(), 4u);
  EXPECT_EQ(report.kind, "ablation");
  std::vector<std::string> rows;
  for (const auto& c : report.cells) rows.push_back(c.row);
  EXPECT_EQ(rows, (std::vector<std::string>{"ent+pkc+rw", "ent+pkc", "ent+rw", "pkc+rw"}));
}

TEST(RunAblationTest, DisabledEntropySamplerPassesEverySample) {
  GridFixture fx;
  Checkpoint ckpt = load_checkpoint(fx.ckpt_path);
  AdaptConfig cfg;
  cfg.method = Method::AdaKWS;
  cfg.use_entropy_sampler = false;  // the (off, on, on) ablation row
  cfg.tau_pkc = -0.99f;
  cfg.batch_size = 4;
  TtaEngine engine(ckpt, cfg);
  Rng rng(3);
  StepReport step = engine.step(testutil::random_tensor<float>({4, 1, 40, 98}, rng), 0);
  for (char c : step.selected_ent) EXPECT_EQ(c, 1);
}

TEST(RunBatchSweepTest, FiveCellsPerSeed) {
  GridFixture fx;
  std::string cfg_text = str_cat(R"([experiment]
checkpoint = ")", fx.ckpt_path, R"("
methods = ["AdaKWS"]
seeds = [5]
sweep_batch_sizes = [32, 64, 128, 256, 512]

[dataset]
dir = ")", fx.data_dir, R"("

[[noise]]
kind = "gaussian"
delta = 0.03

[adapt]
tau_ent = 2.0
tau_pkc = -0.9
)");
  auto cfg = load_experiment_config(toml::parse(cfg_text));
  RunReport report = run_batch_sweep(cfg);
  ASSERT_EQ(report.cells.size(), 5u);
  EXPECT_EQ(report.kind, "batch_sweep");
  EXPECT_EQ(report.column_of(report.cells[0]), "bs=32");
  EXPECT_EQ(report.column_of(report.cells[4]), "bs=512");
}

RunReport paper_shaped_report() {
  RunReport report;
  report.kind = "grid";
  report.config_digest = "cfg";
  report.dataset_digest = "data";
  const char* conditions[] = {"gaussian:0.01", "gaussian:0.02", "gaussian:0.03"};
  const double adakws[] = {0.8466, 0.7648, 0.6989};
  const double tent[] = {0.8444, 0.7570, 0.6859};
  for (int i = 0; i < 3; ++i) {
    report.cells.push_back({"Tent", conditions[i], 0, 128, tent[i], 100, 1, 1.0, 0.0});
  }
  for (int i = 0; i < 3; ++i) {
    report.cells.push_back({"AdaKWS", conditions[i], 0, 128, adakws[i], 100, 1, 1.0, 0.0});
  }
  return report;
}

TEST(RenderReportTest, AveragesAndFormatMatchKnownValues) {
  RunReport report = paper_shaped_report();
  const std::string csv = render_report({report}, "csv");
  EXPECT_NE(csv.find("Method,gaussian:0.01,gaussian:0.02,gaussian:0.03,Average"),
            std::string::npos)
      << csv;
  EXPECT_NE(csv.find("AdaKWS,84.66,76.48,69.89,77.01"), std::string::npos) << csv;
  EXPECT_NE(csv.find("Tent,84.44,75.70,68.59,76.24"), std::string::npos) << csv;

  const std::string md = render_report({report}, "markdown");
  for (const char* token : {"84.66", "76.48", "69.89", "77.01"}) {
    EXPECT_NE(md.find(token), std::string::npos) << md;
  }
}

TEST(RenderReportTest, SingleCellGivesOneRowTwoColumns) {
  RunReport report;
  report.kind = "grid";
  report.dataset_digest = "d";
  report.cells.push_back({"TBN", "gaussian:0.02", 1, 32, 0.5, 10, 0, 0.0, 0.0});
  const std::string csv = render_report({report}, "csv");
  EXPECT_NE(csv.find("Method,gaussian:0.02,Average"), std::string::npos);
  EXPECT_NE(csv.find("TBN,50.00,50.00"), std::string::npos);
}

TEST(RenderReportTest, MismatchedDatasetDigestsRejected) {
  RunReport a = paper_shaped_report();
  RunReport b = paper_shaped_report();
  b.dataset_digest = "other";
  EXPECT_THROW(render_report({a, b}, "csv"), InvalidArgument);
}

TEST(RunReportTest, SaveLoadRoundTrip) {
  testutil::TempDir tmp;
  RunReport report = paper_shaped_report();
  save_run_report(report, tmp.file("r.json"));
  RunReport back = load_run_report(tmp.file("r.json"));
  EXPECT_EQ(back.cells.size(), report.cells.size());
  EXPECT_EQ(back.kind, report.kind);
  EXPECT_EQ(back.cells[3].row, "AdaKWS");
  EXPECT_DOUBLE_EQ(back.cells[3].accuracy, 0.8466);
}

}  // namespace
}  // namespace adakws
