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

// SmallKwsNet: a BC-ResNet-style small CNN for keyword spotting.
//   stem 3x3/s2 conv + BN + ReLU, then depthwise-separable blocks
//   (depthwise 3x3 + BN + ReLU, pointwise 1x1 + BN + ReLU), global average
//   pool, linear classifier. Convolutions carry no bias (BN follows them).
// Every parameter leaf is tagged, which is what lets adaptation update the
// BN affine group and nothing else.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adakws/autograd.hpp"
#include "adakws/kernels.hpp"
#include "adakws/mfcc.hpp"
#include "adakws/optimizer.hpp"
#include "adakws/rng.hpp"
#include "adakws/tensor.hpp"

namespace adakws {

enum class BnMode {
  Train,      // batch stats for normalization, running stats updated
  BatchStat,  // batch stats for normalization, running stats untouched
  Running,    // stored stats only (frozen inference)
};

struct ParamTag {
  enum class Kind { ConvWeight, BnGamma, BnBeta, LinearWeight, LinearBias };
  Kind kind;
  int layer_index;
};

inline bool is_bn_affine(const ParamTag& tag) {
  return tag.kind == ParamTag::Kind::BnGamma || tag.kind == ParamTag::Kind::BnBeta;
}

template <typename S>
struct ParamT {
  std::string name;
  ParamTag tag;
  TensorT<S> value;
};

template <typename S>
struct RunningStatsT {
  TensorT<S> mean;
  TensorT<S> var;
  bool initialized = false;
};

struct BlockSpec {
  int channels = 0;
  int stride = 1;
};

struct ModelConfig {
  int num_classes = 10;
  int stem_channels = 16;
  std::vector<BlockSpec> blocks = {{24, 1}, {32, 2}, {32, 1}};
  int input_coeffs = 40;
  int input_frames = 98;
  // Degenerate testing configuration: no BN layers at all (adaptable group
  // is then empty and TTA methods refuse to run).
  bool with_batchnorm = true;

  void validate() const {
    if (num_classes < 2) fail_invalid("num_classes must be >= 2, got ", num_classes);
    if (stem_channels < 1) fail_invalid("stem_channels must be >= 1");
    if (input_coeffs < 4 || input_frames < 4) {
      fail_invalid("input shape ", input_coeffs, "x", input_frames, " too small");
    }
    for (const auto& b : blocks) {
      if (b.channels < 1) fail_invalid("block channels must be >= 1");
      if (b.stride != 1 && b.stride != 2) {
        fail_invalid("block stride must be 1 or 2, got ", b.stride);
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["num_classes"] = num_classes;
    j["stem_channels"] = stem_channels;
    nlohmann::json blocks_j = nlohmann::json::array();
    for (const auto& b : blocks) blocks_j.push_back({{"channels", b.channels}, {"stride", b.stride}});
    j["blocks"] = blocks_j;
    j["input_coeffs"] = input_coeffs;
    j["input_frames"] = input_frames;
    j["with_batchnorm"] = with_batchnorm;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.num_classes = j.at("num_classes").get<int>();
    c.stem_channels = j.at("stem_channels").get<int>();
    c.blocks.clear();
    for (const auto& b : j.at("blocks")) {
      c.blocks.push_back({b.at("channels").get<int>(), b.at("stride").get<int>()});
    }
    c.input_coeffs = j.at("input_coeffs").get<int>();
    c.input_frames = j.at("input_frames").get<int>();
    c.with_batchnorm = j.value("with_batchnorm", true);
    c.validate();
    return c;
  }
};

inline constexpr float kBnEps = 1e-5f;
inline constexpr float kBnMomentum = 0.1f;

template <typename S>
struct ParamGroupsT {
  std::vector<ParamT<S>*> adaptable;  // all BnGamma/BnBeta leaves
  std::vector<ParamT<S>*> frozen;     // everything else
};

template <typename S>
class KwsModelT {
 public:
  using Tensor = TensorT<S>;
  using Tape = TapeT<S>;
  using NodeId = typename TapeT<S>::NodeId;

  struct BnLayer {
    ParamT<S> gamma;
    ParamT<S> beta;
    RunningStatsT<S> stats;
  };
  struct ConvLayer {
    ParamT<S> weight;
    kernels::Conv2dSpec spec;
  };
  struct Block {
    ConvLayer dw;
    BnLayer bn1;
    ConvLayer pw;
    BnLayer bn2;
  };

  /// Seeded He-normal init for conv/linear weights; gamma=1, beta=0, running
  /// stats (0,1). Draws happen in double so float and double instantiations
  /// share the same values for a seed.
  static KwsModelT build(const ModelConfig& config, uint64_t init_seed) {
    config.validate();
    KwsModelT m;
    m.config_ = config;
    Rng rng(init_seed);
    int layer = 0;

    m.stem_.weight = make_conv_weight("stem.conv.weight", layer++, config.stem_channels, 1, 3, 3,
                                      /*groups=*/1, rng);
    m.stem_.spec = {2, 2, 1, 1, 1};
    m.stem_bn_ = make_bn("stem.bn", layer++, config.stem_channels, config.with_batchnorm);

    int in_ch = config.stem_channels;
    for (size_t i = 0; i < config.blocks.size(); ++i) {
      const auto& spec = config.blocks[i];
      Block b;
      const std::string prefix = "block" + std::to_string(i);
      b.dw.weight = make_conv_weight(prefix + ".dw.weight", layer++, in_ch, 1, 3, 3, in_ch, rng);
      b.dw.spec = {spec.stride, spec.stride, 1, 1, in_ch};
      b.bn1 = make_bn(prefix + ".bn1", layer++, in_ch, config.with_batchnorm);
      b.pw.weight =
          make_conv_weight(prefix + ".pw.weight", layer++, spec.channels, in_ch, 1, 1, 1, rng);
      b.pw.spec = {1, 1, 0, 0, 1};
      b.bn2 = make_bn(prefix + ".bn2", layer++, spec.channels, config.with_batchnorm);
      in_ch = spec.channels;
      m.blocks_.push_back(std::move(b));
    }

    m.fc_weight_.name = "fc.weight";
    m.fc_weight_.tag = {ParamTag::Kind::LinearWeight, layer};
    m.fc_weight_.value = Tensor({config.num_classes, in_ch});
    const double std_fc = std::sqrt(2.0 / static_cast<double>(in_ch));
    for (int64_t i = 0; i < m.fc_weight_.value.numel(); ++i) {
      m.fc_weight_.value[i] = static_cast<S>(rng.gaussian() * std_fc);
    }
    m.fc_bias_.name = "fc.bias";
    m.fc_bias_.tag = {ParamTag::Kind::LinearBias, layer};
    m.fc_bias_.value = Tensor({config.num_classes}, S(0));
    return m;
  }

  const ModelConfig& config() const { return config_; }

  /// Plain (non-recording) forward. Pure unless mode == Train, which folds
  /// the batch moments into the running statistics.
  Tensor forward(const Tensor& x, BnMode mode) {
    check_input(x);
    Tensor h = kernels::conv2d_forward(x, stem_.weight.value, stem_.spec);
    h = bn_relu_plain(h, stem_bn_, mode);
    for (auto& b : blocks_) {
      h = kernels::conv2d_forward(h, b.dw.weight.value, b.dw.spec);
      h = bn_relu_plain(h, b.bn1, mode);
      h = kernels::conv2d_forward(h, b.pw.weight.value, b.pw.spec);
      h = bn_relu_plain(h, b.bn2, mode);
    }
    Tensor pooled = kernels::global_avg_pool_forward(h);
    return kernels::linear_forward(pooled, fc_weight_.value, fc_bias_.value);
  }

  /// Gradient-recording forward. `train_all` marks every parameter leaf
  /// trainable (source training); otherwise only the BN affine group is.
  NodeId forward_recorded(const Tensor& x, BnMode mode, Tape& tape, bool train_all) {
    check_input(x);
    NodeId h = tape.constant(x, "input");
    h = conv_recorded(tape, h, stem_, train_all);
    h = bn_relu_recorded(tape, h, stem_bn_, mode, train_all);
    for (auto& b : blocks_) {
      h = conv_recorded(tape, h, b.dw, train_all);
      h = bn_relu_recorded(tape, h, b.bn1, mode, train_all);
      h = conv_recorded(tape, h, b.pw, train_all);
      h = bn_relu_recorded(tape, h, b.bn2, mode, train_all);
    }
    h = tape.global_avg_pool(h);
    NodeId w = tape.leaf(fc_weight_.value, train_all, fc_weight_.name);
    NodeId bias = tape.leaf(fc_bias_.value, train_all, fc_bias_.name);
    return tape.linear(h, w, bias);
  }

  /// Every parameter leaf, in architecture order.
  std::vector<ParamT<S>*> parameters() {
    std::vector<ParamT<S>*> out;
    out.push_back(&stem_.weight);
    append_bn_params(stem_bn_, out);
    for (auto& b : blocks_) {
      out.push_back(&b.dw.weight);
      append_bn_params(b.bn1, out);
      out.push_back(&b.pw.weight);
      append_bn_params(b.bn2, out);
    }
    out.push_back(&fc_weight_);
    out.push_back(&fc_bias_);
    return out;
  }

  std::vector<const ParamT<S>*> parameters() const {
    auto mut = const_cast<KwsModelT*>(this)->parameters();
    return {mut.begin(), mut.end()};
  }

  /// Exhaustive, disjoint partition: adaptable = BN affine, frozen = rest.
  ParamGroupsT<S> param_groups() {
    ParamGroupsT<S> g;
    for (ParamT<S>* p : parameters()) {
      (is_bn_affine(p->tag) ? g.adaptable : g.frozen).push_back(p);
    }
    return g;
  }

  std::vector<std::pair<std::string, RunningStatsT<S>*>> running_stats() {
    std::vector<std::pair<std::string, RunningStatsT<S>*>> out;
    if (!config_.with_batchnorm) return out;
    out.emplace_back("stem.bn", &stem_bn_.stats);
    for (size_t i = 0; i < blocks_.size(); ++i) {
      out.emplace_back("block" + std::to_string(i) + ".bn1", &blocks_[i].bn1.stats);
      out.emplace_back("block" + std::to_string(i) + ".bn2", &blocks_[i].bn2.stats);
    }
    return out;
  }

  int64_t num_parameters() const {
    int64_t n = 0;
    for (const ParamT<S>* p : parameters()) n += p->value.numel();
    return n;
  }

  /// Drops running statistics back to the uninitialized state (Running-mode
  /// forward then refuses to run until stats are re-estimated).
  void clear_running_stats() {
    for (auto& [name, rs] : running_stats()) rs->initialized = false;
  }

 private:
  static ParamT<S> make_conv_weight(std::string name, int layer, int cout, int cin_per_group,
                                    int kh, int kw, int groups, Rng& rng) {
    ParamT<S> p;
    p.name = std::move(name);
    p.tag = {ParamTag::Kind::ConvWeight, layer};
    p.value = Tensor({cout, cin_per_group, kh, kw});
    (void)groups;
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin_per_group * kh * kw));
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      p.value[i] = static_cast<S>(rng.gaussian() * stddev);
    }
    return p;
  }

  static BnLayer make_bn(const std::string& prefix, int layer, int channels, bool enabled) {
    BnLayer bn;
    bn.gamma.name = prefix + ".gamma";
    bn.gamma.tag = {ParamTag::Kind::BnGamma, layer};
    bn.beta.name = prefix + ".beta";
    bn.beta.tag = {ParamTag::Kind::BnBeta, layer};
    if (enabled) {
      bn.gamma.value = Tensor({channels}, S(1));
      bn.beta.value = Tensor({channels}, S(0));
      bn.stats.mean = Tensor({channels}, S(0));
      bn.stats.var = Tensor({channels}, S(1));
      bn.stats.initialized = true;
    }
    return bn;
  }

  static void append_bn_params(BnLayer& bn, std::vector<ParamT<S>*>& out) {
    if (bn.gamma.value.numel() == 0) return;  // with_batchnorm = false
    out.push_back(&bn.gamma);
    out.push_back(&bn.beta);
  }

  void check_input(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != config_.input_coeffs ||
        x.dim(3) != config_.input_frames) {
      fail_invalid("model expects input [N,1,", config_.input_coeffs, ",", config_.input_frames,
                   "], got ", shape_str(x.shape()));
    }
  }

  Tensor bn_relu_plain(const Tensor& h, BnLayer& bn, BnMode mode) {
    if (!config_.with_batchnorm) return kernels::relu_forward(h);
    Tensor out;
    switch (mode) {
      case BnMode::Train: {
        Tensor mean, invstd, var;
        kernels::bn_batch_stats(h, &mean, &var);
        invstd = kernels::bn_invstd(var, S(kBnEps));
        out = kernels::bn_apply(h, bn.gamma.value, bn.beta.value, mean, invstd);
        update_running(bn, mean, var);
        break;
      }
      case BnMode::BatchStat: {
        Tensor mean, invstd;
        out = kernels::bn_forward_batch(h, bn.gamma.value, bn.beta.value, S(kBnEps), &mean,
                                        &invstd);
        break;
      }
      case BnMode::Running: {
        require_initialized(bn);
        out = kernels::bn_forward_running(h, bn.gamma.value, bn.beta.value, bn.stats.mean,
                                          bn.stats.var, S(kBnEps));
        break;
      }
    }
    return kernels::relu_forward(out);
  }

  NodeId bn_relu_recorded(Tape& tape, NodeId h, BnLayer& bn, BnMode mode, bool train_all) {
    if (!config_.with_batchnorm) return tape.relu(h);
    NodeId gamma = tape.leaf(bn.gamma.value, true, bn.gamma.name);
    NodeId beta = tape.leaf(bn.beta.value, true, bn.beta.name);
    (void)train_all;  // BN affine is trainable in every recording mode
    NodeId out;
    switch (mode) {
      case BnMode::Train: {
        Tensor mean, var;
        out = tape.batchnorm_batch(h, gamma, beta, S(kBnEps), &mean, &var);
        update_running(bn, mean, var);
        break;
      }
      case BnMode::BatchStat:
        out = tape.batchnorm_batch(h, gamma, beta, S(kBnEps));
        break;
      case BnMode::Running:
        require_initialized(bn);
        out = tape.batchnorm_running(h, gamma, beta, bn.stats.mean, bn.stats.var, S(kBnEps));
        break;
    }
    return tape.relu(out);
  }

  NodeId conv_recorded(Tape& tape, NodeId h, ConvLayer& conv, bool train_all) {
    NodeId w = tape.leaf(conv.weight.value, train_all, conv.weight.name);
    return tape.conv2d(h, w, conv.spec);
  }

  void update_running(BnLayer& bn, const Tensor& mean, const Tensor& var) {
    for (int64_t c = 0; c < mean.numel(); ++c) {
      bn.stats.mean[c] = (S(1) - S(kBnMomentum)) * bn.stats.mean[c] + S(kBnMomentum) * mean[c];
      bn.stats.var[c] = (S(1) - S(kBnMomentum)) * bn.stats.var[c] + S(kBnMomentum) * var[c];
    }
    bn.stats.initialized = true;
  }

  void require_initialized(const BnLayer& bn) const {
    if (!bn.stats.initialized) {
      fail_invalid("running statistics for '", bn.gamma.name,
                   "' are uninitialized; Running mode needs trained stats");
    }
  }

  ModelConfig config_;
  ConvLayer stem_;
  BnLayer stem_bn_;
  std::vector<Block> blocks_;
  ParamT<S> fc_weight_;
  ParamT<S> fc_bias_;
};

using KwsModel = KwsModelT<float>;

// ---------------------------------------------------------------------------
// Checkpoint: magic "AKWS", u32 version, u64 metadata length, JSON metadata
// (config, labels, feature stats, training metadata, tensor directory with
// name/shape/offset), then concatenated little-endian f32 blobs.
// Save -> load -> save is byte-identical.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;

struct TrainMeta {
  uint64_t seed = 0;
  int epochs = 0;
  int best_epoch = 0;
  double clean_accuracy = 0.0;  // best validation accuracy on clean data

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"epochs", epochs},
            {"best_epoch", best_epoch},
            {"clean_accuracy", clean_accuracy}};
  }
  static TrainMeta from_json(const nlohmann::json& j) {
    TrainMeta m;
    m.seed = j.at("seed").get<uint64_t>();
    m.epochs = j.at("epochs").get<int>();
    m.best_epoch = j.at("best_epoch").get<int>();
    m.clean_accuracy = j.at("clean_accuracy").get<double>();
    return m;
  }
};

struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> labels;
  FeatureStats stats;
  TrainMeta meta;
  KwsModel model;
};

namespace model_detail {

/// Checkpoint tensor walk: parameters in architecture order, then running
/// stats. The directory written at save time and the expectation at load
/// time both come from here.
inline std::vector<std::pair<std::string, const Tensor*>> checkpoint_tensors(KwsModel& model) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (ParamT<float>* p : model.parameters()) out.emplace_back(p->name, &p->value);
  for (auto& [name, stats] : model.running_stats()) {
    out.emplace_back(name + ".running_mean", &stats->mean);
    out.emplace_back(name + ".running_var", &stats->var);
  }
  return out;
}

}  // namespace model_detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  auto& model = const_cast<KwsModel&>(ckpt.model);
  auto tensors = model_detail::checkpoint_tensors(model);

  nlohmann::json meta;
  meta["config"] = ckpt.config.to_json();
  meta["labels"] = ckpt.labels;
  meta["feature_stats"] = {{"mean", ckpt.stats.mean}, {"std", ckpt.stats.stdev}};
  meta["training"] = ckpt.meta.to_json();
  nlohmann::json dir = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    dir.push_back({{"name", name}, {"shape", tensor->shape()}, {"offset", offset}});
    offset += static_cast<uint64_t>(tensor->numel()) * sizeof(float);
  }
  meta["tensors"] = dir;
  const std::string meta_str = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write checkpoint ", path);
  out.write("AKWS", 4);
  wav_detail::write_le<uint32_t>(out, kCheckpointVersion);
  wav_detail::write_le<uint64_t>(out, static_cast<uint64_t>(meta_str.size()));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  for (const auto& [name, tensor] : tensors) {
    out.write(reinterpret_cast<const char*>(tensor->data()),
              static_cast<std::streamsize>(tensor->numel() * sizeof(float)));
  }
  if (!out) fail_runtime("write failed for checkpoint ", path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_runtime("cannot open checkpoint ", path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "AKWS", 4) != 0) {
    fail_runtime("not a checkpoint: ", path);
  }
  const auto version = wav_detail::read_le<uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    fail_runtime("checkpoint version mismatch: file has ", version, ", this build reads ",
                 kCheckpointVersion);
  }
  const auto meta_len = wav_detail::read_le<uint64_t>(in, path);
  std::string meta_str(meta_len, '\0');
  if (!in.read(meta_str.data(), static_cast<std::streamsize>(meta_len))) {
    fail_runtime("truncated checkpoint metadata in ", path);
  }
  nlohmann::json meta = nlohmann::json::parse(meta_str, nullptr, false);
  if (meta.is_discarded()) fail_runtime("corrupt checkpoint metadata in ", path);

  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(meta.at("config"));
  ckpt.labels = meta.at("labels").get<std::vector<std::string>>();
  ckpt.stats.mean = meta.at("feature_stats").at("mean").get<std::vector<float>>();
  ckpt.stats.stdev = meta.at("feature_stats").at("std").get<std::vector<float>>();
  ckpt.meta = TrainMeta::from_json(meta.at("training"));
  if (static_cast<int>(ckpt.labels.size()) != ckpt.config.num_classes) {
    fail_runtime("checkpoint has ", ckpt.labels.size(), " labels for ", ckpt.config.num_classes,
                 " classes");
  }

  // Build the skeleton from the config, then overwrite every tensor from the
  // blob section, validating the directory as we go.
  ckpt.model = KwsModel::build(ckpt.config, 0);
  auto expected = model_detail::checkpoint_tensors(ckpt.model);
  const auto& dir = meta.at("tensors");
  if (dir.size() != expected.size()) {
    fail_runtime("checkpoint tensor count mismatch: file has ", dir.size(), ", config needs ",
                 expected.size());
  }
  for (size_t i = 0; i < expected.size(); ++i) {
    const auto& entry = dir.at(i);
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    if (name != expected[i].first) {
      fail_runtime("checkpoint tensor ", i, " is '", name, "', expected '", expected[i].first,
                   "'");
    }
    if (shape != expected[i].second->shape()) {
      fail_runtime("checkpoint tensor '", name, "' has shape ", shape_str(shape), ", expected ",
                   shape_str(expected[i].second->shape()));
    }
    auto* dst = const_cast<Tensor*>(expected[i].second);
    if (!in.read(reinterpret_cast<char*>(dst->data()),
                 static_cast<std::streamsize>(dst->numel() * sizeof(float)))) {
      fail_runtime("checkpoint is truncated: missing data for tensor '", name, "'");
    }
  }
  return ckpt;
}

}  // namespace adakws
