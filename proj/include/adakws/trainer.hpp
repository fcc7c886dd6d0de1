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

// Source-domain training: label-smoothed cross entropy, SGD with momentum and
// a cosine learning-rate schedule, BN in Train mode. Emits the checkpoint of
// the best-validation epoch; feature statistics are computed over the train
// split before training so they can ride along in the checkpoint.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "adakws/dataset.hpp"
#include "adakws/model.hpp"
#include "adakws/optimizer.hpp"

namespace adakws {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  float lr = 0.05f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  float label_smoothing = 0.1f;
  uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) fail_invalid("epochs must be >= 1");
    if (batch_size < 1) fail_invalid("batch_size must be >= 1");
    if (!(lr > 0.0f)) fail_invalid("learning rate must be > 0");
    if (label_smoothing < 0.0f || label_smoothing >= 1.0f) {
      fail_invalid("label smoothing must be in [0, 1), got ", label_smoothing);
    }
  }
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

/// Mean argmax correctness; argmax ties break toward the lowest class index.
inline double accuracy_from_logits(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.dim(0) != static_cast<int64_t>(labels.size())) {
    fail_invalid("accuracy: ", labels.size(), " labels for ", logits.dim(0), " rows");
  }
  const auto preds = kernels::argmax_rows(logits);
  int64_t correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (preds[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// In-memory normalized features for one manifest, extraction done once.
struct FeatureCache {
  std::vector<Tensor> features;  // each [40, T]
  std::vector<int> labels;
  int64_t rows = 0;
  int64_t cols = 0;

  size_t size() const { return features.size(); }

  Tensor gather(const std::vector<size_t>& indices) const {
    Tensor out({static_cast<int64_t>(indices.size()), 1, rows, cols});
    for (size_t r = 0; r < indices.size(); ++r) {
      const Tensor& src = features[indices[r]];
      std::copy(src.data(), src.data() + src.numel(),
                out.data() + static_cast<int64_t>(r) * src.numel());
    }
    return out;
  }

  std::vector<int> gather_labels(const std::vector<size_t>& indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (size_t i : indices) out.push_back(labels[i]);
    return out;
  }
};

inline FeatureCache cache_features(const Manifest& manifest, const MfccExtractor& extractor,
                                   const FeatureStats* stats) {
  FeatureCache cache;
  for (const auto& entry : manifest.entries) {
    AudioClip clip;
    try {
      clip = load_wav(entry.path);
    } catch (const std::exception& e) {
      fail_runtime("failed to read ", entry.path, ": ", e.what());
    }
    FeatureMap fm = extractor.extract(clip);
    if (stats) fm = normalize(fm, *stats);
    if (cache.features.empty()) {
      cache.rows = fm.rows();
      cache.cols = fm.cols();
    }
    cache.features.push_back(std::move(fm.coeffs));
    cache.labels.push_back(entry.label);
  }
  return cache;
}

/// Frozen-mode evaluation (Running BN) over a manifest.
inline double evaluate(KwsModel& model, const Manifest& manifest, const MfccExtractor& extractor,
                       const FeatureStats& stats, int batch_size = 64) {
  if (manifest.entries.empty()) fail_invalid("evaluate: empty manifest");
  FeatureCache cache = cache_features(manifest, extractor, &stats);
  int64_t correct = 0;
  for (size_t start = 0; start < cache.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = start; i < std::min(cache.size(), start + static_cast<size_t>(batch_size)); ++i) {
      idx.push_back(i);
    }
    Tensor logits = model.forward(cache.gather(idx), BnMode::Running);
    const auto preds = kernels::argmax_rows(logits);
    for (size_t r = 0; r < idx.size(); ++r) {
      if (preds[r] == cache.labels[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(cache.size());
}

namespace trainer_detail {

inline double cosine_lr(double base, int epoch, int total) {
  return base * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(total)));
}

inline double eval_cached(KwsModel& model, const FeatureCache& cache, int batch_size) {
  int64_t correct = 0;
  for (size_t start = 0; start < cache.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = start; i < std::min(cache.size(), start + static_cast<size_t>(batch_size)); ++i) {
      idx.push_back(i);
    }
    Tensor logits = model.forward(cache.gather(idx), BnMode::Running);
    const auto preds = kernels::argmax_rows(logits);
    for (size_t r = 0; r < idx.size(); ++r) {
      if (preds[r] == cache.labels[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(cache.size());
}

}  // namespace trainer_detail

inline TrainResult train_source(const TrainConfig& config, const ModelConfig& model_config,
                                const Manifest& train_manifest, const Manifest& val_manifest,
                                const MfccExtractor& extractor) {
  config.validate();
  model_config.validate();
  if (train_manifest.entries.empty()) fail_invalid("train split is empty");
  if (val_manifest.entries.empty()) fail_invalid("validation split is empty");

  std::vector<int> per_class(static_cast<size_t>(model_config.num_classes), 0);
  for (const auto& e : train_manifest.entries) {
    if (e.label < 0 || e.label >= model_config.num_classes) {
      fail_invalid("label ", e.label, " out of range for ", model_config.num_classes, " classes");
    }
    ++per_class[static_cast<size_t>(e.label)];
  }
  for (int c = 0; c < model_config.num_classes; ++c) {
    if (per_class[static_cast<size_t>(c)] == 0) {
      fail_invalid("train split has no samples for class ", c, " ('",
                   train_manifest.labels[static_cast<size_t>(c)], "')");
    }
  }

  // Standardization stats come from the raw train features, before training.
  FeatureCache raw = cache_features(train_manifest, extractor, nullptr);
  FeatureStatsAccumulator acc(static_cast<int>(raw.rows));
  for (const auto& f : raw.features) acc.add(FeatureMap{f, extractor.params()});
  const FeatureStats stats = acc.finish();
  FeatureCache train_cache;
  train_cache.rows = raw.rows;
  train_cache.cols = raw.cols;
  train_cache.labels = raw.labels;
  for (auto& f : raw.features) {
    FeatureMap fm{std::move(f), extractor.params()};
    train_cache.features.push_back(normalize(fm, stats).coeffs);
  }
  FeatureCache val_cache = cache_features(val_manifest, extractor, &stats);

  KwsModel model = KwsModel::build(model_config, config.seed);
  SgdMomentum opt(config.lr, config.momentum, config.weight_decay);

  TrainResult result;
  KwsModel best_model = model;
  double best_val = -1.0;
  int best_epoch = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = trainer_detail::cosine_lr(config.lr, epoch, config.epochs);
    opt.set_lr(static_cast<float>(lr));
    const auto plan = batch_index_plan(train_cache.size(), config.batch_size,
                                       derive_seed(config.seed, 0xe0000 + static_cast<uint64_t>(epoch)));
    double loss_sum = 0.0;
    int64_t loss_count = 0;
    for (size_t b = 0; b < plan.size(); ++b) {
      Tensor features = train_cache.gather(plan[b]);
      const std::vector<int> labels = train_cache.gather_labels(plan[b]);
      Tape tape;
      auto logits = model.forward_recorded(features, BnMode::Train, tape, /*train_all=*/true);
      auto loss = tape.cross_entropy_smooth(logits, labels, config.label_smoothing);
      const double loss_v = tape.value(loss)[0];
      if (!std::isfinite(loss_v)) {
        fail_runtime("training diverged (loss ", loss_v, ") at epoch ", epoch, ", batch ", b);
      }
      tape.backward(loss);
      std::vector<NamedTensorRef<float>> refs;
      for (ParamT<float>* p : model.parameters()) refs.push_back({p->name, &p->value});
      opt.step(refs, tape.trainable_gradients());
      loss_sum += loss_v * static_cast<double>(labels.size());
      loss_count += static_cast<int64_t>(labels.size());
    }
    const double val_acc = trainer_detail::eval_cached(model, val_cache, config.batch_size);
    result.metrics.push_back({epoch, lr, loss_sum / static_cast<double>(loss_count), val_acc});
    if (val_acc > best_val) {
      best_val = val_acc;
      best_epoch = epoch;
      best_model = model;
    }
  }

  result.checkpoint.config = model_config;
  result.checkpoint.labels = train_manifest.labels;
  result.checkpoint.stats = stats;
  result.checkpoint.meta = {config.seed, config.epochs, best_epoch, best_val};
  result.checkpoint.model = std::move(best_model);
  return result;
}

inline nlohmann::json metrics_to_json(const std::vector<EpochMetrics>& metrics) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : metrics) {
    arr.push_back({{"epoch", m.epoch},
                   {"lr", m.lr},
                   {"train_loss", m.train_loss},
                   {"val_accuracy", m.val_accuracy}});
  }
  return arr;
}

}  // namespace adakws
