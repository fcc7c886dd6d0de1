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

// Online test-time adaptation over a batch stream.
//
// Methods: Unadapted (frozen inference), TBN (batch-statistic normalization,
// no gradients), Tent (entropy minimization over all samples), ETA
// (entropy-filtered, entropy-weighted), SAR (entropy-filtered sharpness-aware
// minimization with an EMA reset), and AdaKWS (entropy selection + masked
// pseudo-keyword consistency + sample reweighting). Only BN affine
// parameters ever receive updates; running statistics are never touched
// during adaptation.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adakws/corruption.hpp"
#include "adakws/dataset.hpp"
#include "adakws/model.hpp"
#include "adakws/optimizer.hpp"
#include "adakws/trainer.hpp"

namespace adakws {

enum class Method { Unadapted, TBN, Tent, ETA, SAR, AdaKWS };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Unadapted: return "Unadapted";
    case Method::TBN: return "TBN";
    case Method::Tent: return "Tent";
    case Method::ETA: return "ETA";
    case Method::SAR: return "SAR";
    case Method::AdaKWS: return "AdaKWS";
  }
  return "?";
}

inline Method parse_method(const std::string& name) {
  for (Method m : {Method::Unadapted, Method::TBN, Method::Tent, Method::ETA, Method::SAR,
                   Method::AdaKWS}) {
    if (name == method_name(m)) return m;
  }
  fail_invalid("unknown method '", name,
               "' (expected Unadapted, TBN, Tent, ETA, SAR or AdaKWS)");
}

enum class TauEntMode { FractionOfMaxEntropy, AbsoluteNats };

struct MaskPolicy {
  int num_time_masks = 2;
  int max_time_len = 20;  // frames
  int num_freq_masks = 2;
  int max_freq_len = 5;  // coefficients
  float fill = 0.0f;     // the per-coefficient mean after normalization

  void validate(int64_t rows, int64_t cols) const {
    if (num_time_masks < 0 || num_freq_masks < 0 || max_time_len < 0 || max_freq_len < 0) {
      fail_invalid("mask policy fields must be >= 0");
    }
    if (max_time_len > cols) {
      fail_invalid("max time-mask length ", max_time_len, " exceeds ", cols, " frames");
    }
    if (max_freq_len > rows) {
      fail_invalid("max freq-mask length ", max_freq_len, " exceeds ", rows, " coefficients");
    }
  }
};

struct AdaptConfig {
  Method method = Method::AdaKWS;
  float tau_ent = 0.4f;
  TauEntMode tau_ent_mode = TauEntMode::FractionOfMaxEntropy;
  float tau_pkc = 0.05f;
  float sigma = 0.5f;
  MaskPolicy mask_policy;
  float lr = 1e-3f;
  float momentum = 0.9f;
  int batch_size = 128;
  uint64_t seed = 0;
  // Ablation toggles (AdaKWS only).
  bool use_entropy_sampler = true;
  bool use_pkc_sampler = true;
  bool use_reweighting = true;
  // SAR extras.
  float sar_rho = 0.05f;
  float sar_reset_ema_threshold = 0.2f;
  float sar_ema_momentum = 0.9f;

  void validate() const {
    if (!(tau_ent > 0.0f)) fail_invalid("tau_ent must be > 0, got ", tau_ent);
    if (!(tau_pkc > -1.0f && tau_pkc < 1.0f)) {
      fail_invalid("tau_pkc must lie in (-1, 1), got ", tau_pkc);
    }
    if (!std::isfinite(sigma)) fail_invalid("sigma must be finite");
    if (!(lr > 0.0f)) fail_invalid("adaptation lr must be > 0");
    if (batch_size < 1) fail_invalid("batch_size must be >= 1");
    if (sar_rho < 0.0f) fail_invalid("sar rho must be >= 0");
  }
};

/// Effective entropy threshold: tau_ent * ln(C) in fraction mode, tau_ent
/// nats in absolute mode.
template <typename S>
S effective_tau_ent(const AdaptConfig& config, int num_classes) {
  if (config.tau_ent_mode == TauEntMode::FractionOfMaxEntropy) {
    return static_cast<S>(config.tau_ent) * std::log(static_cast<S>(num_classes));
  }
  return static_cast<S>(config.tau_ent);
}

/// mask_i = entropy_i < tau* (strict).
template <typename S>
std::vector<char> entropy_select(const std::vector<S>& entropies, const AdaptConfig& config,
                                 int num_classes) {
  const S tau = effective_tau_ent<S>(config, num_classes);
  std::vector<char> mask(entropies.size());
  for (size_t i = 0; i < entropies.size(); ++i) mask[i] = entropies[i] < tau ? 1 : 0;
  return mask;
}

// ---------------------------------------------------------------------------
// Feature masking (the PKC transformation)
// ---------------------------------------------------------------------------

struct MaskSpan {
  int axis;  // 0 = frequency rows, 1 = time columns
  int start;
  int len;
};

/// Per-sample draw: num_time_masks spans with length ~ U{0..max_time_len} and
/// start uniform over the valid range, then num_freq_masks spans likewise.
inline std::vector<MaskSpan> draw_masks(const MaskPolicy& policy, int64_t rows, int64_t cols,
                                        Rng& rng) {
  std::vector<MaskSpan> spans;
  for (int i = 0; i < policy.num_time_masks; ++i) {
    const int len = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(policy.max_time_len) + 1));
    const int start = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cols - len) + 1));
    spans.push_back({1, start, len});
  }
  for (int i = 0; i < policy.num_freq_masks; ++i) {
    const int len = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(policy.max_freq_len) + 1));
    const int start = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(rows - len) + 1));
    spans.push_back({0, start, len});
  }
  return spans;
}

template <typename S>
void apply_masks(TensorT<S>& batch, int64_t sample, const std::vector<MaskSpan>& spans, S fill) {
  const int64_t rows = batch.dim(2), cols = batch.dim(3);
  for (const MaskSpan& span : spans) {
    if (span.axis == 1) {
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t t = span.start; t < span.start + span.len; ++t) {
          batch.at(sample, 0, r, t) = fill;
        }
      }
    } else {
      for (int64_t r = span.start; r < span.start + span.len; ++r) {
        for (int64_t t = 0; t < cols; ++t) {
          batch.at(sample, 0, r, t) = fill;
        }
      }
    }
  }
}

/// x' = masked copy of the feature batch; each sample draws its own masks
/// from a sub-seed, so the transform is a pure function of (batch, policy,
/// seed). Masks may overlap.
template <typename S>
TensorT<S> spec_mask(const TensorT<S>& batch, const MaskPolicy& policy, uint64_t seed) {
  if (batch.rank() != 4 || batch.dim(1) != 1) {
    fail_invalid("spec_mask expects [N,1,rows,cols], got ", shape_str(batch.shape()));
  }
  policy.validate(batch.dim(2), batch.dim(3));
  TensorT<S> out = batch;
  for (int64_t n = 0; n < batch.dim(0); ++n) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(n)));
    apply_masks(out, n, draw_masks(policy, batch.dim(2), batch.dim(3), rng),
                static_cast<S>(policy.fill));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PKC scores and sample weights
// ---------------------------------------------------------------------------

template <typename S>
struct PkcResult {
  std::vector<int> pseudo_label;   // c_i = argmax p(x)_i
  std::vector<S> score;            // p(x)_c - p(x')_c
  std::vector<char> mask;          // score > tau_pkc (strict)
};

template <typename S>
PkcResult<S> pkc_scores(const TensorT<S>& probs_x, const TensorT<S>& probs_xp, S tau_pkc) {
  if (!probs_x.same_shape(probs_xp)) {
    fail_invalid("pkc: probability shapes differ: ", shape_str(probs_x.shape()), " vs ",
                 shape_str(probs_xp.shape()));
  }
  const int64_t n = probs_x.dim(0);
  PkcResult<S> r;
  r.pseudo_label = kernels::argmax_rows(probs_x);
  r.score.resize(static_cast<size_t>(n));
  r.mask.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int c = r.pseudo_label[static_cast<size_t>(i)];
    const S drop = probs_x.at(i, c) - probs_xp.at(i, c);
    r.score[static_cast<size_t>(i)] = drop;
    r.mask[static_cast<size_t>(i)] = drop > tau_pkc ? 1 : 0;
  }
  return r;
}

/// alpha_i = exp(-(L_ent,i - sigma)) + exp(L_pkc,i); constant under backprop.
template <typename S>
std::vector<S> sample_weights(const std::vector<S>& entropies, const std::vector<S>& pkc,
                              S sigma) {
  if (entropies.size() != pkc.size()) {
    fail_invalid("sample_weights: ", entropies.size(), " entropies vs ", pkc.size(),
                 " pkc scores");
  }
  std::vector<S> alpha(entropies.size());
  for (size_t i = 0; i < alpha.size(); ++i) {
    alpha[i] = std::exp(-(entropies[i] - sigma)) + std::exp(pkc[i]);
  }
  return alpha;
}

// ---------------------------------------------------------------------------
// Step reports
// ---------------------------------------------------------------------------

struct StepReport {
  int batch_index = 0;
  std::vector<float> entropy;
  std::vector<float> pkc_score;      // zeros when the x' pass was not needed
  std::vector<int> pseudo_label;     // -1 when the x' pass was not needed
  std::vector<float> alpha;          // recorded only for selected samples, else 0
  std::vector<char> selected_ent;
  std::vector<char> selected_pkc;
  std::vector<char> selected_final;
  std::vector<int> predictions;
  bool update_applied = false;
  float loss = 0.0f;

  int64_t n_selected() const {
    int64_t n = 0;
    for (char c : selected_final) n += c != 0;
    return n;
  }

  nlohmann::json to_json() const {
    int64_t ent = 0, pkc = 0;
    for (char c : selected_ent) ent += c != 0;
    for (char c : selected_pkc) pkc += c != 0;
    double mean_ent = 0.0;
    for (float e : entropy) mean_ent += e;
    if (!entropy.empty()) mean_ent /= static_cast<double>(entropy.size());
    return {{"batch", batch_index},
            {"n", entropy.size()},
            {"selected_ent", ent},
            {"selected_pkc", pkc},
            {"selected_final", n_selected()},
            {"mean_entropy", mean_ent},
            {"update_applied", update_applied},
            {"loss", loss}};
  }
};

struct ConditionReport {
  std::string noise_label;
  std::string method;
  double accuracy = 0.0;
  int64_t n_samples = 0;
  int64_t n_updates = 0;
  std::vector<StepReport> steps;
  double wall_seconds = 0.0;  // excluded from the determinism contract

  nlohmann::json to_json(bool include_wall_clock = true) const {
    nlohmann::json steps_j = nlohmann::json::array();
    for (const auto& s : steps) steps_j.push_back(s.to_json());
    nlohmann::json j{{"noise", noise_label}, {"method", method},       {"accuracy", accuracy},
                     {"n_samples", n_samples}, {"n_updates", n_updates}, {"steps", steps_j}};
    if (include_wall_clock) j["wall_seconds"] = wall_seconds;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

namespace tta_detail {
inline constexpr uint64_t kCorruptStream = 0x636f7272;  // per-utterance corruption seeds
inline constexpr uint64_t kMaskStream = 0x6d61736b;     // per-batch mask seeds
}  // namespace tta_detail

/// One adaptation stream: owns a model replica and optimizer state. Strictly
/// sequential; create one engine per (method, condition, seed) cell.
class TtaEngine {
 public:
  TtaEngine(const Checkpoint& checkpoint, const AdaptConfig& config)
      : initial_(checkpoint.model),
        model_(checkpoint.model),
        config_(config),
        num_classes_(checkpoint.config.num_classes),
        opt_(config.lr, config.momentum) {
    config_.validate();
    if (config_.method != Method::Unadapted && config_.method != Method::TBN &&
        model_.param_groups().adaptable.empty()) {
      fail_invalid("no adaptable parameters: the model has no BN affine leaves to update");
    }
  }

  const AdaptConfig& config() const { return config_; }
  KwsModel& model() { return model_; }

  StepReport step(const Tensor& features, int batch_index) {
    switch (config_.method) {
      case Method::Unadapted: return forward_only(features, batch_index, BnMode::Running);
      case Method::TBN: return forward_only(features, batch_index, BnMode::BatchStat);
      case Method::Tent: {
        AdaptConfig tent = config_;
        tent.use_entropy_sampler = false;
        tent.use_pkc_sampler = false;
        tent.use_reweighting = false;
        return selective_entropy_step(features, batch_index, tent, WeightMode::Unit);
      }
      case Method::ETA: {
        AdaptConfig eta = config_;
        eta.use_entropy_sampler = true;
        eta.use_pkc_sampler = false;
        eta.use_reweighting = false;
        return selective_entropy_step(features, batch_index, eta, WeightMode::EtaExp);
      }
      case Method::AdaKWS:
        return selective_entropy_step(features, batch_index, config_,
                                      config_.use_reweighting ? WeightMode::Alpha
                                                              : WeightMode::Unit);
      case Method::SAR: return sar_step(features, batch_index);
    }
    fail_invalid("unhandled method");
  }

  /// Bitwise check that no frozen-group parameter or running statistic moved
  /// away from the checkpoint. Throws on violation.
  void check_frozen_intact() {
    auto now = model_.param_groups();
    auto then = initial_.param_groups();
    for (size_t i = 0; i < now.frozen.size(); ++i) {
      if (!now.frozen[i]->value.bitwise_equal(then.frozen[i]->value)) {
        fail_runtime("frozen parameter '", now.frozen[i]->name,
                     "' changed during adaptation");
      }
    }
    auto rs_now = model_.running_stats();
    auto rs_then = initial_.running_stats();
    for (size_t i = 0; i < rs_now.size(); ++i) {
      if (!rs_now[i].second->mean.bitwise_equal(rs_then[i].second->mean) ||
          !rs_now[i].second->var.bitwise_equal(rs_then[i].second->var)) {
        fail_runtime("running statistics '", rs_now[i].first, "' changed during adaptation");
      }
    }
  }

 private:
  enum class WeightMode { Unit, Alpha, EtaExp };

  static std::vector<float> to_vector(const Tensor& t) {
    return {t.data(), t.data() + t.numel()};
  }

  StepReport forward_only(const Tensor& features, int batch_index, BnMode mode) {
    StepReport report;
    report.batch_index = batch_index;
    Tensor logits = model_.forward(features, mode);
    auto se = kernels::softmax_entropy_forward(logits);
    report.entropy = to_vector(se.entropy);
    report.predictions = kernels::argmax_rows(se.probs);
    const size_t n = report.entropy.size();
    report.pkc_score.assign(n, 0.0f);
    report.pseudo_label.assign(n, -1);
    report.alpha.assign(n, 0.0f);
    report.selected_ent.assign(n, 0);
    report.selected_pkc.assign(n, 0);
    report.selected_final.assign(n, 0);
    report.update_applied = false;
    return report;
  }

  /// Shared core of Tent / ETA / AdaKWS. One gradient-recording BatchStat
  /// forward on x scores the batch; selection and weights are assembled from
  /// it (plus the x' pass when PKC or reweighting needs it); a single SGD
  /// step lands on the BN affine group when the selection is non-empty.
  StepReport selective_entropy_step(const Tensor& features, int batch_index,
                                    const AdaptConfig& cfg, WeightMode weight_mode) {
    StepReport report;
    report.batch_index = batch_index;
    const size_t n = static_cast<size_t>(features.dim(0));

    Tape tape;
    auto logits = model_.forward_recorded(features, BnMode::BatchStat, tape, false);
    auto se = tape.softmax_entropy(logits);
    const Tensor& probs = tape.value(se.probs);
    report.entropy = to_vector(tape.value(se.entropy));
    report.predictions = kernels::argmax_rows(probs);

    report.selected_ent = cfg.use_entropy_sampler
                              ? entropy_select(report.entropy, cfg, num_classes_)
                              : std::vector<char>(n, 1);

    const bool need_xp = cfg.use_pkc_sampler || weight_mode == WeightMode::Alpha;
    PkcResult<float> pkc;
    if (need_xp) {
      const uint64_t mask_seed = derive_seed(derive_seed(cfg.seed, tta_detail::kMaskStream),
                                             static_cast<uint64_t>(batch_index));
      Tensor masked = spec_mask(features, cfg.mask_policy, mask_seed);
      Tensor logits_xp = model_.forward(masked, BnMode::BatchStat);
      auto se_xp = kernels::softmax_entropy_forward(logits_xp);
      pkc = pkc_scores(probs, se_xp.probs, cfg.tau_pkc);
      report.pkc_score = pkc.score;
      report.pseudo_label = pkc.pseudo_label;
    } else {
      report.pkc_score.assign(n, 0.0f);
      report.pseudo_label.assign(n, -1);
    }
    report.selected_pkc =
        cfg.use_pkc_sampler ? pkc.mask : std::vector<char>(n, 1);

    report.selected_final.resize(n);
    for (size_t i = 0; i < n; ++i) {
      report.selected_final[i] = (report.selected_ent[i] && report.selected_pkc[i]) ? 1 : 0;
    }

    std::vector<float> weights(n, 1.0f);
    if (weight_mode == WeightMode::Alpha) {
      weights = sample_weights(report.entropy, pkc.score, cfg.sigma);
    } else if (weight_mode == WeightMode::EtaExp) {
      const float pivot = effective_tau_ent<float>(cfg, num_classes_);
      for (size_t i = 0; i < n; ++i) weights[i] = std::exp(pivot - report.entropy[i]);
    }
    report.alpha.assign(n, 0.0f);
    for (size_t i = 0; i < n; ++i) {
      if (report.selected_final[i]) report.alpha[i] = weights[i];
    }

    if (report.n_selected() == 0) {
      report.update_applied = false;
      return report;  // tape dropped, model untouched
    }

    auto loss = tape.masked_weighted_mean(se.entropy, weights, report.selected_final);
    report.loss = tape.value(loss)[0];
    tape.backward(loss);
    apply_adaptable_step(tape.trainable_gradients());
    report.update_applied = true;
    return report;
  }

  /// SAR: entropy-filtered first pass gives the ascent direction; parameters
  /// are perturbed by rho * g / ||g||2 over the adaptable group, gradients
  /// re-evaluated at the perturbed point (same selection), parameters
  /// restored, and the optimizer steps with the second gradients. An EMA of
  /// the loss triggers a reset to the checkpoint when it sinks below the
  /// threshold.
  StepReport sar_step(const Tensor& features, int batch_index) {
    StepReport report;
    report.batch_index = batch_index;
    const size_t n = static_cast<size_t>(features.dim(0));

    Tape tape1;
    auto logits1 = model_.forward_recorded(features, BnMode::BatchStat, tape1, false);
    auto se1 = tape1.softmax_entropy(logits1);
    report.entropy = to_vector(tape1.value(se1.entropy));
    report.predictions = kernels::argmax_rows(tape1.value(se1.probs));
    report.pkc_score.assign(n, 0.0f);
    report.pseudo_label.assign(n, -1);
    report.selected_ent = entropy_select(report.entropy, config_, num_classes_);
    report.selected_pkc.assign(n, 1);
    report.selected_final = report.selected_ent;
    report.alpha.assign(n, 0.0f);
    for (size_t i = 0; i < n; ++i) {
      if (report.selected_final[i]) report.alpha[i] = 1.0f;
    }

    if (report.n_selected() == 0) {
      report.update_applied = false;
      return report;
    }

    const std::vector<float> unit(n, 1.0f);
    auto loss1 = tape1.masked_weighted_mean(se1.entropy, unit, report.selected_final);
    tape1.backward(loss1);
    const auto grads1 = tape1.trainable_gradients();

    auto groups = model_.param_groups();
    double norm_sq = 0.0;
    for (auto* p : groups.adaptable) {
      const Tensor& g = *grads1.at(p->name);
      for (int64_t i = 0; i < g.numel(); ++i) {
        norm_sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
      }
    }
    const double norm = std::sqrt(norm_sq);

    std::map<std::string, Tensor> saved;
    const bool perturb = config_.sar_rho > 0.0f && norm > 0.0;
    if (perturb) {
      const float scale = static_cast<float>(config_.sar_rho / norm);
      for (auto* p : groups.adaptable) {
        saved.emplace(p->name, p->value);
        const Tensor& g = *grads1.at(p->name);
        for (int64_t i = 0; i < p->value.numel(); ++i) p->value[i] += scale * g[i];
      }
    }

    Tape tape2;
    auto logits2 = model_.forward_recorded(features, BnMode::BatchStat, tape2, false);
    auto se2 = tape2.softmax_entropy(logits2);
    auto loss2 = tape2.masked_weighted_mean(se2.entropy, unit, report.selected_final);
    report.loss = tape2.value(loss2)[0];
    tape2.backward(loss2);

    if (perturb) {
      for (auto* p : groups.adaptable) p->value = saved.at(p->name);
    }
    apply_adaptable_step(tape2.trainable_gradients());
    report.update_applied = true;

    // EMA of the loss; a collapse toward zero entropy resets to the checkpoint.
    sar_ema_ = sar_ema_set_ ? config_.sar_ema_momentum * sar_ema_ +
                                  (1.0 - config_.sar_ema_momentum) * report.loss
                            : report.loss;
    sar_ema_set_ = true;
    if (sar_ema_ < config_.sar_reset_ema_threshold) {
      model_ = initial_;
      opt_.reset();
      sar_ema_set_ = false;
    }
    return report;
  }

  void apply_adaptable_step(const std::map<std::string, const Tensor*>& grads) {
    std::vector<NamedTensorRef<float>> refs;
    for (auto* p : model_.param_groups().adaptable) refs.push_back({p->name, &p->value});
    opt_.step(refs, grads);
  }

  KwsModel initial_;
  KwsModel model_;
  AdaptConfig config_;
  int num_classes_;
  SgdMomentum opt_;
  double sar_ema_ = 0.0;
  bool sar_ema_set_ = false;
};

// ---------------------------------------------------------------------------
// Condition streams
// ---------------------------------------------------------------------------

/// Materializes the corrupted, featurized batch stream for one condition.
/// Corruption sub-seeds derive from (seed, utterance index in the manifest),
/// so the stream is a pure function of its arguments and identical for every
/// method sharing (manifest, noise, seed, batch_size).
inline std::vector<Batch> prepare_condition_stream(const Manifest& manifest,
                                                   const NoiseSpec& noise, const NoiseBank* bank,
                                                   const AdaptConfig& config,
                                                   const MfccExtractor& extractor,
                                                   const FeatureStats& stats) {
  const uint64_t corrupt_base = derive_seed(config.seed, tta_detail::kCorruptStream);
  ClipTransform transform;
  if (noise.kind != NoiseSpec::Kind::None) {
    transform = [&noise, bank, corrupt_base](const AudioClip& clip, size_t entry_index) {
      return corrupt_clip(clip, noise, bank, derive_seed(corrupt_base, entry_index));
    };
  }
  return make_batches(manifest, config.batch_size, config.seed, extractor, stats, transform,
                      /*with_labels=*/true);
}

/// Adapt-then-score over a prepared stream. Model state persists across
/// batches; the frozen group is verified bitwise at the end.
inline ConditionReport run_condition_stream(const Checkpoint& checkpoint,
                                            const std::vector<Batch>& stream,
                                            const NoiseSpec& noise, const AdaptConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  TtaEngine engine(checkpoint, config);
  ConditionReport report;
  report.noise_label = noise.label();
  report.method = method_name(config.method);
  int64_t correct = 0, total = 0;
  for (size_t b = 0; b < stream.size(); ++b) {
    const Batch& batch = stream[b];
    if (batch.labels.empty()) fail_invalid("run_stream needs labeled batches to score accuracy");
    StepReport step = engine.step(batch.features, static_cast<int>(b));
    for (size_t i = 0; i < batch.labels.size(); ++i) {
      correct += step.predictions[i] == batch.labels[i];
    }
    total += static_cast<int64_t>(batch.labels.size());
    report.n_updates += step.update_applied ? 1 : 0;
    report.steps.push_back(std::move(step));
  }
  engine.check_frozen_intact();
  report.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  report.n_samples = total;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// Full per-condition run: fresh model + optimizer from the checkpoint,
/// seeded shuffled batches, corrupt -> extract -> adapt-then-score.
inline ConditionReport run_stream(const Checkpoint& checkpoint, const Manifest& manifest,
                                  const NoiseSpec& noise, const NoiseBank* bank,
                                  const AdaptConfig& config, const MfccExtractor& extractor) {
  const auto stream =
      prepare_condition_stream(manifest, noise, bank, config, extractor, checkpoint.stats);
  return run_condition_stream(checkpoint, stream, noise, config);
}

}  // namespace adakws
