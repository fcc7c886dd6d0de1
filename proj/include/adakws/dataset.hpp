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

// Labeled keyword audio: Speech-Commands-style directory scanning, a
// synthetic tone-triad dataset for desk-scale runs, and deterministic
// batch assembly.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "adakws/mfcc.hpp"
#include "adakws/rng.hpp"
#include "adakws/tensor.hpp"
#include "adakws/wav.hpp"

namespace adakws {

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

struct ManifestEntry {
  std::string path;       // absolute or dataset-root-relative file path
  std::string id;         // "keyword/filename.wav"
  int label = 0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;  // sorted by id
  std::vector<std::string> labels;     // index order
  Split split = Split::Train;

  size_t size() const { return entries.size(); }
};

struct DatasetSplits {
  Manifest train;
  Manifest val;
  Manifest test;
};

namespace dataset_detail {

inline std::set<std::string> read_list_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_runtime("cannot open list file ", path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

}  // namespace dataset_detail

/// Scans `dir` expecting `<keyword>/<file>.wav`. Files listed in
/// `testing_list` go to Test, `validation_list` to Val, the remainder to
/// Train. When both list paths are empty a deterministic hash-of-filename
/// split (80/10/10) is used instead. Label order is the sorted keyword list.
inline DatasetSplits scan_gsc(const std::string& dir, std::vector<std::string> keywords,
                              const std::string& validation_list,
                              const std::string& testing_list) {
  if (keywords.empty()) fail_invalid("no keywords selected");
  std::sort(keywords.begin(), keywords.end());
  keywords.erase(std::unique(keywords.begin(), keywords.end()), keywords.end());

  std::vector<std::string> missing;
  for (const auto& kw : keywords) {
    if (!std::filesystem::is_directory(std::filesystem::path(dir) / kw)) missing.push_back(kw);
  }
  if (!missing.empty()) {
    std::string joined;
    for (const auto& m : missing) joined += (joined.empty() ? "" : ", ") + m;
    fail_runtime("keyword directories missing under ", dir, ": ", joined);
  }

  const bool use_lists = !validation_list.empty() || !testing_list.empty();
  std::set<std::string> val_set, test_set;
  if (!validation_list.empty()) val_set = dataset_detail::read_list_file(validation_list);
  if (!testing_list.empty()) test_set = dataset_detail::read_list_file(testing_list);
  for (const auto& id : val_set) {
    if (test_set.count(id)) {
      fail_runtime("file appears in both validation and testing lists: ", id);
    }
  }

  DatasetSplits out;
  out.train.labels = out.val.labels = out.test.labels = keywords;
  out.train.split = Split::Train;
  out.val.split = Split::Val;
  out.test.split = Split::Test;

  for (size_t k = 0; k < keywords.size(); ++k) {
    const auto kw_dir = std::filesystem::path(dir) / keywords[k];
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(kw_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") {
        files.push_back(e.path().filename().string());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ManifestEntry entry;
      entry.path = (kw_dir / f).string();
      entry.id = keywords[k] + "/" + f;
      entry.label = static_cast<int>(k);
      Manifest* dest;
      if (use_lists) {
        dest = test_set.count(entry.id) ? &out.test
               : val_set.count(entry.id) ? &out.val
                                         : &out.train;
      } else {
        const uint64_t bucket = fnv1a64(entry.id) % 100;
        dest = bucket < 80 ? &out.train : bucket < 90 ? &out.val : &out.test;
      }
      dest->entries.push_back(std::move(entry));
    }
  }
  for (Manifest* m : {&out.train, &out.val, &out.test}) {
    std::sort(m->entries.begin(), m->entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic tone-triad keyword set
// ---------------------------------------------------------------------------

/// Each class is a sequence of three enveloped tones ("phonemes"), so time
/// masks can hide a class-bearing segment and frequency masks a class-bearing
/// band. Clips are 1 s at 16 kHz, peak amplitude 0.3, with +/-3% frequency
/// and +/-10% segment-duration jitter per clip.
struct SynthSpec {
  int num_classes = 10;
  int clips_per_class = 200;
  uint64_t seed = 0;
};

namespace dataset_detail {

struct ToneTemplate {
  double freqs_hz[3];
  double seg_frac[3];  // nominal segment duration fractions, sum 1
};

inline std::vector<ToneTemplate> make_templates(const SynthSpec& spec) {
  if (spec.num_classes < 2) fail_invalid("synthetic set needs >= 2 classes");
  Rng rng(derive_seed(spec.seed, 0x74656d70));
  std::vector<ToneTemplate> templates;
  std::set<std::array<int, 3>> used;
  while (static_cast<int>(templates.size()) < spec.num_classes) {
    ToneTemplate t{};
    std::array<int, 3> key{};
    for (int i = 0; i < 3; ++i) {
      // Log-uniform over [200, 4000] Hz, quantized to a 50 Hz grid so
      // distinctness is meaningful under the +/-3% jitter.
      const double f = std::exp(rng.uniform(std::log(200.0), std::log(4000.0)));
      const int q = static_cast<int>(std::lround(f / 50.0)) * 50;
      t.freqs_hz[i] = static_cast<double>(std::clamp(q, 200, 4000));
      key[static_cast<size_t>(i)] = std::clamp(q, 200, 4000);
    }
    if (!used.insert(key).second) continue;  // template collision, redraw
    t.seg_frac[0] = t.seg_frac[1] = t.seg_frac[2] = 1.0 / 3.0;
    templates.push_back(t);
  }
  return templates;
}

inline std::vector<float> render_clip(const ToneTemplate& tpl, uint64_t seed) {
  Rng rng(seed);
  double durs[3];
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    durs[i] = tpl.seg_frac[i] * (1.0 + 0.1 * rng.uniform(-1.0, 1.0));
    total += durs[i];
  }
  double freqs[3];
  for (int i = 0; i < 3; ++i) {
    freqs[i] = tpl.freqs_hz[i] * (1.0 + 0.03 * rng.uniform(-1.0, 1.0));
  }
  std::vector<float> samples(kClipSamples, 0.0f);
  constexpr double kAmp = 0.3;
  double cursor = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double frac = durs[i] / total;
    const int64_t start = static_cast<int64_t>(std::lround(cursor * kClipSamples));
    cursor += frac;
    const int64_t end = i == 2 ? kClipSamples : static_cast<int64_t>(std::lround(cursor * kClipSamples));
    const int64_t len = end - start;
    if (len <= 0) continue;
    const int64_t ramp = std::max<int64_t>(1, len / 10);
    const double w = 2.0 * M_PI * freqs[i] / kSampleRate;
    for (int64_t s = 0; s < len; ++s) {
      double env = 1.0;
      if (s < ramp) env = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(s) / static_cast<double>(ramp));
      else if (s >= len - ramp) env = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(len - 1 - s) / static_cast<double>(ramp));
      samples[static_cast<size_t>(start + s)] +=
          static_cast<float>(kAmp * env * std::sin(w * static_cast<double>(s)));
    }
  }
  return samples;
}

}  // namespace dataset_detail

/// Generates the synthetic dataset under `out_dir` in Speech-Commands layout
/// (`<label>/<clip>.wav` + labels.txt + validation_list.txt +
/// testing_list.txt) and returns the 80/10/10 splits (seeded permutation per
/// class). Same spec -> bitwise-identical files.
inline DatasetSplits synth_generate(const SynthSpec& spec, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const auto templates = dataset_detail::make_templates(spec);

  std::vector<std::string> labels;
  for (int c = 0; c < spec.num_classes; ++c) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "kw%02d", c);
    labels.push_back(buf);
  }

  fs::create_directories(out_dir);
  std::ofstream labels_out(fs::path(out_dir) / "labels.txt");
  for (const auto& l : labels) labels_out << l << "\n";
  labels_out.close();

  std::ofstream val_out(fs::path(out_dir) / "validation_list.txt");
  std::ofstream test_out(fs::path(out_dir) / "testing_list.txt");

  DatasetSplits out;
  out.train.labels = out.val.labels = out.test.labels = labels;
  out.train.split = Split::Train;
  out.val.split = Split::Val;
  out.test.split = Split::Test;

  for (int c = 0; c < spec.num_classes; ++c) {
    fs::create_directories(fs::path(out_dir) / labels[static_cast<size_t>(c)]);
    std::vector<int> order(static_cast<size_t>(spec.clips_per_class));
    for (int i = 0; i < spec.clips_per_class; ++i) order[static_cast<size_t>(i)] = i;
    Rng split_rng(derive_seed(spec.seed, 0x73706c69 + static_cast<uint64_t>(c)));
    split_rng.shuffle(order);
    const int n_val = spec.clips_per_class / 10;
    const int n_test = spec.clips_per_class / 10;

    for (int i = 0; i < spec.clips_per_class; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "clip_%05d.wav", i);
      const std::string id = labels[static_cast<size_t>(c)] + "/" + name;
      const fs::path path = fs::path(out_dir) / id;
      const uint64_t clip_seed =
          derive_seed(spec.seed, 0x636c6970 + static_cast<uint64_t>(c) * 100003ULL +
                                     static_cast<uint64_t>(i));
      write_wav_pcm16(path.string(),
                      dataset_detail::render_clip(templates[static_cast<size_t>(c)], clip_seed));
    }
    for (int rank = 0; rank < spec.clips_per_class; ++rank) {
      const int i = order[static_cast<size_t>(rank)];
      char name[32];
      std::snprintf(name, sizeof(name), "clip_%05d.wav", i);
      const std::string id = labels[static_cast<size_t>(c)] + "/" + name;
      ManifestEntry entry{(fs::path(out_dir) / id).string(), id, c};
      if (rank < n_val) {
        out.val.entries.push_back(entry);
      } else if (rank < n_val + n_test) {
        out.test.entries.push_back(entry);
      } else {
        out.train.entries.push_back(entry);
      }
    }
  }
  for (Manifest* m : {&out.train, &out.val, &out.test}) {
    std::sort(m->entries.begin(), m->entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
    std::ofstream* lst = m->split == Split::Val ? &val_out : m->split == Split::Test ? &test_out : nullptr;
    if (lst) {
      for (const auto& e : m->entries) (*lst) << e.id << "\n";
    }
  }
  return out;
}

inline std::vector<std::string> load_labels_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_runtime("cannot open labels file ", path);
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) labels.push_back(line);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// One model input batch: features [N, 1, 40, T].
struct Batch {
  Tensor features;
  std::vector<int> labels;        // empty during pure deployment
  std::vector<std::string> ids;

  int64_t size() const { return features.empty() ? 0 : features.dim(0); }
};

/// Seeded shuffle of [0, n) chopped into batches; the final partial batch is
/// kept. Pure function of (n, batch_size, seed).
inline std::vector<std::vector<size_t>> batch_index_plan(size_t n, int batch_size,
                                                         uint64_t seed) {
  if (batch_size < 1) fail_invalid("batch_size must be >= 1, got ", batch_size);
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<size_t>> plan;
  for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(n, start + static_cast<size_t>(batch_size));
    plan.emplace_back(order.begin() + static_cast<int64_t>(start),
                      order.begin() + static_cast<int64_t>(end));
  }
  return plan;
}

/// Optional waveform hook applied before feature extraction (corruption).
/// Receives the entry's index within the manifest for sub-seed derivation.
using ClipTransform = std::function<AudioClip(const AudioClip&, size_t entry_index)>;

inline Batch assemble_batch(const Manifest& manifest, const std::vector<size_t>& indices,
                            const MfccExtractor& extractor, const FeatureStats& stats,
                            const ClipTransform& transform, bool with_labels) {
  if (indices.empty()) fail_invalid("empty batch");
  Batch batch;
  Tensor* features = &batch.features;
  for (size_t row = 0; row < indices.size(); ++row) {
    const ManifestEntry& entry = manifest.entries[indices[row]];
    AudioClip clip;
    try {
      clip = load_wav(entry.path);
    } catch (const std::exception& e) {
      fail_runtime("failed to read ", entry.path, ": ", e.what());
    }
    if (transform) clip = transform(clip, indices[row]);
    FeatureMap fm = normalize(extractor.extract(clip), stats);
    if (row == 0) {
      *features = Tensor({static_cast<int64_t>(indices.size()), 1, fm.rows(), fm.cols()});
    }
    if (fm.rows() != features->dim(2) || fm.cols() != features->dim(3)) {
      fail_runtime("inconsistent feature shape for ", entry.path);
    }
    std::copy(fm.coeffs.data(), fm.coeffs.data() + fm.coeffs.numel(),
              features->data() + static_cast<int64_t>(row) * fm.coeffs.numel());
    if (with_labels) batch.labels.push_back(entry.label);
    batch.ids.push_back(entry.id);
  }
  return batch;
}

/// Deterministic batch stream: seeded shuffle, MFCC + normalization, final
/// partial batch kept.
inline std::vector<Batch> make_batches(const Manifest& manifest, int batch_size, uint64_t seed,
                                       const MfccExtractor& extractor, const FeatureStats& stats,
                                       const ClipTransform& transform = nullptr,
                                       bool with_labels = true) {
  std::vector<Batch> out;
  for (const auto& indices : batch_index_plan(manifest.size(), batch_size, seed)) {
    out.push_back(assemble_batch(manifest, indices, extractor, stats, transform, with_labels));
  }
  return out;
}

}  // namespace adakws
