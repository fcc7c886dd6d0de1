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

// Deterministic waveform corruption: additive Gaussian noise at severity
// delta, or environmental noise mixed at a target SNR. Every operation is a
// pure function of (inputs, seed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "adakws/rng.hpp"
#include "adakws/wav.hpp"

namespace adakws {

struct NoiseSpec {
  enum class Kind { None, Gaussian, Environmental };
  Kind kind = Kind::None;
  double delta = 0.0;        // Gaussian severity (std of additive noise)
  std::string category;      // Environmental noise category
  double snr_db = 0.0;       // Environmental target SNR

  static NoiseSpec none() { return NoiseSpec{}; }
  static NoiseSpec gaussian(double delta) {
    if (delta < 0.0) fail_invalid("gaussian noise severity must be >= 0, got ", delta);
    NoiseSpec s;
    s.kind = Kind::Gaussian;
    s.delta = delta;
    return s;
  }
  static NoiseSpec environmental(std::string category, double snr_db) {
    if (!std::isfinite(snr_db)) fail_invalid("snr_db must be finite");
    NoiseSpec s;
    s.kind = Kind::Environmental;
    s.category = std::move(category);
    s.snr_db = snr_db;
    return s;
  }

  /// Stable condition label used in reports, e.g. "gaussian:0.03".
  std::string label() const {
    std::ostringstream os;
    switch (kind) {
      case Kind::None: os << "clean"; break;
      case Kind::Gaussian: os << "gaussian:" << delta; break;
      case Kind::Environmental: os << "env:" << category << ":" << snr_db; break;
    }
    return os.str();
  }
};

inline double rms(const std::vector<float>& samples) {
  double acc = 0.0;
  for (float v : samples) acc += static_cast<double>(v) * v;
  return samples.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(samples.size()));
}

/// out[i] = clamp(in[i] + delta * n_i, -1, 1) with n_i ~ N(0,1) from the seed.
inline AudioClip add_gaussian(const AudioClip& clip, double delta, uint64_t seed) {
  if (delta < 0.0) fail_invalid("add_gaussian: delta must be >= 0, got ", delta);
  AudioClip out = clip;
  if (delta == 0.0) return out;
  Rng rng(seed);
  for (float& v : out.samples) {
    const double noisy = static_cast<double>(v) + delta * rng.gaussian();
    v = static_cast<float>(std::clamp(noisy, -1.0, 1.0));
  }
  return out;
}

struct MixResult {
  AudioClip clip;
  double gain = 0.0;            // applied to the noise crop
  size_t crop_start = 0;        // offset into the (tiled) noise signal
  double preclamp_snr_db = 0.0; // achieved SNR before clamping, == target
};

/// Mixes a seeded random crop of `noise` into `clip` at the target SNR:
/// g = (RMS_speech / RMS_crop) * 10^(-snr_db/20). Noise shorter than the
/// clip is tiled before cropping.
inline MixResult mix_at_snr(const AudioClip& clip, const AudioClip& noise, double snr_db,
                            uint64_t seed) {
  const size_t n = clip.samples.size();
  if (noise.samples.empty()) fail_invalid("mix_at_snr: empty noise clip");
  const double speech_rms = rms(clip.samples);
  if (speech_rms == 0.0) fail_invalid("cannot define SNR for silent signal");

  std::vector<float> source = noise.samples;
  while (source.size() < n) {
    source.insert(source.end(), noise.samples.begin(), noise.samples.end());
  }
  Rng rng(seed);
  const size_t start = static_cast<size_t>(rng.uniform_int(source.size() - n + 1));
  std::vector<float> crop(source.begin() + static_cast<int64_t>(start),
                          source.begin() + static_cast<int64_t>(start + n));
  const double crop_rms = rms(crop);
  if (crop_rms == 0.0) fail_invalid("mix_at_snr: noise crop is silent (category clip all zeros)");

  const double gain = (speech_rms / crop_rms) * std::pow(10.0, -snr_db / 20.0);
  MixResult r;
  r.gain = gain;
  r.crop_start = start;
  r.preclamp_snr_db = 20.0 * std::log10(speech_rms / (gain * crop_rms));
  r.clip = clip;
  for (size_t i = 0; i < n; ++i) {
    const double mixed = static_cast<double>(clip.samples[i]) + gain * crop[i];
    r.clip.samples[i] = static_cast<float>(std::clamp(mixed, -1.0, 1.0));
  }
  return r;
}

/// Environmental noise clips grouped by category. Clips keep their native
/// length (no one-second crop).
struct NoiseBank {
  std::map<std::string, std::vector<AudioClip>> categories;

  const std::vector<AudioClip>& category(const std::string& name) const {
    auto it = categories.find(name);
    if (it == categories.end()) {
      std::string known;
      for (const auto& [k, v] : categories) known += (known.empty() ? "" : ", ") + k;
      fail_invalid("unknown noise category '", name, "' (bank has: ", known, ")");
    }
    return it->second;
  }
};

/// Loads a noise bank from a CSV manifest with header `path,category`.
/// Relative paths resolve against the manifest's directory, then `dir`.
inline NoiseBank load_noise_bank(const std::string& dir, const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail_runtime("cannot open noise manifest ", manifest_path);
  std::string line;
  if (!std::getline(in, line)) fail_runtime("empty noise manifest ", manifest_path);
  // Tolerate a UTF-8 BOM and trailing CR.
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,category") {
    fail_runtime("noise manifest must start with header 'path,category', got '", line, "'");
  }

  const std::filesystem::path manifest_dir = std::filesystem::path(manifest_path).parent_path();
  NoiseBank bank;
  std::vector<std::string> missing;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t comma = line.rfind(',');
    if (comma == std::string::npos) {
      fail_runtime("noise manifest line ", line_no, " is not 'path,category': '", line, "'");
    }
    const std::string rel = line.substr(0, comma);
    const std::string cat = line.substr(comma + 1);
    if (rel.empty() || cat.empty()) {
      fail_runtime("noise manifest line ", line_no, " has empty path or category");
    }
    std::filesystem::path p(rel);
    if (p.is_relative()) {
      std::filesystem::path under_manifest = manifest_dir / p;
      if (std::filesystem::exists(under_manifest)) {
        p = under_manifest;
      } else if (!dir.empty()) {
        p = std::filesystem::path(dir) / p;
      }
    }
    if (!std::filesystem::exists(p)) {
      missing.push_back(p.string());
      continue;
    }
    bank.categories[cat].push_back(load_wav_raw(p.string()));
  }
  if (!missing.empty()) {
    std::string joined;
    for (const auto& m : missing) joined += "\n  " + m;
    fail_runtime("noise manifest references missing files:", joined);
  }
  if (bank.categories.empty()) fail_runtime("noise manifest ", manifest_path, " lists no clips");
  for (const auto& [cat, clips] : bank.categories) {
    if (clips.empty()) fail_runtime("noise category '", cat, "' is empty");
  }
  return bank;
}

/// Applies a NoiseSpec to one clip. The seed is the per-utterance sub-seed;
/// for environmental noise it also picks the clip within the category.
inline AudioClip corrupt_clip(const AudioClip& clip, const NoiseSpec& spec,
                              const NoiseBank* bank, uint64_t seed) {
  switch (spec.kind) {
    case NoiseSpec::Kind::None:
      return clip;
    case NoiseSpec::Kind::Gaussian:
      return add_gaussian(clip, spec.delta, seed);
    case NoiseSpec::Kind::Environmental: {
      if (bank == nullptr) fail_invalid("environmental noise requires a noise bank");
      const auto& clips = bank->category(spec.category);
      Rng rng(derive_seed(seed, 0x6e6f6973));  // clip choice stream
      const auto& noise = clips[static_cast<size_t>(rng.uniform_int(clips.size()))];
      return mix_at_snr(clip, noise, spec.snr_db, derive_seed(seed, 0x63726f70)).clip;
    }
  }
  fail_invalid("corrupt_clip: unhandled noise kind");
}

}  // namespace adakws
