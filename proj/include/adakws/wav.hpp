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

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "adakws/common.hpp"

namespace adakws {

static_assert(std::endian::native == std::endian::little,
              "wav/checkpoint IO assumes a little-endian host");

inline constexpr int kSampleRate = 16000;
inline constexpr int kClipSamples = 16000;  // one second

/// Mono 16 kHz audio. Samples live in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
  std::string source_path;
};

namespace wav_detail {

template <typename T>
T read_le(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    fail_runtime("unexpected end of file in ", path);
  }
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace wav_detail

/// Center-crop clips longer than one second; zero-pad shorter ones
/// symmetrically (extra zero goes to the right on odd padding).
inline std::vector<float> crop_pad_one_second(const std::vector<float>& samples) {
  const int64_t n = static_cast<int64_t>(samples.size());
  if (n == kClipSamples) return samples;
  std::vector<float> out(kClipSamples, 0.0f);
  if (n > kClipSamples) {
    const int64_t start = (n - kClipSamples) / 2;
    std::copy(samples.begin() + start, samples.begin() + start + kClipSamples, out.begin());
  } else {
    const int64_t left = (kClipSamples - n) / 2;
    std::copy(samples.begin(), samples.end(), out.begin() + left);
  }
  return out;
}

/// Parses a RIFF/WAVE file. PCM16 or IEEE-float32, mono, 16 kHz; anything
/// else is a descriptive error — there is deliberately no silent resampling.
/// The clip keeps its native length; see load_wav for the one-second form.
inline AudioClip load_wav_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_runtime("cannot open wav file ", path);

  char riff[4], wave[4];
  in.read(riff, 4);
  (void)wav_detail::read_le<uint32_t>(in, path);
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0) {
    fail_runtime("not a RIFF/WAVE file: ", path);
  }

  uint16_t audio_format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool have_fmt = false;
  std::vector<char> data;
  while (in.peek() != EOF) {
    char id[4];
    if (!in.read(id, 4)) break;
    const uint32_t size = wav_detail::read_le<uint32_t>(in, path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      audio_format = wav_detail::read_le<uint16_t>(in, path);
      channels = wav_detail::read_le<uint16_t>(in, path);
      sample_rate = wav_detail::read_le<uint32_t>(in, path);
      (void)wav_detail::read_le<uint32_t>(in, path);  // byte rate
      (void)wav_detail::read_le<uint16_t>(in, path);  // block align
      bits = wav_detail::read_le<uint16_t>(in, path);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data.resize(size);
      if (!in.read(data.data(), size)) fail_runtime("truncated data chunk in ", path);
    } else {
      in.seekg(size + (size & 1), std::ios::cur);  // chunks are word-aligned
    }
  }
  if (!have_fmt || data.empty()) fail_runtime("missing fmt/data chunk in ", path);
  if (channels != 1) {
    fail_runtime("unsupported channel count ", channels, " (mono required): ", path);
  }
  if (sample_rate != static_cast<uint32_t>(kSampleRate)) {
    fail_runtime("unsupported sample rate ", sample_rate, " (", kSampleRate,
                 " required, no resampling): ", path);
  }

  AudioClip clip;
  clip.sample_rate = kSampleRate;
  clip.source_path = path;
  if (audio_format == 1 && bits == 16) {
    const size_t n = data.size() / 2;
    clip.samples.resize(n);
    const int16_t* p = reinterpret_cast<const int16_t*>(data.data());
    for (size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<float>(p[i]) / 32768.0f;
  } else if (audio_format == 3 && bits == 32) {
    const size_t n = data.size() / 4;
    clip.samples.resize(n);
    std::memcpy(clip.samples.data(), data.data(), n * 4);
  } else {
    fail_runtime("unsupported codec (format tag ", audio_format, ", ", bits,
                 "-bit); PCM16 or IEEE-float32 required: ", path);
  }
  for (float v : clip.samples) {
    if (!std::isfinite(v)) fail_runtime("non-finite sample in ", path);
  }
  return clip;
}

/// One-second keyword clip: load_wav_raw plus center-crop / symmetric pad.
inline AudioClip load_wav(const std::string& path) {
  AudioClip clip = load_wav_raw(path);
  clip.samples = crop_pad_one_second(clip.samples);
  return clip;
}

/// PCM16 mono writer. Samples are clamped to [-1, 1] before quantization.
inline void write_wav_pcm16(const std::string& path, const std::vector<float>& samples,
                            int sample_rate = kSampleRate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write wav file ", path);
  const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  wav_detail::write_le<uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  wav_detail::write_le<uint32_t>(out, 16);
  wav_detail::write_le<uint16_t>(out, 1);  // PCM
  wav_detail::write_le<uint16_t>(out, 1);  // mono
  wav_detail::write_le<uint32_t>(out, static_cast<uint32_t>(sample_rate));
  wav_detail::write_le<uint32_t>(out, static_cast<uint32_t>(sample_rate * 2));
  wav_detail::write_le<uint16_t>(out, 2);
  wav_detail::write_le<uint16_t>(out, 16);
  out.write("data", 4);
  wav_detail::write_le<uint32_t>(out, data_bytes);
  for (float v : samples) {
    const float clamped = std::min(1.0f, std::max(-1.0f, v));
    wav_detail::write_le<int16_t>(out, static_cast<int16_t>(std::lrintf(clamped * 32767.0f)));
  }
  if (!out) fail_runtime("write failed for ", path);
}

}  // namespace adakws
