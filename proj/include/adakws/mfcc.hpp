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

// MFCC front end with fixed, documented DSP:
//   frames of 480 samples (30 ms) with hop 160 (10 ms), Hann window,
//   512-point real FFT, power spectrum, 40 triangular mel filters over
//   20-7600 Hz (HTK mel scale, triangles linear in mel so adjacent filters
//   cross at 0.5 of peak), natural-log compression ln(E + 1e-6), and an
//   orthonormal DCT-II keeping all 40 coefficients.
// All intermediate math runs in double so identical input bytes produce
// bitwise-identical features on any platform.

#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "adakws/tensor.hpp"
#include "adakws/wav.hpp"

namespace adakws {

struct FrameParams {
  int window_len = 480;
  int hop_len = 160;
  int fft_size = 512;
};

/// A [coeffs x frames] MFCC matrix for one utterance.
struct FeatureMap {
  Tensor coeffs;  // [40, T]
  FrameParams frame_params;

  int64_t rows() const { return coeffs.dim(0); }
  int64_t cols() const { return coeffs.dim(1); }
};

/// Per-coefficient standardization statistics, computed once over the source
/// training split and stored in the checkpoint so adaptation never needs the
/// source data.
struct FeatureStats {
  std::vector<float> mean;
  std::vector<float> stdev;  // floored at 1e-6
};

inline int num_frames_for(int64_t samples, const FrameParams& p) {
  if (samples < p.window_len) return 0;
  return 1 + static_cast<int>((samples - p.window_len) / p.hop_len);
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

class MfccExtractor {
 public:
  static constexpr int kNumCoeffs = 40;
  static constexpr int kNumMels = 40;
  static constexpr double kFreqLo = 20.0;
  static constexpr double kFreqHi = 7600.0;
  static constexpr double kLogFloor = 1e-6;

  explicit MfccExtractor(FrameParams params = FrameParams{}) : params_(params) {
    build_window();
    build_fft_tables();
    build_filterbank();
    build_dct();
  }

  const FrameParams& params() const { return params_; }
  int num_bins() const { return params_.fft_size / 2 + 1; }

  /// Filter center frequencies in Hz, one per mel filter.
  const std::vector<double>& center_frequencies_hz() const { return centers_hz_; }
  const std::vector<std::vector<double>>& filterbank() const { return filters_; }
  const std::vector<std::vector<double>>& dct_matrix() const { return dct_; }

  FeatureMap extract(const AudioClip& clip) const {
    const int t_frames = num_frames_for(static_cast<int64_t>(clip.samples.size()), params_);
    if (t_frames < 1) {
      fail_invalid("mfcc: clip of ", clip.samples.size(), " samples is shorter than one window (",
                   params_.window_len, ")");
    }
    FeatureMap fm{Tensor({kNumCoeffs, t_frames}), params_};
    std::vector<std::complex<double>> fft_buf(static_cast<size_t>(params_.fft_size));
    std::vector<double> power(static_cast<size_t>(num_bins()));
    std::vector<double> logmel(kNumMels);
    for (int t = 0; t < t_frames; ++t) {
      const float* frame = clip.samples.data() + static_cast<size_t>(t) * params_.hop_len;
      for (int i = 0; i < params_.window_len; ++i) {
        fft_buf[static_cast<size_t>(i)] = {static_cast<double>(frame[i]) * window_[i], 0.0};
      }
      for (int i = params_.window_len; i < params_.fft_size; ++i) {
        fft_buf[static_cast<size_t>(i)] = {0.0, 0.0};
      }
      fft_inplace(fft_buf);
      for (int k = 0; k < num_bins(); ++k) {
        power[static_cast<size_t>(k)] = std::norm(fft_buf[static_cast<size_t>(k)]);
      }
      for (int m = 0; m < kNumMels; ++m) {
        double e = 0.0;
        const auto& f = filters_[static_cast<size_t>(m)];
        for (int k = 0; k < num_bins(); ++k) e += f[static_cast<size_t>(k)] * power[static_cast<size_t>(k)];
        logmel[static_cast<size_t>(m)] = std::log(e + kLogFloor);
      }
      for (int c = 0; c < kNumCoeffs; ++c) {
        double acc = 0.0;
        const auto& row = dct_[static_cast<size_t>(c)];
        for (int m = 0; m < kNumMels; ++m) acc += row[static_cast<size_t>(m)] * logmel[static_cast<size_t>(m)];
        fm.coeffs.at(c, t) = static_cast<float>(acc);
      }
    }
    ensure_finite(fm.coeffs, "mfcc");
    return fm;
  }

  /// Pre-DCT log-mel energies for one clip; used by tests probing the
  /// filterbank response directly.
  std::vector<double> mean_log_mel(const AudioClip& clip) const {
    const int t_frames = num_frames_for(static_cast<int64_t>(clip.samples.size()), params_);
    std::vector<std::complex<double>> fft_buf(static_cast<size_t>(params_.fft_size));
    std::vector<double> acc(kNumMels, 0.0);
    for (int t = 0; t < t_frames; ++t) {
      const float* frame = clip.samples.data() + static_cast<size_t>(t) * params_.hop_len;
      for (int i = 0; i < params_.window_len; ++i) {
        fft_buf[static_cast<size_t>(i)] = {static_cast<double>(frame[i]) * window_[i], 0.0};
      }
      for (int i = params_.window_len; i < params_.fft_size; ++i) fft_buf[static_cast<size_t>(i)] = {0.0, 0.0};
      fft_inplace(fft_buf);
      for (int m = 0; m < kNumMels; ++m) {
        double e = 0.0;
        for (int k = 0; k < num_bins(); ++k) {
          e += filters_[static_cast<size_t>(m)][static_cast<size_t>(k)] * std::norm(fft_buf[static_cast<size_t>(k)]);
        }
        acc[static_cast<size_t>(m)] += std::log(e + kLogFloor);
      }
    }
    for (double& v : acc) v /= std::max(1, t_frames);
    return acc;
  }

 private:
  void build_window() {
    window_.resize(static_cast<size_t>(params_.window_len));
    const double denom = static_cast<double>(params_.window_len - 1);
    for (int i = 0; i < params_.window_len; ++i) {
      window_[static_cast<size_t>(i)] =
          0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / denom);
    }
  }

  void build_fft_tables() {
    const int n = params_.fft_size;
    if ((n & (n - 1)) != 0) fail_invalid("fft size must be a power of two, got ", n);
    bitrev_.resize(static_cast<size_t>(n));
    int log2n = 0;
    while ((1 << log2n) < n) ++log2n;
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < log2n; ++b) r |= ((i >> b) & 1) << (log2n - 1 - b);
      bitrev_[static_cast<size_t>(i)] = r;
    }
    twiddles_.resize(static_cast<size_t>(n / 2));
    for (int i = 0; i < n / 2; ++i) {
      const double ang = -2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n);
      twiddles_[static_cast<size_t>(i)] = {std::cos(ang), std::sin(ang)};
    }
  }

  void fft_inplace(std::vector<std::complex<double>>& a) const {
    const int n = params_.fft_size;
    for (int i = 0; i < n; ++i) {
      const int j = bitrev_[static_cast<size_t>(i)];
      if (i < j) std::swap(a[static_cast<size_t>(i)], a[static_cast<size_t>(j)]);
    }
    for (int len = 2; len <= n; len <<= 1) {
      const int half = len >> 1;
      const int step = n / len;
      for (int base = 0; base < n; base += len) {
        for (int k = 0; k < half; ++k) {
          const std::complex<double> w = twiddles_[static_cast<size_t>(k * step)];
          const std::complex<double> u = a[static_cast<size_t>(base + k)];
          const std::complex<double> v = a[static_cast<size_t>(base + k + half)] * w;
          a[static_cast<size_t>(base + k)] = u + v;
          a[static_cast<size_t>(base + k + half)] = u - v;
        }
      }
    }
  }

  void build_filterbank() {
    const int bins = num_bins();
    const double mel_lo = hz_to_mel(kFreqLo), mel_hi = hz_to_mel(kFreqHi);
    std::vector<double> mel_points(kNumMels + 2);
    for (int i = 0; i < kNumMels + 2; ++i) {
      mel_points[static_cast<size_t>(i)] =
          mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(kNumMels + 1);
    }
    centers_hz_.resize(kNumMels);
    filters_.assign(kNumMels, std::vector<double>(static_cast<size_t>(bins), 0.0));
    for (int m = 0; m < kNumMels; ++m) {
      const double left = mel_points[static_cast<size_t>(m)];
      const double center = mel_points[static_cast<size_t>(m) + 1];
      const double right = mel_points[static_cast<size_t>(m) + 2];
      centers_hz_[static_cast<size_t>(m)] = mel_to_hz(center);
      for (int k = 0; k < bins; ++k) {
        const double mel_k =
            hz_to_mel(static_cast<double>(k) * kSampleRate / params_.fft_size);
        double w = 0.0;
        if (mel_k >= left && mel_k <= center) {
          w = (mel_k - left) / (center - left);
        } else if (mel_k > center && mel_k <= right) {
          w = (right - mel_k) / (right - center);
        }
        filters_[static_cast<size_t>(m)][static_cast<size_t>(k)] = w;
      }
    }
  }

  void build_dct() {
    // Orthonormal DCT-II: D[0][n] = sqrt(1/N), D[k][n] = sqrt(2/N) cos(pi (n+0.5) k / N).
    dct_.assign(kNumCoeffs, std::vector<double>(kNumMels, 0.0));
    const double n_mels = static_cast<double>(kNumMels);
    for (int k = 0; k < kNumCoeffs; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / n_mels) : std::sqrt(2.0 / n_mels);
      for (int n = 0; n < kNumMels; ++n) {
        dct_[static_cast<size_t>(k)][static_cast<size_t>(n)] =
            scale * std::cos(M_PI * (static_cast<double>(n) + 0.5) * static_cast<double>(k) / n_mels);
      }
    }
  }

  FrameParams params_;
  std::vector<double> window_;
  std::vector<int> bitrev_;
  std::vector<std::complex<double>> twiddles_;
  std::vector<std::vector<double>> filters_;
  std::vector<double> centers_hz_;
  std::vector<std::vector<double>> dct_;
};

/// Per-coefficient (x - mean) / std.
inline FeatureMap normalize(const FeatureMap& fm, const FeatureStats& stats) {
  if (static_cast<int64_t>(stats.mean.size()) != fm.rows() ||
      static_cast<int64_t>(stats.stdev.size()) != fm.rows()) {
    fail_invalid("feature stats dimension ", stats.mean.size(), " != ", fm.rows(), " coefficients");
  }
  FeatureMap out{Tensor(fm.coeffs.shape()), fm.frame_params};
  for (int64_t r = 0; r < fm.rows(); ++r) {
    const float mu = stats.mean[static_cast<size_t>(r)];
    const float inv = 1.0f / stats.stdev[static_cast<size_t>(r)];
    for (int64_t t = 0; t < fm.cols(); ++t) out.coeffs.at(r, t) = (fm.coeffs.at(r, t) - mu) * inv;
  }
  return out;
}

/// Accumulates per-coefficient mean/std over training features.
class FeatureStatsAccumulator {
 public:
  explicit FeatureStatsAccumulator(int num_coeffs = MfccExtractor::kNumCoeffs)
      : sum_(static_cast<size_t>(num_coeffs), 0.0),
        sumsq_(static_cast<size_t>(num_coeffs), 0.0) {}

  void add(const FeatureMap& fm) {
    if (fm.rows() != static_cast<int64_t>(sum_.size())) {
      fail_invalid("feature map with ", fm.rows(), " rows in ", sum_.size(), "-dim accumulator");
    }
    for (int64_t r = 0; r < fm.rows(); ++r) {
      for (int64_t t = 0; t < fm.cols(); ++t) {
        const double v = fm.coeffs.at(r, t);
        sum_[static_cast<size_t>(r)] += v;
        sumsq_[static_cast<size_t>(r)] += v * v;
      }
    }
    count_ += fm.cols();
  }

  FeatureStats finish() const {
    if (count_ == 0) fail_invalid("feature stats over zero frames");
    FeatureStats s;
    s.mean.resize(sum_.size());
    s.stdev.resize(sum_.size());
    for (size_t r = 0; r < sum_.size(); ++r) {
      const double mu = sum_[r] / static_cast<double>(count_);
      double var = sumsq_[r] / static_cast<double>(count_) - mu * mu;
      if (var < 0.0) var = 0.0;
      s.mean[r] = static_cast<float>(mu);
      s.stdev[r] = std::max(1e-6f, static_cast<float>(std::sqrt(var)));
    }
    return s;
  }

 private:
  std::vector<double> sum_;
  std::vector<double> sumsq_;
  int64_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Debug feature-map file: magic "AKWSFEAT", u32 rows, u32 cols, then
// little-endian f32 row-major payload.
// ---------------------------------------------------------------------------

inline void write_feature_map(const std::string& path, const FeatureMap& fm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write feature file ", path);
  out.write("AKWSFEAT", 8);
  wav_detail::write_le<uint32_t>(out, static_cast<uint32_t>(fm.rows()));
  wav_detail::write_le<uint32_t>(out, static_cast<uint32_t>(fm.cols()));
  out.write(reinterpret_cast<const char*>(fm.coeffs.data()),
            static_cast<std::streamsize>(fm.coeffs.numel() * sizeof(float)));
  if (!out) fail_runtime("write failed for ", path);
}

inline FeatureMap read_feature_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_runtime("cannot open feature file ", path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "AKWSFEAT", 8) != 0) {
    fail_runtime("not a feature file (bad magic): ", path);
  }
  const auto rows = wav_detail::read_le<uint32_t>(in, path);
  const auto cols = wav_detail::read_le<uint32_t>(in, path);
  FeatureMap fm{Tensor({static_cast<int64_t>(rows), static_cast<int64_t>(cols)}), FrameParams{}};
  if (!in.read(reinterpret_cast<char*>(fm.coeffs.data()),
               static_cast<std::streamsize>(fm.coeffs.numel() * sizeof(float)))) {
    fail_runtime("truncated feature payload in ", path);
  }
  return fm;
}

}  // namespace adakws
