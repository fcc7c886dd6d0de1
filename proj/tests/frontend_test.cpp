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

#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "adakws/mfcc.hpp"
#include "adakws/wav.hpp"
#include "testutil.hpp"

namespace adakws {
namespace {

// Raw WAV writer with arbitrary fmt fields, for exercising the loader's
// rejection paths.
void write_raw_wav(const std::string& path, uint16_t format, uint16_t channels,
                   uint32_t sample_rate, uint16_t bits, const std::vector<int16_t>& payload) {
  std::ofstream out(path, std::ios::binary);
  const uint32_t data_bytes = static_cast<uint32_t>(payload.size() * 2);
  out.write("RIFF", 4);
  wav_detail::write_le<uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  wav_detail::write_le<uint32_t>(out, 16);
  wav_detail::write_le<uint16_t>(out, format);
  wav_detail::write_le<uint16_t>(out, channels);
  wav_detail::write_le<uint32_t>(out, sample_rate);
  wav_detail::write_le<uint32_t>(out, sample_rate * channels * bits / 8);
  wav_detail::write_le<uint16_t>(out, static_cast<uint16_t>(channels * bits / 8));
  wav_detail::write_le<uint16_t>(out, bits);
  out.write("data", 4);
  wav_detail::write_le<uint32_t>(out, data_bytes);
  for (int16_t v : payload) wav_detail::write_le<int16_t>(out, v);
}

TEST(WavTest, AllZeroClipLoadsAsZeros) {
  testutil::TempDir tmp;
  write_wav_pcm16(tmp.file("zeros.wav"), std::vector<float>(16000, 0.0f));
  AudioClip clip = load_wav(tmp.file("zeros.wav"));
  ASSERT_EQ(clip.samples.size(), 16000u);
  for (float v : clip.samples) EXPECT_EQ(v, 0.0f);
}

TEST(WavTest, ShortClipPadsSymmetrically) {
  testutil::TempDir tmp;
  std::vector<float> samples(8000, 0.0f);
  samples.front() = 0.5f;
  samples.back() = -0.5f;
  write_wav_pcm16(tmp.file("short.wav"), samples);
  AudioClip clip = load_wav(tmp.file("short.wav"));
  ASSERT_EQ(clip.samples.size(), 16000u);
  for (int i = 0; i < 4000; ++i) EXPECT_EQ(clip.samples[static_cast<size_t>(i)], 0.0f);
  for (int i = 12000; i < 16000; ++i) EXPECT_EQ(clip.samples[static_cast<size_t>(i)], 0.0f);
  EXPECT_NEAR(clip.samples[4000], 0.5f, 1e-4f);
  EXPECT_NEAR(clip.samples[11999], -0.5f, 1e-4f);
}

TEST(WavTest, LongClipCenterCrops) {
  testutil::TempDir tmp;
  std::vector<float> samples(20000, 0.0f);
  samples[2000] = 0.25f;  // center crop starts at (20000-16000)/2 = 2000
  write_wav_pcm16(tmp.file("long.wav"), samples);
  AudioClip clip = load_wav(tmp.file("long.wav"));
  ASSERT_EQ(clip.samples.size(), 16000u);
  EXPECT_NEAR(clip.samples[0], 0.25f, 1e-4f);
}

TEST(WavTest, RejectsWrongSampleRate) {
  testutil::TempDir tmp;
  write_raw_wav(tmp.file("hq.wav"), 1, 1, 44100, 16, std::vector<int16_t>(100, 0));
  try {
    load_wav(tmp.file("hq.wav"));
    FAIL() << "expected unsupported sample rate";
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported sample rate 44100"), std::string::npos)
        << e.what();
  }
}

TEST(WavTest, RejectsStereoAndExoticCodecs) {
  testutil::TempDir tmp;
  write_raw_wav(tmp.file("stereo.wav"), 1, 2, 16000, 16, std::vector<int16_t>(100, 0));
  EXPECT_THROW(load_wav(tmp.file("stereo.wav")), RuntimeFailure);
  write_raw_wav(tmp.file("alaw.wav"), 6, 1, 16000, 8, std::vector<int16_t>(100, 0));
  EXPECT_THROW(load_wav(tmp.file("alaw.wav")), RuntimeFailure);
  std::ofstream junk(tmp.file("junk.wav"), std::ios::binary);
  junk << "not a wav";
  junk.close();
  EXPECT_THROW(load_wav(tmp.file("junk.wav")), RuntimeFailure);
}

TEST(WavTest, Pcm16ScalingUses32768) {
  testutil::TempDir tmp;
  write_raw_wav(tmp.file("scale.wav"), 1, 1, 16000, 16, {16384, -32768});
  AudioClip clip = load_wav_raw(tmp.file("scale.wav"));
  EXPECT_FLOAT_EQ(clip.samples[0], 0.5f);
  EXPECT_FLOAT_EQ(clip.samples[1], -1.0f);
}

TEST(MfccTest, OneSecondClipGives40x98) {
  EXPECT_EQ(num_frames_for(16000, FrameParams{}), 98);  // 1 + (16000-480)/160
  MfccExtractor extractor;
  AudioClip clip;
  clip.samples.assign(16000, 0.1f);
  FeatureMap fm = extractor.extract(clip);
  EXPECT_EQ(fm.rows(), 40);
  EXPECT_EQ(fm.cols(), 98);
}

TEST(MfccTest, AllZeroClipGivesConstantFramesEqualToDctOfLogFloor) {
  MfccExtractor extractor;
  AudioClip clip;
  clip.samples.assign(16000, 0.0f);
  FeatureMap fm = extractor.extract(clip);
  // Every frame identical.
  for (int64_t t = 1; t < fm.cols(); ++t) {
    for (int64_t r = 0; r < fm.rows(); ++r) {
      ASSERT_EQ(fm.coeffs.at(r, t), fm.coeffs.at(r, 0));
    }
  }
  // Equal to the DCT of the constant log(1e-6) vector: only coefficient 0 is
  // nonzero, at sqrt(40) * ln(1e-6).
  const double expected_c0 = std::sqrt(40.0) * std::log(1e-6);
  EXPECT_NEAR(fm.coeffs.at(0, 0), expected_c0, 1e-3);
  for (int64_t r = 1; r < fm.rows(); ++r) EXPECT_NEAR(fm.coeffs.at(r, 0), 0.0f, 1e-4f);
}

TEST(MfccTest, PureToneExcitesTheNearestFilter) {
  MfccExtractor extractor;
  AudioClip clip;
  clip.samples.resize(16000);
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] =
        0.4f * static_cast<float>(std::sin(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 16000.0));
  }
  // Oracle: the filter whose center frequency is nearest 1 kHz.
  const auto& centers = extractor.center_frequencies_hz();
  size_t nearest = 0;
  for (size_t m = 1; m < centers.size(); ++m) {
    if (std::abs(centers[m] - 1000.0) < std::abs(centers[nearest] - 1000.0)) nearest = m;
  }
  const auto logmel = extractor.mean_log_mel(clip);
  size_t peak = 0;
  for (size_t m = 1; m < logmel.size(); ++m) {
    if (logmel[m] > logmel[peak]) peak = m;
  }
  EXPECT_EQ(peak, nearest);
}

TEST(MfccTest, DctIsOrthonormal) {
  MfccExtractor extractor;
  const auto& d = extractor.dct_matrix();
  for (size_t i = 0; i < d.size(); ++i) {
    for (size_t j = 0; j < d.size(); ++j) {
      double dot = 0.0;
      for (size_t k = 0; k < d[i].size(); ++k) dot += d[i][k] * d[j][k];
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-6) << "row " << i << " x row " << j;
    }
  }
}

TEST(MfccTest, FilterbankRowsPositiveAndCrossoverAtHalf) {
  MfccExtractor extractor;
  const auto& filters = extractor.filterbank();
  for (size_t m = 0; m < filters.size(); ++m) {
    double sum = 0.0;
    for (double w : filters[m]) sum += w;
    EXPECT_GT(sum, 0.0) << "filter " << m;
  }
  // Adjacent triangles are linear in mel over the shared span, so their
  // weights sum to 1 wherever both are active (crossover at 0.5 of peak).
  for (size_t m = 0; m + 1 < filters.size(); ++m) {
    for (size_t k = 0; k < filters[m].size(); ++k) {
      const double a = filters[m][k], b = filters[m + 1][k];
      if (a > 1e-12 && b > 1e-12) {
        EXPECT_NEAR(a + b, 1.0, 1e-9) << "filters " << m << "," << m + 1 << " bin " << k;
      }
    }
  }
}

TEST(MfccTest, DeterministicBitwise) {
  MfccExtractor a, b;
  AudioClip clip;
  Rng rng(99);
  clip.samples.resize(16000);
  for (auto& v : clip.samples) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  FeatureMap fa = a.extract(clip);
  FeatureMap fb = b.extract(clip);
  EXPECT_TRUE(fa.coeffs.bitwise_equal(fb.coeffs));
}

TEST(NormalizeTest, SpecExamples) {
  FeatureMap fm{Tensor({40, 3}, 3.0f), FrameParams{}};
  FeatureStats identity{std::vector<float>(40, 0.0f), std::vector<float>(40, 1.0f)};
  FeatureMap same = normalize(fm, identity);
  EXPECT_TRUE(same.coeffs.bitwise_equal(fm.coeffs));

  FeatureStats at_mean{std::vector<float>(40, 3.0f), std::vector<float>(40, 2.0f)};
  FeatureMap zeros = normalize(fm, at_mean);
  for (int64_t i = 0; i < zeros.coeffs.numel(); ++i) EXPECT_EQ(zeros.coeffs[i], 0.0f);

  FeatureStats shift{std::vector<float>(40, 1.0f), std::vector<float>(40, 2.0f)};
  FeatureMap one = normalize(fm, shift);
  for (int64_t i = 0; i < one.coeffs.numel(); ++i) EXPECT_FLOAT_EQ(one.coeffs[i], 1.0f);

  FeatureStats wrong{std::vector<float>(39, 0.0f), std::vector<float>(39, 1.0f)};
  EXPECT_THROW(normalize(fm, wrong), InvalidArgument);
}

TEST(FeatureStatsTest, StdFlooredForConstantCoefficients) {
  FeatureStatsAccumulator acc;
  FeatureMap fm{Tensor({40, 10}, 2.5f), FrameParams{}};
  acc.add(fm);
  acc.add(fm);
  FeatureStats stats = acc.finish();
  for (int r = 0; r < 40; ++r) {
    EXPECT_FLOAT_EQ(stats.mean[static_cast<size_t>(r)], 2.5f);
    EXPECT_FLOAT_EQ(stats.stdev[static_cast<size_t>(r)], 1e-6f);
  }
}

TEST(FeatureFileTest, RoundTripAndBadMagic) {
  testutil::TempDir tmp;
  Rng rng(5);
  FeatureMap fm{testutil::random_tensor<float>({40, 98}, rng), FrameParams{}};
  write_feature_map(tmp.file("a.feat"), fm);
  FeatureMap back = read_feature_map(tmp.file("a.feat"));
  EXPECT_TRUE(back.coeffs.bitwise_equal(fm.coeffs));

  std::ofstream bad(tmp.file("bad.feat"), std::ios::binary);
  bad << "XXXXXXXXjunk";
  bad.close();
  EXPECT_THROW(read_feature_map(tmp.file("bad.feat")), RuntimeFailure);
}

}  // namespace
}  // namespace adakws
