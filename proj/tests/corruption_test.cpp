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

#include "adakws/corruption.hpp"
#include "testutil.hpp"

namespace adakws {
namespace {

AudioClip make_clip(size_t n, float value) {
  AudioClip c;
  c.samples.assign(n, value);
  return c;
}

AudioClip make_tone(size_t n, double freq, double amp) {
  AudioClip c;
  c.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    c.samples[i] = static_cast<float>(
        amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / kSampleRate));
  }
  return c;
}

TEST(GaussianNoiseTest, ZeroDeltaIsIdentity) {
  AudioClip clip = make_tone(16000, 440.0, 0.3);
  AudioClip out = add_gaussian(clip, 0.0, 1234);
  ASSERT_EQ(out.samples.size(), clip.samples.size());
  for (size_t i = 0; i < clip.samples.size(); ++i) EXPECT_EQ(out.samples[i], clip.samples[i]);
}

TEST(GaussianNoiseTest, SampleStdMatchesDelta) {
  AudioClip zeros = make_clip(16000, 0.0f);
  AudioClip out = add_gaussian(zeros, 0.03, 777);
  const double sd = rms(out.samples);  // mean is ~0, so rms ~ std
  EXPECT_GE(sd, 0.0285);
  EXPECT_LE(sd, 0.0315);
}

TEST(GaussianNoiseTest, DeterministicPerSeed) {
  AudioClip clip = make_tone(16000, 300.0, 0.2);
  AudioClip a = add_gaussian(clip, 0.05, 42);
  AudioClip b = add_gaussian(clip, 0.05, 42);
  AudioClip c = add_gaussian(clip, 0.05, 43);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
}

TEST(GaussianNoiseTest, OutputStaysInRange) {
  AudioClip loud = make_clip(4000, 0.99f);
  AudioClip out = add_gaussian(loud, 0.5, 9);
  for (float v : out.samples) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(SnrMixTest, GainFormulaSpotChecks) {
  // Equal speech and noise RMS: 0 dB -> gain 1, 20 dB -> 0.1, -10 dB -> 3.1623.
  AudioClip speech = make_tone(8000, 500.0, 0.1 * std::sqrt(2.0));   // rms 0.1
  AudioClip noise = make_tone(16000, 1700.0, 0.1 * std::sqrt(2.0));  // rms 0.1
  MixResult at0 = mix_at_snr(speech, noise, 0.0, 5);
  EXPECT_NEAR(at0.gain, 1.0, 1e-3);
  MixResult at20 = mix_at_snr(speech, noise, 20.0, 5);
  EXPECT_NEAR(at20.gain, 0.1, 1e-4);
  MixResult atm10 = mix_at_snr(speech, noise, -10.0, 5);
  EXPECT_NEAR(atm10.gain, 3.1623, 1e-3);
}

TEST(SnrMixTest, AchievedSnrMatchesTargetPreClamp) {
  Rng rng(21);
  AudioClip speech;
  speech.samples.resize(16000);
  for (auto& v : speech.samples) v = static_cast<float>(rng.uniform(-0.05, 0.05));
  AudioClip noise;
  noise.samples.resize(48000);
  for (auto& v : noise.samples) v = static_cast<float>(rng.uniform(-0.1, 0.1));

  for (double target : {-10.0, 0.0, 10.0}) {
    MixResult r = mix_at_snr(speech, noise, target, 99);
    EXPECT_NEAR(r.preclamp_snr_db, target, 1e-9);
    // Re-measure from the exact crop used.
    std::vector<float> crop(noise.samples.begin() + static_cast<int64_t>(r.crop_start),
                            noise.samples.begin() + static_cast<int64_t>(r.crop_start + 16000));
    for (auto& v : crop) v = static_cast<float>(r.gain * v);
    const double measured = 20.0 * std::log10(rms(speech.samples) / rms(crop));
    EXPECT_NEAR(measured, target, 0.1);
  }
}

TEST(SnrMixTest, TilesShortNoise) {
  AudioClip speech = make_tone(16000, 500.0, 0.2);
  AudioClip noise = make_tone(3000, 2000.0, 0.2);  // shorter than the clip
  MixResult r = mix_at_snr(speech, noise, 0.0, 11);
  EXPECT_EQ(r.clip.samples.size(), 16000u);
}

TEST(SnrMixTest, SilentSpeechRejected) {
  AudioClip silent = make_clip(16000, 0.0f);
  AudioClip noise = make_tone(16000, 800.0, 0.1);
  try {
    mix_at_snr(silent, noise, 0.0, 1);
    FAIL() << "expected error for silent signal";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("cannot define SNR for silent signal"),
              std::string::npos);
  }
}

TEST(SnrMixTest, DeterministicPerSeed) {
  AudioClip speech = make_tone(16000, 600.0, 0.25);
  AudioClip noise = make_tone(40000, 333.0, 0.2);
  MixResult a = mix_at_snr(speech, noise, -5.0, 7);
  MixResult b = mix_at_snr(speech, noise, -5.0, 7);
  EXPECT_EQ(a.crop_start, b.crop_start);
  EXPECT_EQ(a.clip.samples, b.clip.samples);
}

TEST(NoiseBankTest, LoadsCategoriesInManifestOrder) {
  testutil::TempDir tmp;
  write_wav_pcm16(tmp.file("hum.wav"), make_tone(8000, 120.0, 0.1).samples);
  write_wav_pcm16(tmp.file("keys.wav"), make_tone(8000, 3000.0, 0.1).samples);
  std::ofstream manifest(tmp.file("noise.csv"));
  manifest << "path,category\nhum.wav,babble\nkeys.wav,typing\n";
  manifest.close();

  NoiseBank bank = load_noise_bank(tmp.path().string(), tmp.file("noise.csv"));
  ASSERT_EQ(bank.categories.size(), 2u);
  EXPECT_EQ(bank.category("babble").size(), 1u);
  EXPECT_EQ(bank.category("typing").size(), 1u);
  EXPECT_EQ(bank.category("babble")[0].samples.size(), 8000u);  // full length kept
  EXPECT_THROW(bank.category("vacuum"), InvalidArgument);
}

TEST(NoiseBankTest, MissingFileNamesThePath) {
  testutil::TempDir tmp;
  std::ofstream manifest(tmp.file("noise.csv"));
  manifest << "path,category\nghost.wav,babble\n";
  manifest.close();
  try {
    load_noise_bank(tmp.path().string(), tmp.file("noise.csv"));
    FAIL() << "expected missing-file error";
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find("ghost.wav"), std::string::npos) << e.what();
  }
}

TEST(NoiseBankTest, FiveCategoryManifestCountsMatch) {
  testutil::TempDir tmp;
  const char* cats[] = {"animals", "natural", "urban", "human", "domestic"};
  std::ofstream manifest(tmp.file("esc.csv"));
  manifest << "path,category\n";
  int file_idx = 0;
  for (const char* cat : cats) {
    for (int i = 0; i <= file_idx % 3; ++i) {
      const std::string name = "n" + std::to_string(file_idx++) + ".wav";
      write_wav_pcm16(tmp.file(name), make_tone(4000, 200.0 + 100.0 * file_idx, 0.1).samples);
      manifest << name << "," << cat << "\n";
    }
  }
  manifest.close();
  NoiseBank bank = load_noise_bank(tmp.path().string(), tmp.file("esc.csv"));
  EXPECT_EQ(bank.categories.size(), 5u);
  size_t total = 0;
  for (const auto& [cat, clips] : bank.categories) total += clips.size();
  EXPECT_EQ(total, static_cast<size_t>(file_idx));
}

TEST(CorruptClipTest, EnvironmentalPathIsDeterministic) {
  testutil::TempDir tmp;
  write_wav_pcm16(tmp.file("n0.wav"), make_tone(20000, 900.0, 0.2).samples);
  write_wav_pcm16(tmp.file("n1.wav"), make_tone(20000, 1500.0, 0.2).samples);
  std::ofstream manifest(tmp.file("m.csv"));
  manifest << "path,category\nn0.wav,babble\nn1.wav,babble\n";
  manifest.close();
  NoiseBank bank = load_noise_bank(tmp.path().string(), tmp.file("m.csv"));

  AudioClip speech = make_tone(16000, 450.0, 0.3);
  NoiseSpec spec = NoiseSpec::environmental("babble", -10.0);
  AudioClip a = corrupt_clip(speech, spec, &bank, 123);
  AudioClip b = corrupt_clip(speech, spec, &bank, 123);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(spec.label(), "env:babble:-10");
}

}  // namespace
}  // namespace adakws
