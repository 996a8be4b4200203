// tests/test_features.cpp

// Copyright 2026  The awe-forge authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include "awe/features.hpp"
#include "oracles/mfcc_reference.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using awe::Mat;
using awe::Rng;
namespace feat = awe::feat;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

// Minimal RIFF writer for fixtures.
void write_wav16(const std::string& path, const std::vector<int16_t>& samples, int rate,
                 uint16_t channels = 1, uint16_t bits = 16, uint16_t format = 1,
                 bool truncate_data = false) {
  std::ofstream os(path, std::ios::binary);
  auto u16 = [&](uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };
  auto u32 = [&](uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  os.write("RIFF", 4);
  u32(36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  u32(16);
  u16(format);
  u16(channels);
  u32(static_cast<uint32_t>(rate));
  u32(static_cast<uint32_t>(rate) * channels * bits / 8);
  u16(static_cast<uint16_t>(channels * bits / 8));
  u16(bits);
  os.write("data", 4);
  u32(data_bytes);
  size_t n = truncate_data ? samples.size() / 2 : samples.size();
  os.write(reinterpret_cast<const char*>(samples.data()), static_cast<std::streamsize>(n * 2));
}

std::vector<double> tone(double freq, double seconds, int rate, double amp = 0.5) {
  std::vector<double> s(static_cast<size_t>(seconds * rate));
  for (size_t t = 0; t < s.size(); ++t)
    s[t] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(t) / rate);
  return s;
}

}  // namespace

TEST_CASE("read_wav: one second of digital silence") {
  auto path = tmp_path("awe_silence.wav");
  write_wav16(path.string(), std::vector<int16_t>(16000, 0), 16000);
  auto wav = feat::read_wav(path.string());
  REQUIRE(wav.sample_rate == 16000);
  REQUIRE(wav.samples.size() == 16000);
  for (double s : wav.samples) REQUIRE(s == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("read_wav: full-scale square wave hits the exact PCM rails") {
  auto path = tmp_path("awe_square.wav");
  std::vector<int16_t> s;
  for (int i = 0; i < 64; ++i) s.push_back(i % 2 == 0 ? 32767 : -32768);
  write_wav16(path.string(), s, 16000);
  auto wav = feat::read_wav(path.string());
  for (size_t i = 0; i < wav.samples.size(); ++i) {
    if (i % 2 == 0)
      REQUIRE(wav.samples[i] == 32767.0 / 32768.0);
    else
      REQUIRE(wav.samples[i] == -1.0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("read_wav: malformed files raise format errors naming the field") {
  auto check = [&](const std::string& name, auto writer, const std::string& needle) {
    auto path = tmp_path(name);
    writer(path.string());
    try {
      feat::read_wav(path.string());
      FAIL("expected format error for " + name);
    } catch (const awe::Error& e) {
      REQUIRE(e.kind() == awe::Error::Kind::format);
      INFO(e.what());
      REQUIRE(std::string(e.what()).find(needle) != std::string::npos);
    }
    std::filesystem::remove(path);
  };
  std::vector<int16_t> s(100, 1000);
  check("awe_trunc.wav",
        [&](const std::string& p) { write_wav16(p, s, 16000, 1, 16, 1, /*truncate=*/true); },
        "data");
  check("awe_stereo.wav", [&](const std::string& p) { write_wav16(p, s, 16000, 2); }, "channels");
  check("awe_float.wav", [&](const std::string& p) { write_wav16(p, s, 16000, 1, 16, 3); },
        "audio_format");
  check("awe_8bit.wav", [&](const std::string& p) { write_wav16(p, s, 16000, 1, 8); },
        "bits_per_sample");
}

TEST_CASE("compute_mfcc: frame count arithmetic") {
  feat::Wav wav;
  wav.sample_rate = 16000;
  wav.samples = tone(440.0, 1.0, 16000);
  auto seq = feat::compute_mfcc(wav, feat::MfccConfig{}, "utt", "spk");
  REQUIRE(seq.frames.rows() == 98);  // 1 + (16000-400)/160
  REQUIRE(seq.frames.cols() == 13);
  REQUIRE(seq.dim_label == "mfcc13");
  REQUIRE(seq.frame_period == Catch::Approx(0.010));
}

TEST_CASE("compute_mfcc: silence is stationary") {
  feat::Wav wav;
  wav.sample_rate = 16000;
  wav.samples.assign(8000, 0.0);
  auto seq = feat::compute_mfcc(wav, feat::MfccConfig{}, "utt", "spk");
  for (Eigen::Index t = 1; t < seq.frames.rows(); ++t)
    REQUIRE((seq.frames.row(t) - seq.frames.row(0)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("compute_mfcc: too-short signal is an input error") {
  feat::Wav wav;
  wav.sample_rate = 16000;
  wav.samples.assign(200, 0.0);  // < 400-sample window
  REQUIRE_THROWS_AS(feat::compute_mfcc(wav, feat::MfccConfig{}, "u", "s"), awe::Error);
}

TEST_CASE("compute_mfcc: matches the straight-line reference pipeline") {
  feat::Wav wav;
  wav.sample_rate = 16000;
  wav.samples = tone(440.0, 0.2, 16000);
  auto seq = feat::compute_mfcc(wav, feat::MfccConfig{}, "utt", "spk");
  auto ref = oracle::mfcc_reference(wav.samples, wav.sample_rate);
  REQUIRE(seq.frames.rows() == static_cast<Eigen::Index>(ref.size()));
  for (Eigen::Index t = 0; t < seq.frames.rows(); ++t)
    for (int j = 0; j < 13; ++j)
      REQUIRE(seq.frames(t, j) ==
              Catch::Approx(ref[static_cast<size_t>(t)][static_cast<size_t>(j)]).margin(1e-8));
}

TEST_CASE("compute_mfcc: 440 Hz tone matches the stored golden frame") {
  feat::Wav wav;
  wav.sample_rate = 16000;
  wav.samples = tone(440.0, 1.0, 16000);
  auto seq = feat::compute_mfcc(wav, feat::MfccConfig{}, "utt", "spk");

  std::ifstream golden("data/mfcc_440hz_frame10.txt");
  REQUIRE(golden.good());
  int frame_index = 0, dim = 0;
  golden >> frame_index >> dim;
  REQUIRE(dim == 13);
  for (int j = 0; j < dim; ++j) {
    double expected = 0.0;
    golden >> expected;
    REQUIRE(seq.frames(frame_index, j) == Catch::Approx(expected).margin(1e-9));
  }
}

TEST_CASE("compute_mfcc: shifting by one hop shifts frames by one index", "[properties]") {
  Rng rng(77);
  feat::Wav wav;
  wav.sample_rate = 16000;
  wav.samples.resize(8000);
  for (auto& s : wav.samples) s = 0.3 * rng.gaussian();
  feat::Wav shifted;
  shifted.sample_rate = 16000;
  shifted.samples.assign(wav.samples.begin() + 160, wav.samples.end());

  auto a = feat::compute_mfcc(wav, feat::MfccConfig{}, "a", "s");
  auto b = feat::compute_mfcc(shifted, feat::MfccConfig{}, "b", "s");
  // frames touching sample 0 of the shifted signal see a pre-emphasis edge;
  // compare strictly interior frames
  for (Eigen::Index t = 3; t < b.frames.rows(); ++t)
    REQUIRE((b.frames.row(t) - a.frames.row(t + 1)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("add_deltas: constant sequence has zero velocity and acceleration") {
  feat::FeatureSequence seq;
  seq.utterance_id = "u";
  seq.speaker_id = "s";
  seq.dim_label = "mfcc13";
  seq.frames = Mat::Constant(12, 13, 3.25);
  auto out = feat::add_deltas(seq, 2);
  REQUIRE(out.frames.cols() == 39);
  REQUIRE(out.dim_label == "mfcc39");
  REQUIRE(out.frames.rightCols(26).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("add_deltas: linear ramp has unit interior velocity, zero interior acceleration") {
  feat::FeatureSequence seq;
  seq.utterance_id = "u";
  seq.speaker_id = "s";
  seq.dim_label = "mfcc13";
  const int T = 20;
  seq.frames.resize(T, 1);
  for (int t = 0; t < T; ++t) seq.frames(t, 0) = t;
  auto out = feat::add_deltas(seq, 2);
  for (int t = 2; t < T - 2; ++t)
    REQUIRE(out.frames(t, 1) == Catch::Approx(1.0).margin(1e-12));
  for (int t = 4; t < T - 4; ++t)
    REQUIRE(out.frames(t, 2) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("add_deltas: static block is bit-identical to the input") {
  Rng rng(5);
  feat::FeatureSequence seq;
  seq.utterance_id = "u";
  seq.speaker_id = "s";
  seq.dim_label = "mfcc13";
  seq.frames.resize(9, 13);
  for (int t = 0; t < 9; ++t)
    for (int j = 0; j < 13; ++j) seq.frames(t, j) = rng.gaussian();
  auto out = feat::add_deltas(seq, 2);
  REQUIRE(out.frames.cols() == 39);
  REQUIRE(out.frames.leftCols(13) == seq.frames);

  feat::FeatureSequence one;
  one.frames = Mat::Zero(1, 2);
  REQUIRE_THROWS_AS(feat::add_deltas(one, 2), awe::Error);
}

TEST_CASE("normalize: mode none is a bit-identical passthrough") {
  Rng rng(6);
  feat::FeatureArchive archive;
  for (int i = 0; i < 3; ++i) {
    feat::FeatureSequence s;
    s.utterance_id = "u" + std::to_string(i);
    s.speaker_id = "s";
    s.frames.resize(5, 4);
    for (int t = 0; t < 5; ++t)
      for (int j = 0; j < 4; ++j) s.frames(t, j) = rng.gaussian();
    archive.entries.push_back(s);
  }
  auto before = archive;
  auto after = feat::normalize(archive, feat::NormalizeMode::none);
  for (size_t i = 0; i < after.entries.size(); ++i)
    REQUIRE(after.entries[i].frames == before.entries[i].frames);
}

TEST_CASE("normalize: single speaker makes global and per-speaker identical") {
  Rng rng(7);
  feat::FeatureArchive archive;
  for (int i = 0; i < 4; ++i) {
    feat::FeatureSequence s;
    s.utterance_id = "u" + std::to_string(i);
    s.speaker_id = "only";
    s.frames.resize(6, 3);
    for (int t = 0; t < 6; ++t)
      for (int j = 0; j < 3; ++j) s.frames(t, j) = 2.0 + rng.gaussian();
    archive.entries.push_back(s);
  }
  auto g = feat::normalize(archive, feat::NormalizeMode::global);
  auto p = feat::normalize(archive, feat::NormalizeMode::per_speaker);
  for (size_t i = 0; i < g.entries.size(); ++i)
    REQUIRE(g.entries[i].frames.isApprox(p.entries[i].frames, 1e-12));
}

TEST_CASE("normalize: per-speaker removes per-speaker offsets") {
  Rng rng(8);
  feat::FeatureArchive archive;
  for (int spk = 0; spk < 2; ++spk) {
    for (int i = 0; i < 3; ++i) {
      feat::FeatureSequence s;
      s.utterance_id = "s" + std::to_string(spk) + "u" + std::to_string(i);
      s.speaker_id = "spk" + std::to_string(spk);
      s.frames.resize(8, 3);
      for (int t = 0; t < 8; ++t)
        for (int j = 0; j < 3; ++j) s.frames(t, j) = (spk ? 5.0 : -3.0) + rng.gaussian();
      archive.entries.push_back(s);
    }
  }
  auto out = feat::normalize(archive, feat::NormalizeMode::per_speaker);
  for (int spk = 0; spk < 2; ++spk) {
    Mat all(24, 3);
    int row = 0;
    for (const auto& e : out.entries)
      if (e.speaker_id == "spk" + std::to_string(spk))
        for (int t = 0; t < 8; ++t) all.row(row++) = e.frames.row(t);
    REQUIRE(row == 24);
    for (int j = 0; j < 3; ++j) {
      REQUIRE(std::abs(all.col(j).mean()) < 1e-6);
      double var = (all.col(j).array() - all.col(j).mean()).square().mean();
      REQUIRE(var == Catch::Approx(1.0).margin(1e-6));
    }
  }
}

TEST_CASE("normalize: zero-variance dimension is centered with unit divisor") {
  feat::FeatureArchive archive;
  feat::FeatureSequence s;
  s.utterance_id = "u";
  s.speaker_id = "s";
  s.frames.resize(4, 2);
  s.frames.col(0).setConstant(7.0);  // zero variance
  s.frames.col(1) << 1, 2, 3, 4;
  archive.entries.push_back(s);
  auto out = feat::normalize(archive, feat::NormalizeMode::global);
  REQUIRE(out.entries[0].frames.col(0).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(out.entries[0].frames.allFinite());
}

TEST_CASE("feature archive round-trips through FARC bit-exactly", "[properties]") {
  Rng rng(9);
  auto path = tmp_path("awe_roundtrip.farc");
  for (int rep = 0; rep < 20; ++rep) {
    feat::FeatureArchive archive;
    int n = static_cast<int>(rng.uniform_int(1, 5));
    for (int i = 0; i < n; ++i) {
      feat::FeatureSequence s;
      s.utterance_id = "utt_" + std::to_string(rep) + "_" + std::to_string(i);
      s.speaker_id = "spk" + std::to_string(rng.uniform_int(0, 3));
      int t = static_cast<int>(rng.uniform_int(1, 12));
      int d = static_cast<int>(rng.uniform_int(1, 7));
      if (i > 0) d = archive.dim();
      s.frames.resize(t, d);
      for (int a = 0; a < t; ++a)
        for (int b = 0; b < d; ++b)
          s.frames(a, b) = static_cast<double>(static_cast<float>(rng.gaussian()));
      archive.entries.push_back(s);
    }
    feat::save_farc(archive, path.string());
    auto loaded = feat::load_farc(path.string());
    REQUIRE(loaded.entries.size() == archive.entries.size());
    for (size_t i = 0; i < loaded.entries.size(); ++i) {
      REQUIRE(loaded.entries[i].utterance_id == archive.entries[i].utterance_id);
      REQUIRE(loaded.entries[i].speaker_id == archive.entries[i].speaker_id);
      REQUIRE(loaded.entries[i].frames == archive.entries[i].frames);
    }
    // second write must produce identical bytes
    auto path2 = tmp_path("awe_roundtrip2.farc");
    feat::save_farc(loaded, path2.string());
    REQUIRE(awe::io::read_file(path.string()) == awe::io::read_file(path2.string()));
    std::filesystem::remove(path2);
  }
  std::filesystem::remove(path);
}

TEST_CASE("archive validation rejects duplicate ids and mixed dims") {
  feat::FeatureArchive archive;
  feat::FeatureSequence a, b;
  a.utterance_id = b.utterance_id = "same";
  a.speaker_id = b.speaker_id = "s";
  a.frames = Mat::Zero(2, 3);
  b.frames = Mat::Zero(2, 3);
  archive.entries = {a, b};
  REQUIRE_THROWS_AS(archive.validate(), awe::Error);
  archive.entries[1].utterance_id = "other";
  archive.entries[1].frames = Mat::Zero(2, 4);
  REQUIRE_THROWS_AS(archive.validate(), awe::Error);
  archive.entries[1].frames = Mat::Zero(2, 3);
  archive.validate();
  REQUIRE(archive.by_id("other").utterance_id == "other");
  REQUIRE_THROWS_AS(archive.by_id("missing"), awe::Error);
}
