// tests/test_align.cpp

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

#include "awe/align.hpp"
#include "oracles/dtw_bruteforce.hpp"

#include <filesystem>
#include <map>

using awe::Mat;
using awe::Rng;
namespace align = awe::align;
namespace feat = awe::feat;

namespace {

Mat random_mat(Rng& rng, int rows, int cols) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.gaussian();
  return m;
}

oracle::FrameRows to_rows(const Mat& m) {
  oracle::FrameRows rows(static_cast<size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      rows[static_cast<size_t>(i)].push_back(m(i, j));
  return rows;
}

bool valid_path(const align::AlignmentPath& p, int ta, int tb) {
  if (p.steps.empty()) return false;
  if (p.steps.front() != std::pair<int, int>{0, 0}) return false;
  if (p.steps.back() != std::pair<int, int>{ta - 1, tb - 1}) return false;
  for (size_t k = 1; k < p.steps.size(); ++k) {
    int di = p.steps[k].first - p.steps[k - 1].first;
    int dj = p.steps[k].second - p.steps[k - 1].second;
    bool ok = (di == 1 && dj == 0) || (di == 0 && dj == 1) || (di == 1 && dj == 1);
    if (!ok) return false;
  }
  return true;
}

feat::FeatureArchive two_speaker_archive(Rng& rng, int utts_per_speaker, int frames, int dim) {
  feat::FeatureArchive archive;
  for (int spk = 0; spk < 2; ++spk)
    for (int i = 0; i < utts_per_speaker; ++i) {
      feat::FeatureSequence s;
      s.utterance_id = "s" + std::to_string(spk) + "_u" + std::to_string(i);
      s.speaker_id = "spk" + std::to_string(spk);
      s.frames = random_mat(rng, frames, dim);
      archive.entries.push_back(std::move(s));
    }
  return archive;
}

}  // namespace

TEST_CASE("dtw: identical inputs align on the diagonal with zero cost") {
  Rng rng(101);
  Mat a = random_mat(rng, 5, 3);
  auto path = align::dtw_align(a, a, align::Metric::euclidean);
  REQUIRE(path.cost == 0.0);
  REQUIRE(path.steps.size() == 5);
  for (int k = 0; k < 5; ++k) REQUIRE(path.steps[static_cast<size_t>(k)] == std::pair<int, int>{k, k});
}

TEST_CASE("dtw: concrete stretched pair takes the known zero-cost path") {
  Mat a(2, 1), b(3, 1);
  a << 0, 1;
  b << 0, 0, 1;
  auto path = align::dtw_align(a, b, align::Metric::euclidean);
  REQUIRE(path.cost == Catch::Approx(0.0).margin(1e-12));
  std::vector<std::pair<int, int>> want = {{0, 0}, {0, 1}, {1, 2}};
  REQUIRE(path.steps == want);
}

TEST_CASE("dtw: matches exhaustive path enumeration on 200 random pairs", "[properties]") {
  Rng rng(102);
  for (int rep = 0; rep < 200; ++rep) {
    int ta = static_cast<int>(rng.uniform_int(1, 6));
    int tb = static_cast<int>(rng.uniform_int(1, 6));
    int d = static_cast<int>(rng.uniform_int(1, 3));
    Mat a = random_mat(rng, ta, d);
    Mat b = random_mat(rng, tb, d);
    auto path = align::dtw_align(a, b, align::Metric::euclidean);
    REQUIRE(valid_path(path, ta, tb));
    double brute = oracle::dtw_bruteforce(to_rows(a), to_rows(b));
    REQUIRE(path.cost == Catch::Approx(brute).margin(1e-9));
    // recompute cost from the returned path
    double along = 0.0;
    for (auto [i, j] : path.steps) along += (a.row(i) - b.row(j)).norm();
    REQUIRE(path.cost == Catch::Approx(along).margin(1e-9));
  }
}

TEST_CASE("dtw: cost is symmetric and non-negative", "[properties]") {
  Rng rng(103);
  for (int rep = 0; rep < 50; ++rep) {
    Mat a = random_mat(rng, static_cast<int>(rng.uniform_int(1, 8)), 2);
    Mat b = random_mat(rng, static_cast<int>(rng.uniform_int(1, 8)), 2);
    auto ab = align::dtw_align(a, b, align::Metric::euclidean);
    auto ba = align::dtw_align(b, a, align::Metric::euclidean);
    REQUIRE(ab.cost >= 0.0);
    REQUIRE(ab.cost == Catch::Approx(ba.cost).margin(1e-9));
    REQUIRE(align::dtw_align(a, a, align::Metric::euclidean).cost == 0.0);
  }
}

TEST_CASE("dtw: cosine metric accepts aligned directions regardless of norm") {
  Mat a(2, 2), b(2, 2);
  a << 1, 0, 0, 1;
  b << 5, 0, 0, 3;
  auto path = align::dtw_align(a, b, align::Metric::cosine);
  REQUIRE(path.cost == Catch::Approx(0.0).margin(1e-12));
  Mat c(1, 2);
  c << -1, 0;
  REQUIRE(align::dtw_align(a.topRows(1), c, align::Metric::cosine).cost ==
          Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("dtw: dimension mismatch is an input error") {
  Mat a(2, 3), b(2, 4);
  a.setZero();
  b.setZero();
  REQUIRE_THROWS_AS(align::dtw_align(a, b, align::Metric::euclidean), awe::Error);
}

TEST_CASE("extract_frame_pairs: identical equal-length segments emit 2L mirrored pairs") {
  Rng rng(104);
  feat::FeatureArchive archive;
  Mat frames = random_mat(rng, 6, 4);
  for (int i = 0; i < 2; ++i) {
    feat::FeatureSequence s;
    s.utterance_id = "u" + std::to_string(i);
    s.speaker_id = "s";
    s.frames = frames;
    archive.entries.push_back(s);
  }
  align::SegmentPair pair{{"u0", 0, 6}, {"u1", 0, 6}};
  auto pairs = align::extract_frame_pairs({pair}, archive, align::Metric::euclidean);
  REQUIRE(pairs.size() == 12);
  for (const auto& p : pairs) REQUIRE((p.x - p.y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("extract_frame_pairs: lengths 2 and 3 give six directed pairs") {
  feat::FeatureArchive archive;
  feat::FeatureSequence s1, s2;
  s1.utterance_id = "u0";
  s1.speaker_id = "s";
  s1.frames.resize(2, 1);
  s1.frames << 0, 1;
  s2.utterance_id = "u1";
  s2.speaker_id = "s";
  s2.frames.resize(3, 1);
  s2.frames << 0, 0, 1;
  archive.entries = {s1, s2};
  auto pairs = align::extract_frame_pairs({{{"u0", 0, 2}, {"u1", 0, 3}}}, archive,
                                          align::Metric::euclidean);
  REQUIRE(pairs.size() == 6);
}

TEST_CASE("extract_frame_pairs: empty list and unknown ids") {
  feat::FeatureArchive archive;
  feat::FeatureSequence s;
  s.utterance_id = "u0";
  s.speaker_id = "s";
  s.frames = Mat::Zero(3, 2);
  archive.entries = {s};
  REQUIRE(align::extract_frame_pairs({}, archive, align::Metric::euclidean).empty());
  try {
    align::extract_frame_pairs({{{"nope", 0, 2}, {"gone", 0, 2}}}, archive,
                               align::Metric::euclidean);
    FAIL("expected data error");
  } catch (const awe::Error& e) {
    REQUIRE(std::string(e.what()).find("nope") != std::string::npos);
    REQUIRE(std::string(e.what()).find("gone") != std::string::npos);
  }
}

TEST_CASE("sample_negatives: candidate set holds the true target plus N-1 same-speaker frames") {
  Rng rng(105);
  auto archive = two_speaker_archive(rng, 4, 10, 3);
  Rng sampler(1);
  auto set = align::sample_negatives(archive, {0, 2, 3}, 32, sampler);
  REQUIRE(set.positions.size() == 32);
  REQUIRE(set.true_index >= 0);
  REQUIRE(set.true_index < 32);
  REQUIRE(set.positions[static_cast<size_t>(set.true_index)].utterance == 0);
  REQUIRE(set.positions[static_cast<size_t>(set.true_index)].frame == 5);
  for (int i = 0; i < 32; ++i) {
    if (i == set.true_index) continue;
    const auto& pos = set.positions[static_cast<size_t>(i)];
    REQUIRE(pos.utterance != 0);
    REQUIRE(archive.entries[static_cast<size_t>(pos.utterance)].speaker_id == "spk0");
  }
}

TEST_CASE("sample_negatives: speaker with two utterances draws only from the other one") {
  Rng rng(106);
  feat::FeatureArchive archive;
  for (int i = 0; i < 2; ++i) {
    feat::FeatureSequence s;
    s.utterance_id = "u" + std::to_string(i);
    s.speaker_id = "solo";
    s.frames = random_mat(rng, 8, 2);
    archive.entries.push_back(s);
  }
  Rng sampler(2);
  auto set = align::sample_negatives(archive, {0, 1, 2}, 8, sampler);
  for (int i = 0; i < 8; ++i)
    if (i != set.true_index)
      REQUIRE(set.positions[static_cast<size_t>(i)].utterance == 1);
}

TEST_CASE("sample_negatives: single-utterance speaker raises a sampling error") {
  Rng rng(107);
  feat::FeatureArchive archive;
  feat::FeatureSequence s;
  s.utterance_id = "u0";
  s.speaker_id = "alone";
  s.frames = random_mat(rng, 8, 2);
  archive.entries = {s};
  Rng sampler(3);
  REQUIRE_THROWS_AS(align::sample_negatives(archive, {0, 1, 2}, 4, sampler), awe::Error);
}

TEST_CASE("sample_negatives: draws are uniform over eligible frames", "[properties]") {
  Rng rng(108);
  auto archive = two_speaker_archive(rng, 3, 6, 2);  // speaker spk0: utts 0,1,2
  // anchor in utterance 0 -> eligible: utterances 1,2 of spk0, 6 frames each
  std::map<std::pair<int, int>, int> counts;
  Rng sampler(4);
  const int draws = 10000;
  int total = 0;
  for (int rep = 0; rep < draws; ++rep) {
    auto set = align::sample_negatives(archive, {0, 1, 2}, 4, sampler);
    for (int i = 0; i < 4; ++i) {
      if (i == set.true_index) continue;
      const auto& pos = set.positions[static_cast<size_t>(i)];
      counts[{pos.utterance, pos.frame}] += 1;
      ++total;
    }
  }
  const int cells = 12;
  REQUIRE(counts.size() == cells);
  double expected = static_cast<double>(total) / cells;
  double se = std::sqrt(expected * (1.0 - 1.0 / cells));
  for (const auto& [pos, n] : counts) REQUIRE(std::abs(n - expected) < 3.0 * se + 1.0);
}

TEST_CASE("pair list file round-trips and skips comments") {
  std::vector<align::SegmentPair> pairs = {
      {{"utt_one", 0, 5}, {"utt_two", 3, 9}},
      {{"a", 1, 2}, {"b", 0, 1}},
  };
  auto path = std::filesystem::temp_directory_path() / "awe_pairs.txt";
  align::save_pairs(pairs, path.string());
  {
    std::ofstream os(path, std::ios::app);
    os << "# trailing comment\n\n";
  }
  auto loaded = align::load_pairs(path.string());
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded[0].a.utterance_id == "utt_one");
  REQUIRE(loaded[0].b.end == 9);
  REQUIRE(loaded[1].b.utterance_id == "b");
  std::filesystem::remove(path);
}
