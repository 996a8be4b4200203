// awe/align.hpp

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

// Segment-pair ingestion, DTW alignment into frame-level correspondence pairs,
// and speaker-aware negative sampling.

#ifndef AWE_ALIGN_HPP_
#define AWE_ALIGN_HPP_

#include "awe/features.hpp"

#include <set>
#include <string>
#include <utility>
#include <vector>

namespace awe::align {

struct SegmentRef {
  std::string utterance_id;
  int start = 0;  // frames, 0-based
  int end = 0;    // end-exclusive
};

struct SegmentPair {
  SegmentRef a, b;
};

enum class Metric { euclidean, cosine };

inline Metric parse_metric(const std::string& s) {
  if (s == "euclidean") return Metric::euclidean;
  if (s == "cosine") return Metric::cosine;
  throw_config("unknown metric: " + s);
}

inline double frame_distance(const Mat& a, int i, const Mat& b, int j, Metric metric) {
  if (metric == Metric::euclidean) return (a.row(i) - b.row(j)).norm();
  double na = a.row(i).norm();
  double nb = b.row(j).norm();
  if (na < 1e-12 && nb < 1e-12) return 0.0;
  if (na < 1e-12 || nb < 1e-12) return 1.0;
  return 1.0 - a.row(i).dot(b.row(j)) / (na * nb);
}

struct AlignmentPath {
  std::vector<std::pair<int, int>> steps;  // (0,0) ... (Ta-1, Tb-1)
  double cost = 0.0;                       // unnormalized sum of frame distances
};

// Full dynamic-programming table over steps {(1,0),(0,1),(1,1)}; ties prefer
// the diagonal, then (1,0). No band constraint.
inline AlignmentPath dtw_align(const Mat& a, const Mat& b, Metric metric = Metric::euclidean) {
  const int ta = static_cast<int>(a.rows());
  const int tb = static_cast<int>(b.rows());
  if (ta < 1 || tb < 1) throw_input("dtw_align: empty input");
  if (a.cols() != b.cols())
    throw_input("dtw_align: dimension mismatch " + std::to_string(a.cols()) + " vs " +
                std::to_string(b.cols()));

  Mat cost(ta, tb);
  // back[i][j]: 0 = diagonal, 1 = (1,0), 2 = (0,1), -1 = origin
  std::vector<int8_t> back(static_cast<size_t>(ta) * tb, -1);
  auto at = [&](int i, int j) -> int8_t& { return back[static_cast<size_t>(i) * tb + j]; };

  for (int i = 0; i < ta; ++i) {
    for (int j = 0; j < tb; ++j) {
      double d = frame_distance(a, i, b, j, metric);
      if (i == 0 && j == 0) {
        cost(0, 0) = d;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      int8_t arg = -1;
      if (i > 0 && j > 0 && cost(i - 1, j - 1) < best) {
        best = cost(i - 1, j - 1);
        arg = 0;
      }
      if (i > 0 && cost(i - 1, j) < best) {
        best = cost(i - 1, j);
        arg = 1;
      }
      if (j > 0 && cost(i, j - 1) < best) {
        best = cost(i, j - 1);
        arg = 2;
      }
      cost(i, j) = d + best;
      at(i, j) = arg;
    }
  }

  AlignmentPath path;
  path.cost = cost(ta - 1, tb - 1);
  int i = ta - 1, j = tb - 1;
  path.steps.emplace_back(i, j);
  while (!(i == 0 && j == 0)) {
    switch (at(i, j)) {
      case 0:
        --i;
        --j;
        break;
      case 1:
        --i;
        break;
      case 2:
        --j;
        break;
      default:
        throw_internal("dtw_align: broken backpointer chain");
    }
    path.steps.emplace_back(i, j);
  }
  std::reverse(path.steps.begin(), path.steps.end());
  return path;
}

// ---------------------------------------------------------------------------
// Frame pairs
// ---------------------------------------------------------------------------

struct FramePair {
  Vec x, y;
};

inline Mat slice_segment(const feat::FeatureArchive& archive, const SegmentRef& ref) {
  const auto& seq = archive.by_id(ref.utterance_id);
  if (ref.start < 0 || ref.start >= ref.end || ref.end > seq.length())
    throw_data("segment [" + std::to_string(ref.start) + "," + std::to_string(ref.end) +
               ") out of range for utterance " + ref.utterance_id + " of length " +
               std::to_string(seq.length()));
  return seq.frames.middleRows(ref.start, ref.end - ref.start);
}

// One FramePair per alignment step, in both directions (x->y and y->x), so a
// frame aligned to several partners contributes several pairs.
inline std::vector<FramePair> extract_frame_pairs(const std::vector<SegmentPair>& pairs,
                                                  const feat::FeatureArchive& archive,
                                                  Metric metric = Metric::euclidean) {
  std::set<std::string> missing;
  for (const auto& p : pairs) {
    if (!archive.has(p.a.utterance_id)) missing.insert(p.a.utterance_id);
    if (!archive.has(p.b.utterance_id)) missing.insert(p.b.utterance_id);
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& id : missing) ids += (ids.empty() ? "" : ", ") + id;
    throw_data("pair list references unknown utterance ids: " + ids);
  }

  std::vector<FramePair> out;
  for (const auto& p : pairs) {
    Mat a = slice_segment(archive, p.a);
    Mat b = slice_segment(archive, p.b);
    auto path = dtw_align(a, b, metric);
    for (auto [i, j] : path.steps) {
      out.push_back({a.row(i).transpose(), b.row(j).transpose()});
      out.push_back({b.row(j).transpose(), a.row(i).transpose()});
    }
  }
  return out;
}

inline constexpr uint16_t kFramePairsVersion = 1;

// Frame-pair file: magic "FPRS", version u16, count u64, dim u16, then per
// pair x and y as dim little-endian f32 each.
inline void save_frame_pairs(const std::vector<FramePair>& pairs, const std::string& path) {
  auto os = io::open_out(path);
  io::write_magic(os, "FPRS");
  io::write_le<uint16_t>(os, kFramePairsVersion);
  io::write_le<uint64_t>(os, pairs.size());
  io::write_le<uint16_t>(os, pairs.empty() ? 0 : static_cast<uint16_t>(pairs.front().x.size()));
  for (const auto& p : pairs) {
    for (Eigen::Index i = 0; i < p.x.size(); ++i) io::write_le<float>(os, static_cast<float>(p.x[i]));
    for (Eigen::Index i = 0; i < p.y.size(); ++i) io::write_le<float>(os, static_cast<float>(p.y[i]));
  }
}

inline std::vector<FramePair> load_frame_pairs(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, "FPRS", "frame pairs");
  auto version = io::read_le<uint16_t>(is, "frame pairs version");
  if (version != kFramePairsVersion)
    throw_format("unsupported frame pairs version " + std::to_string(version));
  auto count = io::read_le<uint64_t>(is, "frame pair count");
  auto dim = io::read_le<uint16_t>(is, "frame pair dim");
  std::vector<FramePair> pairs(count);
  for (uint64_t i = 0; i < count; ++i) {
    pairs[i].x.resize(dim);
    pairs[i].y.resize(dim);
    for (int j = 0; j < dim; ++j)
      pairs[i].x[j] = static_cast<double>(io::read_le<float>(is, "frame pair values"));
    for (int j = 0; j < dim; ++j)
      pairs[i].y[j] = static_cast<double>(io::read_le<float>(is, "frame pair values"));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Negative sampling
// ---------------------------------------------------------------------------

struct Anchor {
  int utterance = 0;  // index into archive.entries
  int t = 0;
  int k = 1;
};

struct FramePos {
  int utterance = 0;
  int frame = 0;
};

struct CandidateSet {
  std::vector<FramePos> positions;
  int true_index = 0;  // positions[true_index] == (anchor.utterance, t+k)
};

// The true target plus n_candidates-1 frames drawn uniformly (with
// replacement) from other utterances of the anchor's speaker.
inline CandidateSet sample_negatives(const feat::FeatureArchive& archive, Anchor anchor,
                                     int n_candidates, Rng& rng) {
  if (n_candidates < 2) throw_usage("sample_negatives: need at least 2 candidates");
  if (anchor.utterance < 0 || anchor.utterance >= static_cast<int>(archive.entries.size()))
    throw_data("sample_negatives: bad utterance index");
  const auto& anchor_seq = archive.entries[static_cast<size_t>(anchor.utterance)];
  if (anchor.t + anchor.k >= anchor_seq.length())
    throw_usage("sample_negatives: target frame t+k beyond utterance end");

  std::vector<int> others;
  int64_t total_frames = 0;
  for (size_t i = 0; i < archive.entries.size(); ++i) {
    if (static_cast<int>(i) == anchor.utterance) continue;
    if (archive.entries[i].speaker_id != anchor_seq.speaker_id) continue;
    others.push_back(static_cast<int>(i));
    total_frames += archive.entries[i].length();
  }
  if (others.empty())
    throw_data("sampling: speaker " + anchor_seq.speaker_id +
               " has no other utterances to draw negatives from");

  CandidateSet set;
  set.positions.resize(static_cast<size_t>(n_candidates));
  set.true_index = static_cast<int>(rng.uniform_int(0, n_candidates - 1));
  for (int i = 0; i < n_candidates; ++i) {
    if (i == set.true_index) {
      set.positions[static_cast<size_t>(i)] = {anchor.utterance, anchor.t + anchor.k};
      continue;
    }
    int64_t flat = rng.uniform_int(0, total_frames - 1);
    for (int u : others) {
      int len = archive.entries[static_cast<size_t>(u)].length();
      if (flat < len) {
        set.positions[static_cast<size_t>(i)] = {u, static_cast<int>(flat)};
        break;
      }
      flat -= len;
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Pair list file: one line per pair `utt1 start1 end1 utt2 start2 end2`,
// `#` starts a comment.
// ---------------------------------------------------------------------------

inline void save_pairs(const std::vector<SegmentPair>& pairs, const std::string& path) {
  auto os = io::open_out(path);
  for (const auto& p : pairs)
    os << p.a.utterance_id << " " << p.a.start << " " << p.a.end << " " << p.b.utterance_id << " "
       << p.b.start << " " << p.b.end << "\n";
}

inline std::vector<SegmentPair> load_pairs(const std::string& path) {
  auto is = io::open_in(path);
  std::vector<SegmentPair> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    SegmentPair p;
    if (!(ss >> p.a.utterance_id)) continue;  // blank or comment-only line
    if (!(ss >> p.a.start >> p.a.end >> p.b.utterance_id >> p.b.start >> p.b.end))
      throw_format("pair list " + path + ": malformed line " + std::to_string(line_no));
    if (p.a.start >= p.a.end || p.b.start >= p.b.end || p.a.start < 0 || p.b.start < 0)
      throw_format("pair list " + path + ": bad span on line " + std::to_string(line_no));
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace awe::align

#endif  // AWE_ALIGN_HPP_
