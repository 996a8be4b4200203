// awe/synth.hpp

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

// Labeled synthetic feature-space corpora: word templates rendered with
// duration warps, per-speaker affine transforms and additive noise, plus
// simulated term-discovery pair lists with controllable error and jitter.

#ifndef AWE_SYNTH_HPP_
#define AWE_SYNTH_HPP_

#include "awe/align.hpp"
#include "awe/features.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace awe::synth {

struct CorpusSpec {
  int n_word_types = 12;
  int n_speakers = 8;
  int n_utterances = 600;
  int words_per_utterance_min = 2;
  int words_per_utterance_max = 4;
  int phones_per_word_min = 3;
  int phones_per_word_max = 5;
  int frames_per_phone_min = 2;
  int frames_per_phone_max = 5;
  int dim = 13;
  double speaker_scale = 0.35;  // log-gain / bias spread of the speaker transform
  double noise = 0.15;
  double warp_min = 0.8;
  double warp_max = 1.25;
  uint64_t seed = 1;
  std::string language = "synthA";  // utterance-id prefix

  void validate() const {
    if (dim < 2) throw_config("corpus spec: dim must be >= 2");
    if (n_word_types < 1 || n_speakers < 1 || n_utterances < 1)
      throw_config("corpus spec: counts must be >= 1");
    if (words_per_utterance_min < 1 || words_per_utterance_min > words_per_utterance_max ||
        phones_per_word_min < 1 || phones_per_word_min > phones_per_word_max ||
        frames_per_phone_min < 1 || frames_per_phone_min > frames_per_phone_max)
      throw_config("corpus spec: bad range");
    if (noise < 0.0) throw_config("corpus spec: noise must be >= 0");
    if (warp_min <= 0.5 || warp_max >= 2.0 || warp_min > warp_max)
      throw_config("corpus spec: warp range must lie inside (0.5, 2.0)");
  }
};

struct WordToken {
  int word_type = 0;
  int start = 0;  // frames, end-exclusive
  int end = 0;
};

struct UtteranceTruth {
  std::string utterance_id;
  std::string speaker_id;
  std::vector<WordToken> tokens;
};

struct GroundTruth {
  std::vector<UtteranceTruth> utterances;
};

inline std::string word_label(int type) { return "w" + std::to_string(type); }
inline std::string speaker_id(int index) { return "spk" + std::to_string(index); }

inline int speaker_index(const std::string& id) {
  if (id.rfind("spk", 0) != 0) throw_data("not a synthetic speaker id: " + id);
  return std::stoi(id.substr(3));
}

struct SpeakerTransform {
  Vec gain;  // per-dimension multiplicative gain (positive)
  Vec bias;
};

// Deterministic per (spec seed, speaker); independent of the utterance streams
// so corpora that differ only in speaker_scale stay frame-aligned. Bias
// carries most of the speaker identity; gains stay mild so trajectory shape
// survives.
inline SpeakerTransform speaker_transform(const CorpusSpec& spec, int speaker) {
  Rng rng = Rng::derived(spec.seed, "speaker", static_cast<uint64_t>(speaker));
  SpeakerTransform t;
  t.gain.resize(spec.dim);
  t.bias.resize(spec.dim);
  for (int j = 0; j < spec.dim; ++j) {
    t.gain[j] = std::exp(0.25 * spec.speaker_scale * rng.gaussian());
    t.bias[j] = spec.speaker_scale * rng.gaussian();
  }
  return t;
}

namespace detail {

struct WordTemplate {
  Mat targets;              // smoothed phone target vectors, one row per phone
  std::vector<int> frames;  // nominal frames per phone
};

// Phone targets drawn once per word type, smoothed along the phone sequence.
inline std::vector<WordTemplate> word_templates(const CorpusSpec& spec) {
  Rng rng = Rng::derived(spec.seed, "templates");
  std::vector<WordTemplate> templates;
  for (int w = 0; w < spec.n_word_types; ++w) {
    int phones = static_cast<int>(rng.uniform_int(spec.phones_per_word_min, spec.phones_per_word_max));
    Mat targets(phones, spec.dim);
    for (int p = 0; p < phones; ++p)
      for (int j = 0; j < spec.dim; ++j) targets(p, j) = rng.gaussian();
    WordTemplate t;
    t.targets.resize(phones, spec.dim);
    for (int p = 0; p < phones; ++p) {
      int lo = std::max(0, p - 1), hi = std::min(phones - 1, p + 1);
      t.targets.row(p) = targets.middleRows(lo, hi - lo + 1).colwise().mean();
    }
    t.frames.resize(static_cast<size_t>(phones));
    for (int p = 0; p < phones; ++p)
      t.frames[static_cast<size_t>(p)] =
          static_cast<int>(rng.uniform_int(spec.frames_per_phone_min, spec.frames_per_phone_max));
    templates.push_back(std::move(t));
  }
  return templates;
}

// Renders one token: every phone's duration is scaled by its own factor from
// the warp range (nonlinear time warp), frames interpolate from each phone's
// target toward the next. With the warp range pinned at 1.0 the rendering is
// exactly the nominal template.
inline Mat render_token(const WordTemplate& tmpl, const CorpusSpec& spec, Rng& rng) {
  const int phones = static_cast<int>(tmpl.targets.rows());
  std::vector<int> lengths(static_cast<size_t>(phones));
  int total = 0;
  for (int p = 0; p < phones; ++p) {
    double warp = rng.uniform(spec.warp_min, spec.warp_max);
    lengths[static_cast<size_t>(p)] =
        std::max(1, static_cast<int>(std::lround(tmpl.frames[static_cast<size_t>(p)] * warp)));
    total += lengths[static_cast<size_t>(p)];
  }
  Mat out(total, spec.dim);
  int row = 0;
  for (int p = 0; p < phones; ++p) {
    Eigen::RowVectorXd from = tmpl.targets.row(p);
    Eigen::RowVectorXd to = tmpl.targets.row(std::min(p + 1, phones - 1));
    for (int f = 0; f < lengths[static_cast<size_t>(p)]; ++f) {
      double alpha = (f + 0.5) / lengths[static_cast<size_t>(p)];
      out.row(row++) = (1.0 - alpha) * from + alpha * to;
    }
  }
  return out;
}

}  // namespace detail

inline std::pair<feat::FeatureArchive, GroundTruth> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  auto templates = detail::word_templates(spec);
  std::vector<SpeakerTransform> speakers;
  for (int s = 0; s < spec.n_speakers; ++s) speakers.push_back(speaker_transform(spec, s));

  feat::FeatureArchive archive;
  GroundTruth truth;
  for (int u = 0; u < spec.n_utterances; ++u) {
    Rng rng = Rng::derived(spec.seed, "utt", static_cast<uint64_t>(u));
    const int spk = u % spec.n_speakers;
    const auto& transform = speakers[static_cast<size_t>(spk)];

    char id[64];
    std::snprintf(id, sizeof(id), "%s_u%04d", spec.language.c_str(), u);
    UtteranceTruth utt;
    utt.utterance_id = id;
    utt.speaker_id = speaker_id(spk);

    int n_words = static_cast<int>(rng.uniform_int(spec.words_per_utterance_min, spec.words_per_utterance_max));
    std::vector<Mat> chunks;
    int row = 0;
    auto add_silence = [&]() {
      int len = static_cast<int>(rng.uniform_int(3, 8));
      Mat sil(len, spec.dim);
      for (int t = 0; t < len; ++t)
        for (int j = 0; j < spec.dim; ++j) sil(t, j) = 0.01 * rng.gaussian();
      chunks.push_back(std::move(sil));
      row += len;
    };

    add_silence();
    for (int w = 0; w < n_words; ++w) {
      int type = static_cast<int>(rng.uniform_int(0, spec.n_word_types - 1));
      Mat token = detail::render_token(templates[static_cast<size_t>(type)], spec, rng);
      token = (token.array().rowwise() * transform.gain.transpose().array()).matrix().rowwise() +
              transform.bias.transpose();
      for (Eigen::Index t = 0; t < token.rows(); ++t)
        for (int j = 0; j < spec.dim; ++j) token(t, j) += spec.noise * rng.gaussian();
      utt.tokens.push_back({type, row, row + static_cast<int>(token.rows())});
      row += static_cast<int>(token.rows());
      chunks.push_back(std::move(token));
      add_silence();
    }

    feat::FeatureSequence seq;
    seq.utterance_id = utt.utterance_id;
    seq.speaker_id = utt.speaker_id;
    seq.dim_label = feat::learned_label(spec.dim);
    seq.frames.resize(row, spec.dim);
    int at = 0;
    for (const auto& c : chunks) {
      seq.frames.middleRows(at, c.rows()) = c;
      at += static_cast<int>(c.rows());
    }
    archive.entries.push_back(std::move(seq));
    truth.utterances.push_back(std::move(utt));
  }
  archive.validate();
  return {std::move(archive), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Simulated term discovery
// ---------------------------------------------------------------------------

// Exact-span lookup: which ground-truth token does this segment reference hit?
inline std::optional<WordToken> token_at(const GroundTruth& truth, const align::SegmentRef& ref) {
  for (const auto& utt : truth.utterances) {
    if (utt.utterance_id != ref.utterance_id) continue;
    for (const auto& tok : utt.tokens)
      if (tok.start == ref.start && tok.end == ref.end) return tok;
    return std::nullopt;
  }
  return std::nullopt;
}

// Best-overlap lookup for jittered spans; returns the token with maximum
// overlap fraction, if any overlaps at all.
inline std::optional<WordToken> token_overlapping(const GroundTruth& truth,
                                                  const align::SegmentRef& ref) {
  for (const auto& utt : truth.utterances) {
    if (utt.utterance_id != ref.utterance_id) continue;
    const WordToken* best = nullptr;
    int best_overlap = 0;
    for (const auto& tok : utt.tokens) {
      int overlap = std::min(tok.end, ref.end) - std::max(tok.start, ref.start);
      if (overlap > best_overlap) {
        best_overlap = overlap;
        best = &tok;
      }
    }
    if (best) return *best;
    return std::nullopt;
  }
  return std::nullopt;
}

// Samples cross-utterance same-word token pairs, perturbs boundaries by up to
// +-boundary_jitter frames, and replaces an error_rate fraction with
// different-word pairs. Never emits a duplicate pair.
inline std::vector<align::SegmentPair> simulate_utd_pairs(const GroundTruth& truth,
                                                          int pair_budget, double error_rate,
                                                          int boundary_jitter, uint64_t seed) {
  if (error_rate < 0.0 || error_rate >= 1.0) throw_input("error_rate must be in [0,1)");
  if (boundary_jitter < 0) throw_input("boundary_jitter must be >= 0");
  if (pair_budget <= 0) return {};

  struct Tok {
    int utt;
    WordToken token;
  };
  std::vector<Tok> tokens;
  std::vector<int> utt_len(truth.utterances.size(), 0);
  for (size_t u = 0; u < truth.utterances.size(); ++u) {
    for (const auto& tok : truth.utterances[u].tokens) {
      tokens.push_back({static_cast<int>(u), tok});
      utt_len[u] = std::max(utt_len[u], tok.end);
    }
  }

  std::vector<std::pair<int, int>> same;  // indices into tokens
  for (size_t i = 0; i < tokens.size(); ++i)
    for (size_t j = i + 1; j < tokens.size(); ++j)
      if (tokens[i].token.word_type == tokens[j].token.word_type && tokens[i].utt != tokens[j].utt)
        same.emplace_back(static_cast<int>(i), static_cast<int>(j));

  Rng rng = Rng::derived(seed, "utd_pairs");
  int take = pair_budget;
  if (static_cast<size_t>(pair_budget) > same.size()) {
    log_warn("pair budget " + std::to_string(pair_budget) + " exceeds " +
             std::to_string(same.size()) + " available same-word pairs; emitting all");
    take = static_cast<int>(same.size());
  }
  // partial Fisher-Yates
  for (int i = 0; i < take; ++i) {
    auto j = static_cast<size_t>(rng.uniform_int(i, static_cast<int64_t>(same.size()) - 1));
    std::swap(same[static_cast<size_t>(i)], same[j]);
  }

  auto jitter_span = [&](const Tok& tok, Rng& r) {
    align::SegmentRef ref;
    ref.utterance_id = truth.utterances[static_cast<size_t>(tok.utt)].utterance_id;
    ref.start = tok.token.start;
    ref.end = tok.token.end;
    if (boundary_jitter > 0) {
      int len = utt_len[static_cast<size_t>(tok.utt)];
      ref.start += static_cast<int>(r.uniform_int(-boundary_jitter, boundary_jitter));
      ref.end += static_cast<int>(r.uniform_int(-boundary_jitter, boundary_jitter));
      ref.start = std::clamp(ref.start, 0, len - 1);
      ref.end = std::clamp(ref.end, ref.start + 1, len);
    }
    return ref;
  };

  std::vector<align::SegmentPair> out;
  std::set<std::string> keys;
  auto key_of = [](const align::SegmentPair& p) {
    return p.a.utterance_id + ":" + std::to_string(p.a.start) + "-" + std::to_string(p.a.end) +
           "/" + p.b.utterance_id + ":" + std::to_string(p.b.start) + "-" + std::to_string(p.b.end);
  };

  for (int i = 0; i < take; ++i) {
    bool make_error = rng.uniform() < error_rate;
    align::SegmentPair pair;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      if (make_error) {
        auto& t1 = tokens[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(tokens.size()) - 1))];
        auto& t2 = tokens[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(tokens.size()) - 1))];
        if (t1.utt == t2.utt || t1.token.word_type == t2.token.word_type) continue;
        pair = {jitter_span(t1, rng), jitter_span(t2, rng)};
      } else {
        pair = {jitter_span(tokens[static_cast<size_t>(same[static_cast<size_t>(i)].first)], rng),
                jitter_span(tokens[static_cast<size_t>(same[static_cast<size_t>(i)].second)], rng)};
      }
      if (keys.insert(key_of(pair)).second) {
        out.push_back(pair);
        placed = true;
      } else if (!make_error && boundary_jitter == 0) {
        break;  // deterministic duplicate, re-rolling cannot help
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground truth file: one line per token `utterance_id word_type start end
// speaker_id`, frames 0-based, end-exclusive.
// ---------------------------------------------------------------------------

inline void save_truth(const GroundTruth& truth, const std::string& path) {
  auto os = io::open_out(path);
  for (const auto& utt : truth.utterances)
    for (const auto& tok : utt.tokens)
      os << utt.utterance_id << " " << word_label(tok.word_type) << " " << tok.start << " "
         << tok.end << " " << utt.speaker_id << "\n";
}

inline GroundTruth load_truth(const std::string& path) {
  auto is = io::open_in(path);
  GroundTruth truth;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    std::string utt_id, label, spk;
    int start = 0, end = 0;
    if (!(ss >> utt_id)) continue;
    if (!(ss >> label >> start >> end >> spk))
      throw_format("ground truth " + path + ": malformed line " + std::to_string(line_no));
    if (label.empty() || label[0] != 'w')
      throw_format("ground truth " + path + ": bad word label on line " + std::to_string(line_no));
    if (truth.utterances.empty() || truth.utterances.back().utterance_id != utt_id) {
      // new utterance (file groups tokens per utterance, or re-find an old one)
      bool found = false;
      for (auto& u : truth.utterances)
        if (u.utterance_id == utt_id) {
          u.tokens.push_back({std::stoi(label.substr(1)), start, end});
          found = true;
          break;
        }
      if (found) continue;
      UtteranceTruth utt;
      utt.utterance_id = utt_id;
      utt.speaker_id = spk;
      truth.utterances.push_back(std::move(utt));
    }
    truth.utterances.back().tokens.push_back({std::stoi(label.substr(1)), start, end});
  }
  return truth;
}

}  // namespace awe::synth

#endif  // AWE_SYNTH_HPP_
