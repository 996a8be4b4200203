// awe/eval.hpp

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

// Same-different word discrimination (average precision over all segment
// pairs), its DTW counterpart over raw sequences, a linear speaker probe, and
// report export.

#ifndef AWE_EVAL_HPP_
#define AWE_EVAL_HPP_

#include "awe/align.hpp"
#include "awe/awe_models.hpp"
#include "awe/features.hpp"

#include "json.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace awe::eval {

using nlohmann::json;

enum class Distance { cosine, euclidean };

inline Distance parse_distance(const std::string& s) {
  if (s == "cosine") return Distance::cosine;
  if (s == "euclidean") return Distance::euclidean;
  throw_config("unknown distance: " + s);
}

inline double embedding_distance(const Vec& a, const Vec& b, Distance dist) {
  if (dist == Distance::euclidean) return (a - b).norm();
  double na = a.norm(), nb = b.norm();
  if (na < 1e-12 && nb < 1e-12) return 0.0;
  if (na < 1e-12 || nb < 1e-12) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct EvalReport {
  double ap = 0.0;
  std::vector<PrPoint> pr;  // one point per positive rank, recall-monotone
  int64_t n_pairs = 0;
  int64_t n_positive = 0;
  std::string mode;      // "embedding" or "dtw"
  std::string distance;  // local/embedding distance name
  int64_t tie_count = 0;
  // auxiliary per-subset results (positives restricted by speaker identity)
  double ap_same_speaker = -1.0;
  double ap_cross_speaker = -1.0;
  // metadata
  uint64_t seed = 0;
  std::string model;
  std::string features;
};

// Ranked-pair AP: sort ascending by score with stable pair order, then AP =
// sum over positives of precision-at-rank / n_positive.
struct RankedAp {
  double ap = 0.0;
  std::vector<PrPoint> pr;
  int64_t tie_count = 0;
  int64_t n_positive = 0;
};

inline RankedAp ap_from_scores(const std::vector<double>& scores,
                               const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw_usage("ap_from_scores: size mismatch");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  RankedAp out;
  for (bool p : positive) out.n_positive += p ? 1 : 0;
  if (out.n_positive == 0) return out;
  for (size_t i = 1; i < order.size(); ++i)
    if (scores[order[i]] == scores[order[i - 1]]) ++out.tie_count;

  int64_t hits = 0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    if (!positive[order[rank]]) continue;
    ++hits;
    double precision = static_cast<double>(hits) / static_cast<double>(rank + 1);
    out.ap += precision;
    out.pr.push_back({static_cast<double>(hits) / static_cast<double>(out.n_positive), precision});
  }
  out.ap /= static_cast<double>(out.n_positive);
  return out;
}

namespace detail {

template <typename DistanceFn>
EvalReport pairwise_report(size_t n, const std::vector<std::string>& labels,
                           const std::vector<std::string>& speakers, DistanceFn&& distance_of) {
  if (n < 2) throw_eval("evaluation set needs at least 2 items");
  std::vector<double> scores;
  std::vector<bool> positive, same_speaker;
  scores.reserve(n * (n - 1) / 2);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      scores.push_back(distance_of(i, j));
      positive.push_back(labels[i] == labels[j]);
      same_speaker.push_back(speakers[i] == speakers[j]);
    }

  auto ranked = ap_from_scores(scores, positive);
  if (ranked.n_positive == 0) throw_eval("evaluation set has no same-word pair");

  EvalReport report;
  report.ap = ranked.ap;
  report.pr = std::move(ranked.pr);
  report.tie_count = ranked.tie_count;
  report.n_pairs = static_cast<int64_t>(scores.size());
  report.n_positive = ranked.n_positive;

  // auxiliary: same-word positives restricted by speaker identity
  std::vector<bool> pos_same(scores.size()), pos_cross(scores.size());
  int64_t n_same = 0, n_cross = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    pos_same[i] = positive[i] && same_speaker[i];
    pos_cross[i] = positive[i] && !same_speaker[i];
    n_same += pos_same[i] ? 1 : 0;
    n_cross += pos_cross[i] ? 1 : 0;
  }
  if (n_same > 0) report.ap_same_speaker = ap_from_scores(scores, pos_same).ap;
  if (n_cross > 0) report.ap_cross_speaker = ap_from_scores(scores, pos_cross).ap;
  return report;
}

}  // namespace detail

inline EvalReport same_different_ap(const std::vector<seg::Embedding>& items,
                                    Distance dist = Distance::cosine) {
  std::vector<std::string> labels, speakers;
  for (const auto& e : items) {
    labels.push_back(e.label);
    speakers.push_back(e.speaker_id);
  }
  auto report = detail::pairwise_report(items.size(), labels, speakers, [&](size_t i, size_t j) {
    return embedding_distance(items[i].vector, items[j].vector, dist);
  });
  report.mode = "embedding";
  report.distance = dist == Distance::cosine ? "cosine" : "euclidean";
  return report;
}

struct DtwItem {
  Mat frames;
  std::string label;
  std::string speaker_id;
};

// Pair score: DTW cost normalized by alignment path length.
inline EvalReport dtw_same_different_ap(const std::vector<DtwItem>& items,
                                        align::Metric metric = align::Metric::euclidean) {
  std::vector<std::string> labels, speakers;
  for (const auto& e : items) {
    labels.push_back(e.label);
    speakers.push_back(e.speaker_id);
  }
  auto report = detail::pairwise_report(items.size(), labels, speakers, [&](size_t i, size_t j) {
    auto path = align::dtw_align(items[i].frames, items[j].frames, metric);
    return path.cost / static_cast<double>(path.steps.size());
  });
  report.mode = "dtw";
  report.distance = metric == align::Metric::euclidean ? "euclidean" : "cosine";
  return report;
}

// ---------------------------------------------------------------------------
// Speaker probe
// ---------------------------------------------------------------------------

struct ProbeConfig {
  double split_ratio = 0.7;  // train fraction, stratified per speaker
  int steps = 500;
  double lr = 0.1;
  double l2 = 1e-4;
};

struct ProbeResult {
  double accuracy = 0.0;
  std::map<std::string, std::pair<int, int>> split_counts;  // speaker -> (train, test)
};

// Multinomial logistic regression, full-batch gradient descent with a fixed
// budget; deterministic given seed.
inline ProbeResult speaker_probe(const std::vector<seg::Embedding>& items, double split_ratio,
                                 uint64_t seed, const ProbeConfig& cfg_in = ProbeConfig{}) {
  ProbeConfig cfg = cfg_in;
  cfg.split_ratio = split_ratio;
  if (items.size() < 4) throw_eval("speaker probe needs at least 4 embeddings");

  std::map<std::string, std::vector<size_t>> by_speaker;
  for (size_t i = 0; i < items.size(); ++i) by_speaker[items[i].speaker_id].push_back(i);
  if (by_speaker.size() < 2) throw_eval("speaker probe needs at least 2 speakers");
  for (const auto& [spk, idx] : by_speaker)
    if (idx.size() < 2)
      throw_eval("stratification: speaker " + spk + " has a single embedding");

  Rng rng = Rng::derived(seed, "speaker_probe");
  std::vector<size_t> train, test;
  std::map<std::string, int> class_of;
  ProbeResult result;
  for (auto& [spk, idx] : by_speaker) {
    class_of[spk] = static_cast<int>(class_of.size());
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    auto n_train = static_cast<size_t>(std::lround(cfg.split_ratio * static_cast<double>(idx.size())));
    n_train = std::clamp<size_t>(n_train, 1, idx.size() - 1);
    for (size_t i = 0; i < idx.size(); ++i) (i < n_train ? train : test).push_back(idx[i]);
    result.split_counts[spk] = {static_cast<int>(n_train), static_cast<int>(idx.size() - n_train)};
  }

  const int d = static_cast<int>(items.front().vector.size());
  const int C = static_cast<int>(class_of.size());
  Mat X(train.size(), d);
  std::vector<int> y(train.size());
  for (size_t i = 0; i < train.size(); ++i) {
    X.row(static_cast<Eigen::Index>(i)) = items[train[i]].vector.transpose();
    y[i] = class_of[items[train[i]].speaker_id];
  }

  Mat W = Mat::Zero(d, C);
  Vec b = Vec::Zero(C);
  const double inv_n = 1.0 / static_cast<double>(train.size());
  for (int step = 0; step < cfg.steps; ++step) {
    Mat logits = (X * W).rowwise() + b.transpose();
    Mat probs = logits;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      double mx = probs.row(r).maxCoeff();
      probs.row(r) = (probs.row(r).array() - mx).exp();
      probs.row(r) /= probs.row(r).sum();
    }
    for (size_t i = 0; i < train.size(); ++i) probs(static_cast<Eigen::Index>(i), y[i]) -= 1.0;
    Mat grad_w = inv_n * (X.transpose() * probs) + cfg.l2 * W;
    Vec grad_b = inv_n * probs.colwise().sum().transpose();
    W -= cfg.lr * grad_w;
    b -= cfg.lr * grad_b;
  }

  int correct = 0;
  for (size_t i : test) {
    Vec logits = W.transpose() * items[i].vector + b;
    int arg = 0;
    logits.maxCoeff(&arg);
    if (arg == class_of[items[i].speaker_id]) ++correct;
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  return result;
}

// ---------------------------------------------------------------------------
// Report export
// ---------------------------------------------------------------------------

inline json report_to_json(const EvalReport& report) {
  json pr = json::array();
  for (const auto& p : report.pr) pr.push_back(json::array({p.recall, p.precision}));
  json j{{"ap", report.ap},
         {"n_pairs", report.n_pairs},
         {"n_positive", report.n_positive},
         {"mode", report.mode},
         {"distance", report.distance},
         {"tie_count", report.tie_count},
         {"pr", pr},
         {"meta", {{"seed", report.seed}, {"model", report.model}, {"features", report.features}}}};
  if (report.ap_same_speaker >= 0.0) j["ap_same_speaker"] = report.ap_same_speaker;
  if (report.ap_cross_speaker >= 0.0) j["ap_cross_speaker"] = report.ap_cross_speaker;
  return j;
}

inline EvalReport report_from_json(const json& j) {
  EvalReport report;
  j.at("ap").get_to(report.ap);
  j.at("n_pairs").get_to(report.n_pairs);
  j.at("n_positive").get_to(report.n_positive);
  j.at("mode").get_to(report.mode);
  j.at("distance").get_to(report.distance);
  j.at("tie_count").get_to(report.tie_count);
  for (const auto& p : j.at("pr")) report.pr.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  if (j.contains("ap_same_speaker")) j.at("ap_same_speaker").get_to(report.ap_same_speaker);
  if (j.contains("ap_cross_speaker")) j.at("ap_cross_speaker").get_to(report.ap_cross_speaker);
  const auto& meta = j.at("meta");
  meta.at("seed").get_to(report.seed);
  meta.at("model").get_to(report.model);
  meta.at("features").get_to(report.features);
  return report;
}

enum class ReportFormat { json_format, csv };

inline void export_report(const EvalReport& report, const std::string& path, ReportFormat format) {
  if (format == ReportFormat::json_format) {
    io::write_file(path, report_to_json(report).dump(2) + "\n");
    return;
  }
  std::string csv = "recall,precision\n";
  for (const auto& p : report.pr)
    csv += format_double(p.recall) + "," + format_double(p.precision) + "\n";
  io::write_file(path, csv);
}

inline EvalReport import_report(const std::string& path) {
  return report_from_json(json::parse(io::read_file(path)));
}

}  // namespace awe::eval

#endif  // AWE_EVAL_HPP_
