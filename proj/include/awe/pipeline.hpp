// awe/pipeline.hpp

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

// Experiment orchestration: configs, seeded pipelines (corpus -> features ->
// pairs -> frame model -> encode -> AWE -> eval), content-hash stage caching,
// run manifests, the crosslingual protocol, and multi-run summaries.

#ifndef AWE_PIPELINE_HPP_
#define AWE_PIPELINE_HPP_

#include "awe/align.hpp"
#include "awe/awe_models.hpp"
#include "awe/eval.hpp"
#include "awe/features.hpp"
#include "awe/frame_models.hpp"
#include "awe/synth.hpp"

#include "json.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace awe::pipe {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SplitConfig {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct PairsConfig {
  int budget = 600;
  double error_rate = 0.05;
  int jitter = 1;
};

struct EvalConfig {
  std::string distance = "cosine";
  int max_eval_tokens = 300;  // 0 = all test tokens
  double probe_split = 0.7;
};

struct CpcTrain {
  frame::CpcConfig model;
  int batch_utterances = 9;
  double lr = 1e-5;
  int epochs = 15000;
  bool validate = false;  // downstream-proxy AP on the validation tokens
  int eval_every = 5;
  int patience = 5;
};

struct ApcTrain {
  frame::ApcConfig model;
  double lr = 1e-3;
  int epochs = 50;
  int batch_utterances = 1;
};

struct FcaeTrain {
  frame::FrameCaeConfig model;
  int ae_epochs = 5;
  int cae_epochs = 10;
  double lr = 1e-3;
  double ae_lr = 1e-3;
  int batch_frames = 256;
};

struct AweTrain {
  seg::AweConfig model;
  int ae_epochs = 150;
  double ae_lr = 1e-3;
  int cae_epochs = 25;
  double cae_lr = 1e-4;
  int batch_segments = 256;
  bool validate = true;
  int eval_every = 1;
  int patience = 5;
};

struct ExperimentConfig {
  std::string language = "synthA";
  synth::CorpusSpec corpus;        // synthetic source (used unless archive_path set)
  std::string archive_path;        // external corpus: FARC file
  std::string truth_path;          //   plus its ground-truth token file
  SplitConfig split;
  std::string normalize = "per-speaker";
  PairsConfig pairs;
  std::string features = "mfcc";  // mfcc | cpc | apc | cae
  std::string method = "cae-rnn";  // downsample | cae-rnn | dtw-direct
  CpcTrain cpc;
  ApcTrain apc;
  FcaeTrain fcae;
  AweTrain awe;
  EvalConfig eval;
  std::vector<uint64_t> seeds{1, 2, 3};
  std::string out_dir = "out";

  void validate() const {
    if (features != "mfcc" && features != "cpc" && features != "apc" && features != "cae")
      throw_config("unknown feature kind: " + features);
    if (method != "downsample" && method != "cae-rnn" && method != "dtw-direct")
      throw_config("unknown awe method: " + method);
    if (seeds.empty()) throw_config("seeds list must be non-empty");
    if (split.train <= 0.0 || split.test <= 0.0 || split.val < 0.0 ||
        split.train + split.val + split.test > 1.0 + 1e-9)
      throw_config("split fractions must be positive (val >= 0) and sum to at most 1");
  }
};

// JSON mapping: every field optional, defaults as above. CLI flags override.
inline void corpus_from_json(const json& j, synth::CorpusSpec& c) {
  c.n_word_types = j.value("n_word_types", c.n_word_types);
  c.n_speakers = j.value("n_speakers", c.n_speakers);
  c.n_utterances = j.value("n_utterances", c.n_utterances);
  c.words_per_utterance_min = j.value("words_per_utterance_min", c.words_per_utterance_min);
  c.words_per_utterance_max = j.value("words_per_utterance_max", c.words_per_utterance_max);
  c.phones_per_word_min = j.value("phones_per_word_min", c.phones_per_word_min);
  c.phones_per_word_max = j.value("phones_per_word_max", c.phones_per_word_max);
  c.frames_per_phone_min = j.value("frames_per_phone_min", c.frames_per_phone_min);
  c.frames_per_phone_max = j.value("frames_per_phone_max", c.frames_per_phone_max);
  c.dim = j.value("dim", c.dim);
  c.speaker_scale = j.value("speaker_scale", c.speaker_scale);
  c.noise = j.value("noise", c.noise);
  c.warp_min = j.value("warp_min", c.warp_min);
  c.warp_max = j.value("warp_max", c.warp_max);
  c.seed = j.value("seed", c.seed);
  c.language = j.value("language", c.language);
}

inline json corpus_to_json(const synth::CorpusSpec& c) {
  return json{{"n_word_types", c.n_word_types},
              {"n_speakers", c.n_speakers},
              {"n_utterances", c.n_utterances},
              {"words_per_utterance_min", c.words_per_utterance_min},
              {"words_per_utterance_max", c.words_per_utterance_max},
              {"phones_per_word_min", c.phones_per_word_min},
              {"phones_per_word_max", c.phones_per_word_max},
              {"frames_per_phone_min", c.frames_per_phone_min},
              {"frames_per_phone_max", c.frames_per_phone_max},
              {"dim", c.dim},
              {"speaker_scale", c.speaker_scale},
              {"noise", c.noise},
              {"warp_min", c.warp_min},
              {"warp_max", c.warp_max},
              {"seed", c.seed},
              {"language", c.language}};
}

inline ExperimentConfig desk_config();

// Field defaults are the paper-scale values; `"preset": "desk"` starts from
// the scaled-down desk configuration instead.
inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  if (j.value("preset", "paper") == "desk") c = desk_config();
  c.language = j.value("language", c.language);
  if (j.contains("corpus")) {
    const auto& cj = j.at("corpus");
    if (cj.contains("synthetic")) corpus_from_json(cj.at("synthetic"), c.corpus);
    c.archive_path = cj.value("archive", "");
    c.truth_path = cj.value("truth", "");
  }
  c.corpus.language = c.language;
  if (j.contains("split")) {
    c.split.train = j.at("split").value("train", c.split.train);
    c.split.val = j.at("split").value("val", c.split.val);
    c.split.test = j.at("split").value("test", c.split.test);
  }
  c.normalize = j.value("normalize", c.normalize);
  if (j.contains("pairs")) {
    c.pairs.budget = j.at("pairs").value("budget", c.pairs.budget);
    c.pairs.error_rate = j.at("pairs").value("error_rate", c.pairs.error_rate);
    c.pairs.jitter = j.at("pairs").value("jitter", c.pairs.jitter);
  }
  c.features = j.value("features", c.features);
  c.method = j.value("method", c.method);
  auto load_cpc = [&](const json& t) {
    if (t.contains("model")) c.cpc.model = t.at("model").get<frame::CpcConfig>();
    c.cpc.batch_utterances = t.value("batch_utterances", c.cpc.batch_utterances);
    c.cpc.lr = t.value("lr", c.cpc.lr);
    c.cpc.epochs = t.value("epochs", c.cpc.epochs);
    c.cpc.validate = t.value("validate", c.cpc.validate);
    c.cpc.eval_every = t.value("eval_every", c.cpc.eval_every);
    c.cpc.patience = t.value("patience", c.cpc.patience);
  };
  if (j.contains("cpc")) load_cpc(j.at("cpc"));
  if (j.contains("apc")) {
    const auto& t = j.at("apc");
    if (t.contains("model")) c.apc.model = t.at("model").get<frame::ApcConfig>();
    c.apc.lr = t.value("lr", c.apc.lr);
    c.apc.epochs = t.value("epochs", c.apc.epochs);
    c.apc.batch_utterances = t.value("batch_utterances", c.apc.batch_utterances);
  }
  if (j.contains("fcae")) {
    const auto& t = j.at("fcae");
    if (t.contains("model")) c.fcae.model = t.at("model").get<frame::FrameCaeConfig>();
    c.fcae.ae_epochs = t.value("ae_epochs", c.fcae.ae_epochs);
    c.fcae.cae_epochs = t.value("cae_epochs", c.fcae.cae_epochs);
    c.fcae.lr = t.value("lr", c.fcae.lr);
    c.fcae.ae_lr = t.value("ae_lr", c.fcae.ae_lr);
    c.fcae.batch_frames = t.value("batch_frames", c.fcae.batch_frames);
  }
  if (j.contains("awe")) {
    const auto& t = j.at("awe");
    if (t.contains("model")) c.awe.model = t.at("model").get<seg::AweConfig>();
    c.awe.ae_epochs = t.value("ae_epochs", c.awe.ae_epochs);
    c.awe.ae_lr = t.value("ae_lr", c.awe.ae_lr);
    c.awe.cae_epochs = t.value("cae_epochs", c.awe.cae_epochs);
    c.awe.cae_lr = t.value("cae_lr", c.awe.cae_lr);
    c.awe.batch_segments = t.value("batch_segments", c.awe.batch_segments);
    c.awe.validate = t.value("validate", c.awe.validate);
    c.awe.eval_every = t.value("eval_every", c.awe.eval_every);
    c.awe.patience = t.value("patience", c.awe.patience);
  }
  if (j.contains("eval")) {
    const auto& t = j.at("eval");
    c.eval.distance = t.value("distance", c.eval.distance);
    c.eval.max_eval_tokens = t.value("max_eval_tokens", c.eval.max_eval_tokens);
    c.eval.probe_split = t.value("probe_split", c.eval.probe_split);
  }
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  c.out_dir = j.value("out_dir", c.out_dir);
  c.validate();
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["language"] = c.language;
  if (!c.archive_path.empty())
    j["corpus"] = json{{"archive", c.archive_path}, {"truth", c.truth_path}};
  else
    j["corpus"] = json{{"synthetic", corpus_to_json(c.corpus)}};
  j["split"] = json{{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
  j["normalize"] = c.normalize;
  j["pairs"] = json{{"budget", c.pairs.budget}, {"error_rate", c.pairs.error_rate}, {"jitter", c.pairs.jitter}};
  j["features"] = c.features;
  j["method"] = c.method;
  j["cpc"] = json{{"model", c.cpc.model},       {"batch_utterances", c.cpc.batch_utterances},
                  {"lr", c.cpc.lr},             {"epochs", c.cpc.epochs},
                  {"validate", c.cpc.validate}, {"eval_every", c.cpc.eval_every},
                  {"patience", c.cpc.patience}};
  j["apc"] = json{{"model", c.apc.model},
                  {"lr", c.apc.lr},
                  {"epochs", c.apc.epochs},
                  {"batch_utterances", c.apc.batch_utterances}};
  j["fcae"] = json{{"model", c.fcae.model},
                   {"ae_epochs", c.fcae.ae_epochs},
                   {"cae_epochs", c.fcae.cae_epochs},
                   {"lr", c.fcae.lr},
                   {"ae_lr", c.fcae.ae_lr},
                   {"batch_frames", c.fcae.batch_frames}};
  j["awe"] = json{{"model", c.awe.model},       {"ae_epochs", c.awe.ae_epochs},
                  {"ae_lr", c.awe.ae_lr},       {"cae_epochs", c.awe.cae_epochs},
                  {"cae_lr", c.awe.cae_lr},     {"batch_segments", c.awe.batch_segments},
                  {"validate", c.awe.validate}, {"eval_every", c.awe.eval_every},
                  {"patience", c.awe.patience}};
  j["eval"] = json{{"distance", c.eval.distance},
                   {"max_eval_tokens", c.eval.max_eval_tokens},
                   {"probe_split", c.eval.probe_split}};
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir;
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  return config_from_json(json::parse(io::read_file(path)));
}

// Desk-scale defaults: the paper-scale model shapes are scaled down so a full
// grid with three seeds runs on a laptop CPU in minutes.
inline ExperimentConfig desk_config() {  // NOLINT(misc-definitions-in-headers)
  ExperimentConfig c;
  c.corpus = synth::CorpusSpec{};  // 12 word types, 8 speakers, 600 utterances
  // heavier corruption than the generator defaults, and global (not
  // per-speaker) standardization: a per-speaker fit would exactly invert the
  // diagonal speaker transform and leave nothing for the learners to solve
  c.corpus.speaker_scale = 0.6;
  c.corpus.noise = 0.15;
  c.corpus.warp_min = 0.85;
  c.corpus.warp_max = 1.15;
  c.corpus.frames_per_phone_min = 3;
  c.corpus.frames_per_phone_max = 6;
  c.normalize = "global";
  c.pairs.error_rate = 0.0;
  c.pairs.jitter = 0;

  c.cpc.model.enc_layers = 2;
  c.cpc.model.enc_hidden = 64;
  c.cpc.model.dropout_after = 1;
  c.cpc.model.z_dim = 16;
  c.cpc.model.c_dim = 32;
  c.cpc.model.steps_ahead = 2;
  c.cpc.model.n_candidates = 8;
  c.cpc.batch_utterances = 8;
  c.cpc.lr = 1e-3;
  c.cpc.epochs = 12;

  c.apc.model.gru_layers = 2;
  c.apc.model.hidden = 48;
  c.apc.epochs = 36;
  c.apc.batch_utterances = 8;

  c.fcae.model.enc_layers = 3;
  c.fcae.model.hidden = 64;
  c.fcae.model.latent = 39;
  c.fcae.ae_epochs = 1;
  c.fcae.ae_lr = 2e-4;  // light warm start; the correspondence phase does the work
  c.fcae.cae_epochs = 18;

  c.awe.model.gru_layers = 1;
  c.awe.model.hidden = 64;
  c.awe.model.embed_dim = 32;
  c.awe.ae_epochs = 6;
  c.awe.cae_epochs = 14;
  c.awe.cae_lr = 1e-3;
  c.awe.batch_segments = 64;
  c.awe.validate = false;  // fixed epochs; validation early stopping is opt-in
  c.awe.eval_every = 2;
  c.awe.patience = 3;

  return c;
}

// ---------------------------------------------------------------------------
// Manifests and stage caching
// ---------------------------------------------------------------------------

struct StageInfo {
  std::string name;
  std::string key;
  bool skipped = false;
  double seconds = 0.0;
  std::vector<std::pair<std::string, std::string>> outputs;  // (path, hash)
};

struct RunManifest {
  json config;
  std::string version = kVersion;
  std::vector<StageInfo> stages;

  json to_json() const {
    json stages_json = json::array();
    for (const auto& s : stages) {
      json outs = json::array();
      for (const auto& [p, h] : s.outputs) outs.push_back(json{{"path", p}, {"hash", h}});
      stages_json.push_back(json{{"name", s.name},
                                 {"key", s.key},
                                 {"skipped", s.skipped},
                                 {"seconds", s.seconds},
                                 {"outputs", outs}});
    }
    return json{{"config", config}, {"version", version}, {"stages", stages_json}};
  }

  const StageInfo& stage(const std::string& name) const {
    for (const auto& s : stages)
      if (s.name == name) return s;
    throw_internal("manifest has no stage " + name);
  }
};

namespace detail {

inline std::string stage_key(const std::vector<std::string>& parts) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : parts) {
    h = fnv1a64(p, h);
    h = fnv1a64("|", 1, h);  // field separator byte
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

// Runs `body` unless the stamp written on a previous run already covers the
// same key and the outputs still hash to what the stamp recorded.
class StageRunner {
 public:
  explicit StageRunner(RunManifest* manifest) : manifest_(manifest) {}

  bool run(const std::string& name, const std::string& key,
           const std::vector<std::string>& outputs, const std::function<void()>& body) {
    StageInfo info;
    info.name = name;
    info.key = key;
    const std::string stamp_path = outputs.front() + ".stamp";
    if (up_to_date(key, stamp_path, outputs)) {
      info.skipped = true;
      for (const auto& p : outputs) info.outputs.emplace_back(p, hash_file_hex(p));
      if (manifest_) manifest_->stages.push_back(info);
      return false;
    }
    auto start = std::chrono::steady_clock::now();
    body();
    info.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json stamp{{"key", key}, {"outputs", json::array()}};
    for (const auto& p : outputs) {
      if (!io::file_exists(p)) throw_internal("stage " + name + " did not produce " + p);
      auto h = hash_file_hex(p);
      info.outputs.emplace_back(p, h);
      stamp["outputs"].push_back(json{{"path", p}, {"hash", h}});
    }
    io::write_file(stamp_path, stamp.dump(2) + "\n");
    if (manifest_) manifest_->stages.push_back(info);
    return true;
  }

 private:
  static bool up_to_date(const std::string& key, const std::string& stamp_path,
                         const std::vector<std::string>& outputs) {
    if (!io::file_exists(stamp_path)) return false;
    json stamp;
    try {
      stamp = json::parse(io::read_file(stamp_path));
    } catch (...) {
      return false;
    }
    if (stamp.value("key", "") != key) return false;
    for (const auto& out : stamp.value("outputs", json::array())) {
      std::string path = out.value("path", "");
      if (!io::file_exists(path)) return false;
      if (hash_file_hex(path) != out.value("hash", "")) return false;
    }
    // every declared output must be covered by the stamp
    for (const auto& p : outputs) {
      bool found = false;
      for (const auto& out : stamp.value("outputs", json::array()))
        if (out.value("path", "") == p) found = true;
      if (!found) return false;
    }
    return true;
  }

  RunManifest* manifest_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Splits and evaluation token sets
// ---------------------------------------------------------------------------

struct Split {
  std::vector<std::string> train, val, test;

  std::set<std::string> train_set() const { return {train.begin(), train.end()}; }

  json to_json() const { return json{{"train", train}, {"val", val}, {"test", test}}; }
};

// Contiguous index split; speakers cycle with the utterance index, so each
// portion stays speaker-balanced.
inline Split make_split(const synth::GroundTruth& truth, const SplitConfig& cfg) {
  Split split;
  const auto n = truth.utterances.size();
  auto n_train = static_cast<size_t>(std::lround(cfg.train * static_cast<double>(n)));
  auto n_val = static_cast<size_t>(std::lround(cfg.val * static_cast<double>(n)));
  for (size_t i = 0; i < n; ++i) {
    const auto& id = truth.utterances[i].utterance_id;
    if (i < n_train)
      split.train.push_back(id);
    else if (i < n_train + n_val)
      split.val.push_back(id);
    else
      split.test.push_back(id);
  }
  if (split.train.empty() || split.test.empty()) throw_config("split leaves train or test empty");
  return split;
}

// Ground-truth word tokens of the given utterances, optionally capped by a
// deterministic subsample keyed on the corpus seed.
inline std::vector<seg::EvalSegment> tokens_of(const synth::GroundTruth& truth,
                                               const std::vector<std::string>& utterances,
                                               int max_tokens, uint64_t corpus_seed) {
  std::set<std::string> wanted(utterances.begin(), utterances.end());
  std::vector<seg::EvalSegment> tokens;
  for (const auto& utt : truth.utterances) {
    if (!wanted.count(utt.utterance_id)) continue;
    for (const auto& tok : utt.tokens)
      tokens.push_back({{utt.utterance_id, tok.start, tok.end}, synth::word_label(tok.word_type),
                        utt.speaker_id});
  }
  if (max_tokens > 0 && static_cast<int>(tokens.size()) > max_tokens) {
    Rng rng = Rng::derived(corpus_seed, "eval_tokens");
    for (int i = 0; i < max_tokens; ++i) {
      auto j = static_cast<size_t>(rng.uniform_int(i, static_cast<int64_t>(tokens.size()) - 1));
      std::swap(tokens[static_cast<size_t>(i)], tokens[j]);
    }
    tokens.resize(static_cast<size_t>(max_tokens));
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// The per-cell pipeline
// ---------------------------------------------------------------------------

struct CellResult {
  eval::EvalReport report;
  double probe_accuracy = -1.0;
  RunManifest manifest;
  std::string cell_dir;
};

namespace detail {

struct LanguageArtifacts {
  std::string corpus_farc, truth_txt, base_farc, deltas_farc, pairs_txt;
};

inline feat::FeatureArchive archive_subset(const feat::FeatureArchive& archive,
                                           const std::set<std::string>& wanted) {
  feat::FeatureArchive out;
  for (const auto& e : archive.entries)
    if (wanted.count(e.utterance_id)) out.entries.push_back(e);
  return out;
}

// Stages shared by every cell of one language: corpus, normalization, deltas,
// discovered pairs.
inline LanguageArtifacts prepare_language(const ExperimentConfig& cfg, StageRunner& runner) {
  fs::path lang_dir = fs::path(cfg.out_dir) / cfg.language;
  fs::create_directories(lang_dir / "corpus");
  fs::create_directories(lang_dir / "features");
  fs::create_directories(lang_dir / "models");

  LanguageArtifacts art;
  art.corpus_farc = (lang_dir / "corpus" / "corpus.farc").string();
  art.truth_txt = (lang_dir / "corpus" / "truth.txt").string();
  const std::string split_json = (lang_dir / "corpus" / "split.json").string();

  if (cfg.archive_path.empty()) {
    auto key = stage_key({"corpus", corpus_to_json(cfg.corpus).dump()});
    runner.run("corpus", key, {art.corpus_farc, art.truth_txt}, [&]() {
      auto [archive, truth] = synth::generate_corpus(cfg.corpus);
      feat::save_farc(archive, art.corpus_farc);
      synth::save_truth(truth, art.truth_txt);
    });
  } else {
    if (!io::file_exists(cfg.archive_path) || !io::file_exists(cfg.truth_path))
      throw_data("external corpus files not found: " + cfg.archive_path + ", " + cfg.truth_path);
    art.corpus_farc = cfg.archive_path;
    art.truth_txt = cfg.truth_path;
  }

  auto truth = synth::load_truth(art.truth_txt);
  auto split = make_split(truth, cfg.split);
  io::write_file(split_json, split.to_json().dump(2) + "\n");

  art.base_farc = (lang_dir / "features" / "base.farc").string();
  {
    auto key = stage_key({"normalize", hash_file_hex(art.corpus_farc), cfg.normalize,
                          split.to_json().dump()});
    runner.run("normalize", key, {art.base_farc}, [&]() {
      auto archive = feat::load_farc(art.corpus_farc);
      auto train_ids = split.train_set();
      archive = feat::normalize(std::move(archive), feat::parse_normalize_mode(cfg.normalize),
                                &train_ids);
      feat::save_farc(archive, art.base_farc);
    });
  }

  art.deltas_farc = (lang_dir / "features" / "deltas.farc").string();
  {
    auto key = stage_key({"deltas", hash_file_hex(art.base_farc)});
    runner.run("deltas", key, {art.deltas_farc}, [&]() {
      auto archive = feat::load_farc(art.base_farc);
      feat::FeatureArchive deltas;
      for (const auto& e : archive.entries) deltas.entries.push_back(feat::add_deltas(e));
      feat::save_farc(deltas, art.deltas_farc);
    });
  }

  art.pairs_txt = (lang_dir / "pairs.txt").string();
  {
    json pj{{"budget", cfg.pairs.budget}, {"error_rate", cfg.pairs.error_rate},
            {"jitter", cfg.pairs.jitter}};
    auto key = stage_key({"pairs", hash_file_hex(art.truth_txt), pj.dump(),
                          split.to_json().dump()});
    runner.run("pairs", key, {art.pairs_txt}, [&]() {
      // discovery runs on the training portion only, seeded by the corpus
      synth::GroundTruth train_truth;
      auto train_ids = split.train_set();
      for (const auto& u : truth.utterances)
        if (train_ids.count(u.utterance_id)) train_truth.utterances.push_back(u);
      auto pairs = synth::simulate_utd_pairs(train_truth, cfg.pairs.budget, cfg.pairs.error_rate,
                                             cfg.pairs.jitter, cfg.corpus.seed);
      align::save_pairs(pairs, art.pairs_txt);
    });
  }
  return art;
}

inline std::string frame_model_stage(const ExperimentConfig& cfg, const LanguageArtifacts& art,
                                     const Split& split, uint64_t seed, StageRunner& runner) {
  fs::path lang_dir = fs::path(cfg.out_dir) / cfg.language;
  const std::string model_path =
      (lang_dir / "models" / (cfg.features + "-seed" + std::to_string(seed) + ".awef")).string();
  const std::string trace_path =
      (lang_dir / "models" / (cfg.features + "-seed" + std::to_string(seed) + ".trace.json")).string();

  auto train_ids = split.train_set();
  if (cfg.features == "cpc") {
    json sj{{"model", cfg.cpc.model}, {"batch", cfg.cpc.batch_utterances}, {"lr", cfg.cpc.lr},
            {"epochs", cfg.cpc.epochs}, {"validate", cfg.cpc.validate}};
    auto key = stage_key({"train-cpc", hash_file_hex(art.base_farc), sj.dump(),
                          std::to_string(seed)});
    runner.run("frame-model", key, {model_path, trace_path}, [&]() {
      auto archive = feat::load_farc(art.base_farc);
      auto train_archive = archive_subset(archive, train_ids);
      auto model_cfg = cfg.cpc.model;
      model_cfg.input_dim = train_archive.dim();
      Rng init = Rng::derived(seed, "cpc_init");
      auto model = frame::CpcModel::build(model_cfg, init);
      frame::CpcSchedule schedule;
      schedule.batch_utterances = cfg.cpc.batch_utterances;
      schedule.lr = cfg.cpc.lr;
      schedule.max_epochs = cfg.cpc.epochs;
      schedule.eval_every = cfg.cpc.eval_every;
      schedule.patience = cfg.cpc.patience;
      synth::GroundTruth truth = synth::load_truth(art.truth_txt);
      auto val_tokens = tokens_of(truth, split.val, cfg.eval.max_eval_tokens, cfg.corpus.seed);
      if (cfg.cpc.validate && !val_tokens.empty()) {
        // downstream proxy: downsampled embeddings of validation tokens
        schedule.validation = [&, val_tokens](const frame::CpcModel& m) {
          std::vector<seg::Embedding> embs;
          std::map<std::string, feat::FeatureSequence> cache;
          for (const auto& tok : val_tokens) {
            if (!cache.count(tok.ref.utterance_id))
              cache[tok.ref.utterance_id] =
                  frame::encode_frames(m, archive.by_id(tok.ref.utterance_id));
            const auto& enc = cache[tok.ref.utterance_id];
            seg::Embedding e;
            e.vector = seg::downsample_vector(
                enc.frames.middleRows(tok.ref.start, tok.ref.end - tok.ref.start));
            e.label = tok.label;
            e.speaker_id = tok.speaker_id;
            embs.push_back(std::move(e));
          }
          return eval::same_different_ap(embs, eval::parse_distance(cfg.eval.distance)).ap;
        };
      }
      auto trace = frame::train_cpc(model, train_archive, schedule, seed);
      frame::save_model(model, model_path);
      json tj{{"loss", trace.loss}, {"validation", trace.validation},
              {"clip_events", trace.clip_events}, {"best_epoch", trace.best_epoch},
              {"warnings", trace.warnings}};
      io::write_file(trace_path, tj.dump(2) + "\n");
    });
    return model_path;
  }

  if (cfg.features == "apc") {
    json sj{{"model", cfg.apc.model}, {"lr", cfg.apc.lr}, {"epochs", cfg.apc.epochs},
            {"batch", cfg.apc.batch_utterances}};
    auto key = stage_key({"train-apc", hash_file_hex(art.base_farc), sj.dump(),
                          std::to_string(seed)});
    runner.run("frame-model", key, {model_path, trace_path}, [&]() {
      auto train_archive = archive_subset(feat::load_farc(art.base_farc), train_ids);
      auto model_cfg = cfg.apc.model;
      model_cfg.input_dim = train_archive.dim();
      Rng init = Rng::derived(seed, "apc_init");
      auto model = frame::ApcModel::build(model_cfg, init);
      frame::ApcSchedule schedule;
      schedule.lr = cfg.apc.lr;
      schedule.epochs = cfg.apc.epochs;
      schedule.batch_utterances = cfg.apc.batch_utterances;
      auto trace = frame::train_apc(model, train_archive, schedule, seed);
      frame::save_model(model, model_path);
      json tj{{"loss", trace.loss}, {"aux", trace.aux}, {"clip_events", trace.clip_events},
              {"warnings", trace.warnings}};
      io::write_file(trace_path, tj.dump(2) + "\n");
    });
    return model_path;
  }

  if (cfg.features == "cae") {
    json sj{{"model", cfg.fcae.model}, {"ae_epochs", cfg.fcae.ae_epochs},
            {"cae_epochs", cfg.fcae.cae_epochs}, {"lr", cfg.fcae.lr},
            {"ae_lr", cfg.fcae.ae_lr}, {"batch", cfg.fcae.batch_frames}};
    auto key = stage_key({"train-fcae", hash_file_hex(art.deltas_farc),
                          hash_file_hex(art.pairs_txt), sj.dump(), std::to_string(seed)});
    runner.run("frame-model", key, {model_path, trace_path}, [&]() {
      auto deltas = feat::load_farc(art.deltas_farc);
      auto train_archive = archive_subset(deltas, train_ids);
      auto pairs = align::load_pairs(art.pairs_txt);
      auto frame_pairs = align::extract_frame_pairs(pairs, deltas, align::Metric::euclidean);
      auto model_cfg = cfg.fcae.model;
      model_cfg.input_dim = train_archive.dim();
      Rng init = Rng::derived(seed, "fcae_init");
      auto model = frame::FrameCaeModel::build(model_cfg, init);
      frame::FcaeSchedule schedule;
      schedule.ae_epochs = cfg.fcae.ae_epochs;
      schedule.cae_epochs = cfg.fcae.cae_epochs;
      schedule.lr = cfg.fcae.lr;
      schedule.ae_lr = cfg.fcae.ae_lr;
      schedule.batch_frames = cfg.fcae.batch_frames;
      auto trace = frame::train_frame_cae(model, train_archive, frame_pairs, schedule, seed);
      frame::save_model(model, model_path);
      json tj{{"loss", trace.loss}, {"cae_start_loss", trace.cae_start_loss},
              {"clip_events", trace.clip_events}, {"warnings", trace.warnings},
              {"ae_epochs", cfg.fcae.ae_epochs}};
      io::write_file(trace_path, tj.dump(2) + "\n");
    });
    return model_path;
  }
  throw_internal("frame_model_stage called for features=" + cfg.features);
}

// Encodes the whole corpus with a trained frame model (possibly from another
// language's run). Returns the path of the learned-feature archive.
inline std::string encode_stage(const ExperimentConfig& cfg, const LanguageArtifacts& art,
                                const std::string& model_path, const std::string& tag,
                                StageRunner& runner) {
  fs::path lang_dir = fs::path(cfg.out_dir) / cfg.language;
  const std::string out_path = (lang_dir / "features" / (tag + ".farc")).string();
  const std::string input_farc = cfg.features == "cae" ? art.deltas_farc : art.base_farc;
  auto key = stage_key({"encode", hash_file_hex(model_path), hash_file_hex(input_farc)});
  runner.run("encode", key, {out_path}, [&]() {
    auto model = frame::load_frame_model(model_path);
    auto archive = feat::load_farc(input_farc);
    feat::save_farc(frame::encode_archive(model, archive), out_path);
  });
  return out_path;
}

}  // namespace detail

// Runs one (features, method, seed) cell. `epochs_from` (>0) fixes the
// CAE-RNN epoch count instead of validation-based early stopping, and
// `cell_tag` overrides the cell directory name (used by the crosslingual
// protocol).
inline CellResult run_cell(const ExperimentConfig& cfg, uint64_t seed, int epochs_from = 0,
                           const std::string& cell_tag = "",
                           const std::string& frame_model_override = "") {
  cfg.validate();
  CellResult result;
  result.manifest.config = config_to_json(cfg);
  detail::StageRunner runner(&result.manifest);

  auto art = detail::prepare_language(cfg, runner);
  auto truth = synth::load_truth(art.truth_txt);
  auto split = make_split(truth, cfg.split);

  const std::string tag = cell_tag.empty() ? cfg.features + "-" + cfg.method : cell_tag;
  fs::path cell_dir = fs::path(cfg.out_dir) / cfg.language / "cells" / tag /
                      ("seed" + std::to_string(seed));
  fs::create_directories(cell_dir);
  result.cell_dir = cell_dir.string();

  // feature archive used by the AWE stage and evaluation
  std::string features_farc = art.base_farc;
  std::string model_path;
  if (cfg.features != "mfcc") {
    if (!frame_model_override.empty()) {
      model_path = frame_model_override;
      features_farc = detail::encode_stage(
          cfg, art, model_path, cfg.features + "-xl-seed" + std::to_string(seed), runner);
    } else {
      model_path = detail::frame_model_stage(cfg, art, split, seed, runner);
      features_farc = detail::encode_stage(cfg, art, model_path,
                                           cfg.features + "-seed" + std::to_string(seed), runner);
    }
  }

  auto features = feat::load_farc(features_farc);
  auto test_tokens = tokens_of(truth, split.test, cfg.eval.max_eval_tokens, cfg.corpus.seed);
  auto val_tokens = tokens_of(truth, split.val, cfg.eval.max_eval_tokens, cfg.corpus.seed);
  if (test_tokens.size() < 2) throw_data("test split has fewer than 2 word tokens");
  std::string tokens_digest;
  {
    std::string all;
    for (const auto& t : test_tokens)
      all += t.ref.utterance_id + ":" + std::to_string(t.ref.start) + "-" +
             std::to_string(t.ref.end) + "/" + t.label + ";";
    tokens_digest = detail::stage_key({"tokens", all});
  }

  const std::string emb_path = (cell_dir / "emb.awem").string();
  const std::string report_path = (cell_dir / "report.json").string();
  const std::string probe_path = (cell_dir / "probe.json").string();

  if (cfg.method == "cae-rnn") {
    const std::string awe_path = (cell_dir / "awe.awef").string();
    const std::string awe_trace_path = (cell_dir / "awe.trace.json").string();
    json sj{{"model", cfg.awe.model},     {"ae_epochs", cfg.awe.ae_epochs},
            {"ae_lr", cfg.awe.ae_lr},     {"cae_epochs", cfg.awe.cae_epochs},
            {"cae_lr", cfg.awe.cae_lr},   {"batch", cfg.awe.batch_segments},
            {"validate", cfg.awe.validate}, {"epochs_from", epochs_from}};
    auto key = detail::stage_key({"train-awe", hash_file_hex(features_farc), hash_file_hex(art.pairs_txt),
                          sj.dump(), std::to_string(seed)});
    runner.run("awe-train", key, {awe_path, awe_trace_path}, [&]() {
      auto pairs = align::load_pairs(art.pairs_txt);
      auto model_cfg = cfg.awe.model;
      model_cfg.input_dim = features.dim();
      Rng init = Rng::derived(seed, "awe_init");
      auto model = seg::AweModel::build(model_cfg, init);
      seg::AweSchedule schedule;
      schedule.ae_epochs = cfg.awe.ae_epochs;
      schedule.ae_lr = cfg.awe.ae_lr;
      schedule.cae_epochs = epochs_from > 0 ? epochs_from : cfg.awe.cae_epochs;
      schedule.cae_lr = cfg.awe.cae_lr;
      schedule.batch_segments = cfg.awe.batch_segments;
      schedule.eval_every = cfg.awe.eval_every;
      schedule.patience = cfg.awe.patience;
      if (epochs_from == 0 && cfg.awe.validate && !val_tokens.empty()) {
        schedule.validation = [&](const seg::AweModel& m) {
          auto embs = seg::embed_segments(m, features, val_tokens);
          return eval::same_different_ap(embs, eval::parse_distance(cfg.eval.distance)).ap;
        };
      }
      auto trained = seg::train_awe(model, features, pairs, schedule, seed);
      seg::save_model(model, awe_path);
      json tj{{"ae_loss", trained.ae_loss},
              {"cae_loss", trained.cae_loss},
              {"validation", trained.validation},
              {"cae_start_loss", trained.cae_start_loss},
              {"best_cae_epoch", trained.best_cae_epoch},
              {"clip_events", trained.clip_events}};
      io::write_file(awe_trace_path, tj.dump(2) + "\n");
    });

    auto key_embed = detail::stage_key({"embed", hash_file_hex(awe_path), hash_file_hex(features_farc),
                                tokens_digest});
    runner.run("embed", key_embed, {emb_path}, [&]() {
      auto model = seg::load_awe_model(awe_path);
      seg::save_awem(seg::embed_segments(model, features, test_tokens), emb_path);
    });
  } else if (cfg.method == "downsample") {
    auto key_embed = detail::stage_key({"embed-downsample", hash_file_hex(features_farc),
                                tokens_digest});
    runner.run("embed", key_embed, {emb_path}, [&]() {
      seg::save_awem(seg::downsample_segments(features, test_tokens), emb_path);
    });
  }

  // evaluation
  if (cfg.method == "dtw-direct") {
    auto key = detail::stage_key({"eval-dtw", hash_file_hex(features_farc), tokens_digest,
                          cfg.eval.distance});
    runner.run("eval", key, {report_path}, [&]() {
      std::vector<eval::DtwItem> items;
      for (const auto& tok : test_tokens)
        items.push_back({align::slice_segment(features, tok.ref), tok.label, tok.speaker_id});
      auto report = eval::dtw_same_different_ap(items, align::Metric::euclidean);
      report.seed = seed;
      // paths in reports are out_dir-relative so re-runs in fresh roots hash equal
      report.model = model_path.empty() ? "" : fs::relative(model_path, cfg.out_dir).string();
      report.features = cfg.features;
      eval::export_report(report, report_path, eval::ReportFormat::json_format);
    });
    result.report = eval::import_report(report_path);
  } else {
    auto key = detail::stage_key({"eval-ap", hash_file_hex(emb_path), cfg.eval.distance,
                          std::to_string(cfg.eval.probe_split)});
    runner.run("eval", key, {report_path, probe_path}, [&]() {
      auto embeddings = seg::load_awem(emb_path);
      auto report = eval::same_different_ap(embeddings, eval::parse_distance(cfg.eval.distance));
      report.seed = seed;
      report.model = cfg.method == "cae-rnn"
                         ? fs::relative(cell_dir / "awe.awef", cfg.out_dir).string()
                         : "downsample";
      report.features = cfg.features;
      eval::export_report(report, report_path, eval::ReportFormat::json_format);
      auto probe = eval::speaker_probe(embeddings, cfg.eval.probe_split, cfg.corpus.seed);
      json pj{{"accuracy", probe.accuracy}};
      io::write_file(probe_path, pj.dump(2) + "\n");
    });
    result.report = eval::import_report(report_path);
    result.probe_accuracy = json::parse(io::read_file(probe_path)).at("accuracy").get<double>();
  }

  json cell_meta{{"language", cfg.language}, {"features", cfg.features}, {"method", cfg.method},
                 {"seed", seed},             {"tag", tag}};
  io::write_file((cell_dir / "cell.json").string(), cell_meta.dump(2) + "\n");
  io::write_file((cell_dir / "manifest.json").string(), result.manifest.to_json().dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// Experiments, crosslingual protocol, summaries
// ---------------------------------------------------------------------------

struct ExperimentResult {
  std::vector<CellResult> cells;  // one per seed
  double ap_mean = 0.0;
  double ap_std = 0.0;
};

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

inline double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mu = mean_of(xs);
  double sq = 0.0;
  for (double x : xs) sq += (x - mu) * (x - mu);
  return std::sqrt(sq / static_cast<double>(xs.size() - 1));
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult result;
  std::vector<double> aps;
  for (uint64_t seed : cfg.seeds) {
    result.cells.push_back(run_cell(cfg, seed));
    aps.push_back(result.cells.back().report.ap);
  }
  result.ap_mean = mean_of(aps);
  result.ap_std = sample_std(aps);
  return result;
}

// Frame models trained on language A encode language B; the AWE model is then
// trained and evaluated entirely on B, with the CAE epoch count copied from
// A's run (the no-validation-language protocol).
inline ExperimentResult run_crosslingual(const ExperimentConfig& cfg_a,
                                         const ExperimentConfig& cfg_b) {
  if (cfg_a.features == "mfcc") throw_config("crosslingual transfer needs a learned feature kind");
  if (cfg_a.features != cfg_b.features)
    throw_config("crosslingual configs must use the same feature kind");
  if (cfg_a.language == cfg_b.language && cfg_a.out_dir == cfg_b.out_dir)
    log_warn("crosslingual source and target are the same corpus; this degenerates to monolingual");

  ExperimentResult result;
  std::vector<double> aps;
  for (uint64_t seed : cfg_a.seeds) {
    // source-language run provides the frame model and the best epoch count
    ExperimentConfig a = cfg_a;
    a.method = "cae-rnn";
    auto cell_a = run_cell(a, seed);
    fs::path a_models = fs::path(a.out_dir) / a.language / "models";
    const std::string model_path =
        (a_models / (a.features + "-seed" + std::to_string(seed) + ".awef")).string();
    auto a_trace = json::parse(
        io::read_file((fs::path(cell_a.cell_dir) / "awe.trace.json").string()));
    int epochs_from = std::max(1, a_trace.value("best_cae_epoch", cfg_b.awe.cae_epochs));

    ExperimentConfig b = cfg_b;
    b.method = "cae-rnn";
    auto cell_b = run_cell(b, seed, epochs_from, "xl-" + b.features + "-cae-rnn", model_path);
    aps.push_back(cell_b.report.ap);
    result.cells.push_back(std::move(cell_b));
  }
  result.ap_mean = mean_of(aps);
  result.ap_std = sample_std(aps);
  return result;
}

// Summary CSV over every cell found under out_dir:
// features,method,language,ap_mean,ap_std,speaker_acc_mean,speaker_acc_std
inline std::string summarize_csv(const std::string& out_dir) {
  struct Key {
    std::string features, method, language;
    bool operator<(const Key& o) const {
      return std::tie(features, method, language) < std::tie(o.features, o.method, o.language);
    }
  };
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> rows;  // ap, probe

  std::vector<fs::path> cell_files;
  for (const auto& entry : fs::recursive_directory_iterator(out_dir))
    if (entry.is_regular_file() && entry.path().filename() == "cell.json")
      cell_files.push_back(entry.path());
  std::sort(cell_files.begin(), cell_files.end());

  for (const auto& cell_file : cell_files) {
    auto meta = json::parse(io::read_file(cell_file.string()));
    Key key{meta.value("features", "?"), meta.value("method", "?"), meta.value("language", "?")};
    if (meta.value("tag", "").rfind("xl-", 0) == 0) key.language += "+xl";
    auto dir = cell_file.parent_path();
    auto report_path = dir / "report.json";
    if (!io::file_exists(report_path.string())) continue;
    rows[key].first.push_back(eval::import_report(report_path.string()).ap);
    auto probe_path = dir / "probe.json";
    if (io::file_exists(probe_path.string()))
      rows[key].second.push_back(
          json::parse(io::read_file(probe_path.string())).at("accuracy").get<double>());
  }

  std::string csv = "features,method,language,ap_mean,ap_std,speaker_acc_mean,speaker_acc_std\n";
  for (const auto& [key, data] : rows) {
    csv += key.features + "," + key.method + "," + key.language + ",";
    csv += format_double(mean_of(data.first)) + "," + format_double(sample_std(data.first)) + ",";
    if (data.second.empty())
      csv += ",";
    else
      csv += format_double(mean_of(data.second)) + "," + format_double(sample_std(data.second));
    csv += "\n";
  }
  return csv;
}

}  // namespace awe::pipe

#endif  // AWE_PIPELINE_HPP_
