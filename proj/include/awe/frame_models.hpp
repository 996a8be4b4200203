// awe/frame_models.hpp

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

// The three self-supervised frame-level representation learners and their
// training loops:
//   CPC  - linear encoder + LSTM context, per-step predictor heads, InfoNCE
//          against same-speaker negatives
//   APC  - stacked GRU encoder, linear predictor k steps ahead, MAE with an
//          anchored auxiliary loss
//   frame AE/CAE - frame-wise autoencoder warm start, then correspondence
//          training on DTW-aligned frame pairs

#ifndef AWE_FRAME_MODELS_HPP_
#define AWE_FRAME_MODELS_HPP_

#include "awe/align.hpp"
#include "awe/features.hpp"
#include "awe/nn.hpp"

#include "json.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace awe::frame {

using nlohmann::json;

// ---------------------------------------------------------------------------
// CPC
// ---------------------------------------------------------------------------

struct CpcConfig {
  int input_dim = 13;
  int enc_layers = 6;  // affine+layer_norm+relu blocks
  int enc_hidden = 512;
  int dropout_after = 3;  // dropout follows this relu (0 = none)
  double dropout_rate = 0.5;
  int z_dim = 64;
  int c_dim = 356;
  int steps_ahead = 3;    // K
  int n_candidates = 32;  // N (true target + N-1 negatives)
};

inline void to_json(json& j, const CpcConfig& c) {
  j = json{{"input_dim", c.input_dim},   {"enc_layers", c.enc_layers},
           {"enc_hidden", c.enc_hidden}, {"dropout_after", c.dropout_after},
           {"dropout_rate", c.dropout_rate}, {"z_dim", c.z_dim},
           {"c_dim", c.c_dim},           {"steps_ahead", c.steps_ahead},
           {"n_candidates", c.n_candidates}};
}

inline void from_json(const json& j, CpcConfig& c) {
  j.at("input_dim").get_to(c.input_dim);
  j.at("enc_layers").get_to(c.enc_layers);
  j.at("enc_hidden").get_to(c.enc_hidden);
  j.at("dropout_after").get_to(c.dropout_after);
  j.at("dropout_rate").get_to(c.dropout_rate);
  j.at("z_dim").get_to(c.z_dim);
  j.at("c_dim").get_to(c.c_dim);
  j.at("steps_ahead").get_to(c.steps_ahead);
  j.at("n_candidates").get_to(c.n_candidates);
}

struct CpcModel {
  CpcConfig config;
  nn::LayerStack encoder;                  // frames -> z
  nn::LayerStack context;                  // z -> c (LSTM)
  std::vector<nn::LayerStack> predictors;  // one affine c -> z per step k

  static CpcModel build(const CpcConfig& cfg, Rng& rng) {
    if (cfg.steps_ahead < 1) throw_config("cpc: steps_ahead must be >= 1");
    CpcModel m;
    m.config = cfg;
    int in = cfg.input_dim;
    for (int l = 0; l < cfg.enc_layers; ++l) {
      m.encoder.affine(in, cfg.enc_hidden).layer_norm(cfg.enc_hidden).relu();
      if (cfg.dropout_after == l + 1 && cfg.dropout_rate > 0.0)
        m.encoder.dropout(cfg.dropout_rate);
      in = cfg.enc_hidden;
    }
    m.encoder.affine(in, cfg.z_dim);
    m.context.lstm(cfg.z_dim, cfg.c_dim);
    for (int k = 0; k < cfg.steps_ahead; ++k) {
      nn::LayerStack pred;
      pred.affine(cfg.c_dim, cfg.z_dim);
      m.predictors.push_back(std::move(pred));
    }
    m.encoder.init_params(rng);
    m.context.init_params(rng);
    for (auto& p : m.predictors) p.init_params(rng);
    return m;
  }

  std::vector<const nn::LayerStack*> stacks() const {
    std::vector<const nn::LayerStack*> s{&encoder, &context};
    for (const auto& p : predictors) s.push_back(&p);
    return s;
  }
  std::vector<nn::LayerStack*> stacks() {
    std::vector<nn::LayerStack*> s{&encoder, &context};
    for (auto& p : predictors) s.push_back(&p);
    return s;
  }
};

// Scores for a candidate set: score_i = exp(z_i . g_pred^k(c_t)), computed
// from the utterance frames in eval mode. Candidates arrive already encoded.
inline Vec cpc_scores(const CpcModel& model, const Mat& frames, int t, int k,
                      const Mat& candidates_z) {
  if (k < 1 || k > model.config.steps_ahead)
    throw_usage("cpc_scores: k = " + std::to_string(k) + " out of range [1, " +
                std::to_string(model.config.steps_ahead) + "]");
  if (t + k >= frames.rows()) throw_usage("cpc_scores: t + k beyond utterance end");
  Mat z = nn::forward(model.encoder, frames, false).output;
  Mat c = nn::forward(model.context, z, false).output;
  Mat pred = nn::forward(model.predictors[static_cast<size_t>(k - 1)], c.row(t), false).output;
  return (candidates_z * pred.row(0).transpose()).array().exp();
}

// -log(score_true / sum scores) from positive scores.
inline double info_nce_loss(const Vec& scores, int true_index) {
  if (true_index < 0 || true_index >= scores.size()) throw_usage("info_nce_loss: bad true index");
  if (!(scores.array() > 0.0).all() || !scores.allFinite())
    throw_training("info_nce_loss: scores must be finite and positive");
  Vec logits = scores.array().log();
  double mx = logits.maxCoeff();
  double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits[true_index];
}

// Log-space path used during training (logits = z . prediction).
inline double info_nce_from_logits(const Vec& logits, int true_index, Vec* dlogits = nullptr) {
  double mx = logits.maxCoeff();
  Vec shifted = (logits.array() - mx).exp();
  double denom = shifted.sum();
  if (dlogits) {
    *dlogits = shifted / denom;
    (*dlogits)[true_index] -= 1.0;
  }
  return (mx + std::log(denom)) - logits[true_index];
}

// A reproducible negative-sampling plan for one utterance. Candidates index
// either the utterance itself (anchor_frame >= 0) or a shared matrix of raw
// negative frames pulled from other utterances.
struct CpcCandidate {
  int neg_row = -1;      // row into NegativePlan::negatives, or
  int anchor_frame = -1; // frame of the anchor utterance
};

struct NegativePlan {
  Mat negatives;  // M x input_dim raw frames (may be empty)
  // per k (1-based step k = index+1), per valid t: the candidate set and the
  // index of the true target inside it
  std::vector<std::vector<std::vector<CpcCandidate>>> candidates;
  std::vector<std::vector<int>> true_index;
};

struct CpcStep {
  double loss = 0.0;
  Vec d_encoder, d_context;
  std::vector<Vec> d_predictors;
};

// Loss and gradients for one utterance under a fixed plan. Deterministic given
// (parameters, frames, plan, dropout_seed).
inline CpcStep cpc_step(const CpcModel& model, const Mat& frames, const NegativePlan& plan,
                        bool train_mode, uint64_t dropout_seed) {
  const int T = static_cast<int>(frames.rows());
  const int K = model.config.steps_ahead;
  const int M = static_cast<int>(plan.negatives.rows());

  Mat all_input(T + M, frames.cols());
  all_input.topRows(T) = frames;
  if (M > 0) all_input.bottomRows(M) = plan.negatives;

  auto fwd_enc = nn::forward(model.encoder, all_input, train_mode, dropout_seed);
  Mat z = fwd_enc.output.topRows(T);
  auto fwd_ctx = nn::forward(model.context, z, train_mode, dropout_seed);
  const Mat& c = fwd_ctx.output;

  CpcStep step;
  Mat d_z_all = Mat::Zero(T + M, model.config.z_dim);
  Mat d_c = Mat::Zero(T, model.config.c_dim);
  step.d_predictors.resize(static_cast<size_t>(K));

  auto z_of = [&](const CpcCandidate& cand) -> Eigen::RowVectorXd {
    if (cand.anchor_frame >= 0) return fwd_enc.output.row(cand.anchor_frame);
    return fwd_enc.output.row(T + cand.neg_row);
  };

  int terms = 0;
  for (int ki = 0; ki < K; ++ki) {
    const int k = ki + 1;
    const int valid = T - k;
    if (valid <= 0 || plan.candidates[static_cast<size_t>(ki)].empty()) {
      step.d_predictors[static_cast<size_t>(ki)] =
          Vec::Zero(model.predictors[static_cast<size_t>(ki)].param_count());
      continue;
    }
    auto fwd_pred =
        nn::forward(model.predictors[static_cast<size_t>(ki)], c.topRows(valid), train_mode, dropout_seed);
    Mat d_pred_out = Mat::Zero(valid, model.config.z_dim);
    double k_loss = 0.0;
    for (int t = 0; t < valid; ++t) {
      const auto& cands = plan.candidates[static_cast<size_t>(ki)][static_cast<size_t>(t)];
      const int n = static_cast<int>(cands.size());
      Vec logits(n);
      for (int i = 0; i < n; ++i) logits[i] = z_of(cands[static_cast<size_t>(i)]).dot(fwd_pred.output.row(t));
      Vec dlogits;
      k_loss += info_nce_from_logits(logits, plan.true_index[static_cast<size_t>(ki)][static_cast<size_t>(t)],
                                     &dlogits);
      const double scale = 1.0 / (static_cast<double>(K) * valid);
      for (int i = 0; i < n; ++i) {
        const auto& cand = cands[static_cast<size_t>(i)];
        double g = dlogits[i] * scale;
        d_pred_out.row(t) += g * z_of(cand);
        int row = (cand.anchor_frame >= 0) ? cand.anchor_frame : T + cand.neg_row;
        d_z_all.row(row) += g * fwd_pred.output.row(t);
      }
    }
    step.loss += k_loss / valid;
    ++terms;
    auto grads = nn::backward(model.predictors[static_cast<size_t>(ki)], fwd_pred, d_pred_out);
    step.d_predictors[static_cast<size_t>(ki)] = grads.params;
    d_c.topRows(valid) += grads.input;
  }
  if (terms > 0) step.loss /= K;

  auto ctx_grads = nn::backward(model.context, fwd_ctx, d_c);
  step.d_context = ctx_grads.params;
  d_z_all.topRows(T) += ctx_grads.input;
  auto enc_grads = nn::backward(model.encoder, fwd_enc, d_z_all);
  step.d_encoder = enc_grads.params;
  return step;
}

// ---------------------------------------------------------------------------
// APC
// ---------------------------------------------------------------------------

struct ApcConfig {
  int input_dim = 13;
  int gru_layers = 3;
  int hidden = 512;
  int shift = 2;       // k, steps predicted ahead
  int aux_anchors = 12;   // M
  int aux_history = 14;   // s
  int aux_slice = 7;      // n
  int aux_shift = 5;      // prediction shift inside an anchor slice
  double aux_weight = 0.1;  // lambda
};

inline void to_json(json& j, const ApcConfig& c) {
  j = json{{"input_dim", c.input_dim}, {"gru_layers", c.gru_layers}, {"hidden", c.hidden},
           {"shift", c.shift},         {"aux_anchors", c.aux_anchors},
           {"aux_history", c.aux_history}, {"aux_slice", c.aux_slice},
           {"aux_shift", c.aux_shift}, {"aux_weight", c.aux_weight}};
}

inline void from_json(const json& j, ApcConfig& c) {
  j.at("input_dim").get_to(c.input_dim);
  j.at("gru_layers").get_to(c.gru_layers);
  j.at("hidden").get_to(c.hidden);
  j.at("shift").get_to(c.shift);
  j.at("aux_anchors").get_to(c.aux_anchors);
  j.at("aux_history").get_to(c.aux_history);
  j.at("aux_slice").get_to(c.aux_slice);
  j.at("aux_shift").get_to(c.aux_shift);
  j.at("aux_weight").get_to(c.aux_weight);
}

struct ApcModel {
  ApcConfig config;
  nn::LayerStack encoder;    // stacked GRUs; output = last layer hidden states
  nn::LayerStack predictor;  // one affine hidden -> input_dim (shared with aux)

  static ApcModel build(const ApcConfig& cfg, Rng& rng) {
    if (cfg.shift < 1) throw_config("apc: shift must be >= 1");
    if (cfg.aux_history < cfg.aux_slice) throw_config("apc: aux history must cover the slice");
    ApcModel m;
    m.config = cfg;
    int in = cfg.input_dim;
    for (int l = 0; l < cfg.gru_layers; ++l) {
      m.encoder.gru(in, cfg.hidden);
      in = cfg.hidden;
    }
    m.predictor.affine(cfg.hidden, cfg.input_dim);
    m.encoder.init_params(rng);
    m.predictor.init_params(rng);
    return m;
  }

  std::vector<const nn::LayerStack*> stacks() const { return {&encoder, &predictor}; }
  std::vector<nn::LayerStack*> stacks() { return {&encoder, &predictor}; }
};

// Anchor positions a_m for the auxiliary loss; uniform over the valid range.
// Empty when the utterance is too short (aux is then skipped).
inline std::vector<int> apc_sample_anchors(const ApcConfig& cfg, int T, Rng& rng) {
  if (T <= cfg.aux_history + cfg.aux_slice + cfg.aux_shift) return {};
  int lo = cfg.aux_history;
  int hi = std::min(T - 1, T + cfg.aux_history - cfg.aux_slice - cfg.aux_shift);
  if (hi < lo) return {};
  std::vector<int> anchors(static_cast<size_t>(cfg.aux_anchors));
  for (auto& a : anchors) a = static_cast<int>(rng.uniform_int(lo, hi));
  return anchors;
}

struct ApcLoss {
  double main = 0.0;
  double aux = 0.0;
  double total = 0.0;
  std::vector<int> anchors;
};

struct ApcStep {
  ApcLoss loss;
  Vec d_encoder, d_predictor;
};

// Main MAE over all valid t plus the anchored auxiliary MAE; gradients flow
// through the shared predictor into the GRU stack.
inline ApcStep apc_step(const ApcModel& model, const Mat& frames, const std::vector<int>& anchors,
                        bool with_grads = true) {
  const auto& cfg = model.config;
  const int T = static_cast<int>(frames.rows());
  const int k = cfg.shift;
  if (T < k + 1) throw_input("apc: utterance shorter than shift+1");

  auto fwd_enc = nn::forward(model.encoder, frames, false);
  const Mat& z = fwd_enc.output;

  ApcStep step;
  step.loss.anchors = anchors;
  Mat d_z = Mat::Zero(T, cfg.hidden);
  step.d_predictor = Vec::Zero(model.predictor.param_count());

  // main: predict x_{t+k} from z_t for t in [0, T-k)
  const int valid = T - k;
  auto fwd_main = nn::forward(model.predictor, z.topRows(valid), false);
  Mat target = frames.bottomRows(valid);  // rows k..T-1
  step.loss.main = nn::loss_value(nn::LossKind::mae, fwd_main.output, target);
  if (with_grads) {
    auto grads = nn::backward(model.predictor, fwd_main, nn::loss_grad(nn::LossKind::mae, fwd_main.output, target));
    step.d_predictor += grads.params;
    d_z.topRows(valid) += grads.input;
  }

  // aux: for each anchor, the slice of n frames starting s behind it,
  // predicted aux_shift ahead with the same predictor
  if (!anchors.empty()) {
    const int n = cfg.aux_slice;
    for (int a : anchors) {
      int base = a - cfg.aux_history;
      Mat slice_z = z.middleRows(base, n);
      Mat slice_target = frames.middleRows(base + cfg.aux_shift, n);
      auto fwd_aux = nn::forward(model.predictor, slice_z, false);
      step.loss.aux += nn::loss_value(nn::LossKind::mae, fwd_aux.output, slice_target);
      if (with_grads) {
        Mat d_out = (cfg.aux_weight / anchors.size()) *
                    nn::loss_grad(nn::LossKind::mae, fwd_aux.output, slice_target);
        auto grads = nn::backward(model.predictor, fwd_aux, d_out);
        step.d_predictor += grads.params;
        d_z.middleRows(base, n) += grads.input;
      }
    }
    step.loss.aux /= static_cast<double>(anchors.size());
  }

  step.loss.total = step.loss.main + cfg.aux_weight * step.loss.aux;
  if (with_grads) {
    auto grads = nn::backward(model.encoder, fwd_enc, d_z);
    step.d_encoder = grads.params;
  }
  return step;
}

// Loss breakdown with anchors drawn from the given stream (Eq. main + aux).
inline ApcLoss apc_loss(const ApcModel& model, const Mat& frames, Rng& anchor_rng) {
  auto anchors = apc_sample_anchors(model.config, static_cast<int>(frames.rows()), anchor_rng);
  return apc_step(model, frames, anchors, /*with_grads=*/false).loss;
}

// ---------------------------------------------------------------------------
// Frame AE / CAE
// ---------------------------------------------------------------------------

struct FrameCaeConfig {
  int input_dim = 39;  // static + velocity + acceleration
  int enc_layers = 6;
  int hidden = 100;
  int latent = 39;
};

inline void to_json(json& j, const FrameCaeConfig& c) {
  j = json{{"input_dim", c.input_dim}, {"enc_layers", c.enc_layers}, {"hidden", c.hidden},
           {"latent", c.latent}};
}

inline void from_json(const json& j, FrameCaeConfig& c) {
  j.at("input_dim").get_to(c.input_dim);
  j.at("enc_layers").get_to(c.enc_layers);
  j.at("hidden").get_to(c.hidden);
  j.at("latent").get_to(c.latent);
}

enum class FcaePhase { ae, cae };

struct FrameCaeModel {
  FrameCaeConfig config;
  FcaePhase phase = FcaePhase::ae;
  nn::LayerStack encoder;  // frames -> latent
  nn::LayerStack decoder;  // latent -> frames

  static FrameCaeModel build(const FrameCaeConfig& cfg, Rng& rng) {
    FrameCaeModel m;
    m.config = cfg;
    int in = cfg.input_dim;
    for (int l = 0; l < cfg.enc_layers; ++l) {
      m.encoder.affine(in, cfg.hidden).relu();
      in = cfg.hidden;
    }
    m.encoder.affine(cfg.hidden, cfg.latent);
    in = cfg.latent;
    for (int l = 0; l < cfg.enc_layers; ++l) {
      m.decoder.affine(in, cfg.hidden).relu();
      in = cfg.hidden;
    }
    m.decoder.affine(cfg.hidden, cfg.input_dim);
    m.encoder.init_params(rng);
    m.decoder.init_params(rng);
    return m;
  }

  std::vector<const nn::LayerStack*> stacks() const { return {&encoder, &decoder}; }
  std::vector<nn::LayerStack*> stacks() { return {&encoder, &decoder}; }
};

inline Mat fcae_reconstruct(const FrameCaeModel& model, const Mat& x) {
  return nn::forward(model.decoder, nn::forward(model.encoder, x, false).output, false).output;
}

// (1/|X|) sum ||x - x_hat||^2
inline double frame_ae_loss(const FrameCaeModel& model, const Mat& x) {
  return nn::loss_value(nn::LossKind::mse, fcae_reconstruct(model, x), x);
}

// (1/|Y|) sum ||y - y_hat||^2 over input-output frame pairs
inline double frame_cae_loss(const FrameCaeModel& model, const std::vector<align::FramePair>& pairs) {
  if (pairs.empty()) throw_data("frame_cae_loss: empty pair list");
  Mat x(pairs.size(), model.config.input_dim), y(pairs.size(), model.config.input_dim);
  for (size_t i = 0; i < pairs.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = pairs[i].x.transpose();
    y.row(static_cast<Eigen::Index>(i)) = pairs[i].y.transpose();
  }
  return nn::loss_value(nn::LossKind::mse, fcae_reconstruct(model, x), y);
}

struct FcaeStep {
  double loss = 0.0;
  Vec d_encoder, d_decoder;
};

inline FcaeStep fcae_step(const FrameCaeModel& model, const Mat& x, const Mat& y) {
  auto fwd_enc = nn::forward(model.encoder, x, false);
  auto fwd_dec = nn::forward(model.decoder, fwd_enc.output, false);
  FcaeStep step;
  step.loss = nn::loss_value(nn::LossKind::mse, fwd_dec.output, y);
  auto dec_grads = nn::backward(model.decoder, fwd_dec, nn::loss_grad(nn::LossKind::mse, fwd_dec.output, y));
  step.d_decoder = dec_grads.params;
  step.d_encoder = nn::backward(model.encoder, fwd_enc, dec_grads.input).params;
  return step;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct TrainTrace {
  std::vector<double> loss;        // per epoch
  std::vector<double> aux;         // APC only
  std::vector<double> validation;  // score per validation evaluation
  int64_t clip_events = 0;
  int best_epoch = 0;  // 1-based epoch of the best validation score (or last)
  std::vector<std::string> warnings;
  double cae_start_loss = 0.0;  // frame CAE: loss right after the AE phase
};

namespace detail {

// Adam + global-norm clip across all stacks of one model.
struct Optimizer {
  std::vector<nn::AdamState> states;
  double clip_norm;
  int64_t clip_events = 0;

  Optimizer(const std::vector<nn::LayerStack*>& stacks, double lr, double clip)
      : clip_norm(clip) {
    for (auto* s : stacks) states.push_back(nn::AdamState::for_stack(*s, lr));
  }

  void step(const std::vector<nn::LayerStack*>& stacks, std::vector<Vec>& grads) {
    std::vector<Vec*> refs;
    for (auto& g : grads) refs.push_back(&g);
    if (nn::clip_global_norm(refs, clip_norm) < 1.0) ++clip_events;
    for (size_t i = 0; i < stacks.size(); ++i) nn::adam_step(*stacks[i], grads[i], states[i]);
  }
};

inline std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  for (size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  return idx;
}

}  // namespace detail

struct CpcSchedule {
  int batch_utterances = 9;  // one utterance per distinct speaker
  double lr = 1e-5;
  int max_epochs = 15000;
  double clip_norm = 5.0;
  int eval_every = 5;  // epochs between validation callbacks
  int patience = 5;    // stagnant evaluations before stopping
  std::function<double(const CpcModel&)> validation;  // higher is better
};

// Builds the per-utterance negative plan from the archive using the
// speaker-aware sampler; falls back to within-utterance frames (excluding the
// prediction window) for single-utterance speakers.
inline NegativePlan build_negative_plan(const feat::FeatureArchive& archive, int utterance,
                                        int truncated_len, const CpcConfig& cfg, Rng& rng,
                                        bool* used_fallback = nullptr) {
  const auto& seq = archive.entries[static_cast<size_t>(utterance)];
  const int T = truncated_len;
  NegativePlan plan;
  plan.candidates.resize(static_cast<size_t>(cfg.steps_ahead));
  plan.true_index.resize(static_cast<size_t>(cfg.steps_ahead));

  bool have_other = false;
  for (size_t i = 0; i < archive.entries.size(); ++i)
    if (static_cast<int>(i) != utterance && archive.entries[i].speaker_id == seq.speaker_id)
      have_other = true;
  if (!have_other && used_fallback) *used_fallback = true;

  std::vector<Eigen::RowVectorXd> neg_rows;
  std::map<std::pair<int, int>, int> neg_index;
  auto neg_row_of = [&](int utt, int frame) {
    auto key = std::make_pair(utt, frame);
    auto it = neg_index.find(key);
    if (it != neg_index.end()) return it->second;
    int row = static_cast<int>(neg_rows.size());
    neg_index[key] = row;
    neg_rows.push_back(archive.entries[static_cast<size_t>(utt)].frames.row(frame));
    return row;
  };

  for (int ki = 0; ki < cfg.steps_ahead; ++ki) {
    const int k = ki + 1;
    const int valid = T - k;
    if (valid <= 0) continue;
    plan.candidates[static_cast<size_t>(ki)].resize(static_cast<size_t>(valid));
    plan.true_index[static_cast<size_t>(ki)].resize(static_cast<size_t>(valid));
    for (int t = 0; t < valid; ++t) {
      std::vector<CpcCandidate> cands(static_cast<size_t>(cfg.n_candidates));
      int true_at;
      if (have_other) {
        auto set = align::sample_negatives(archive, {utterance, t, k}, cfg.n_candidates, rng);
        true_at = set.true_index;
        for (int i = 0; i < cfg.n_candidates; ++i) {
          const auto& pos = set.positions[static_cast<size_t>(i)];
          if (i == set.true_index)
            cands[static_cast<size_t>(i)] = {-1, pos.frame};
          else
            cands[static_cast<size_t>(i)] = {neg_row_of(pos.utterance, pos.frame), -1};
        }
      } else {
        // within-utterance fallback: frames outside the prediction window
        true_at = static_cast<int>(rng.uniform_int(0, cfg.n_candidates - 1));
        for (int i = 0; i < cfg.n_candidates; ++i) {
          if (i == true_at) {
            cands[static_cast<size_t>(i)] = {-1, t + k};
            continue;
          }
          int frame = t;
          for (int attempt = 0; attempt < 64; ++attempt) {
            frame = static_cast<int>(rng.uniform_int(0, seq.length() - 1));
            if (frame < t || frame > t + k) break;
          }
          cands[static_cast<size_t>(i)] = {-1, frame};
        }
      }
      plan.candidates[static_cast<size_t>(ki)][static_cast<size_t>(t)] = std::move(cands);
      plan.true_index[static_cast<size_t>(ki)][static_cast<size_t>(t)] = true_at;
    }
  }

  plan.negatives.resize(static_cast<Eigen::Index>(neg_rows.size()), archive.dim());
  for (size_t i = 0; i < neg_rows.size(); ++i)
    plan.negatives.row(static_cast<Eigen::Index>(i)) = neg_rows[i];
  return plan;
}

inline TrainTrace train_cpc(CpcModel& model, const feat::FeatureArchive& archive,
                            const CpcSchedule& schedule, uint64_t seed) {
  archive.validate();
  std::map<std::string, std::vector<size_t>> by_speaker;
  for (size_t i = 0; i < archive.entries.size(); ++i)
    by_speaker[archive.entries[i].speaker_id].push_back(i);
  if (static_cast<int>(by_speaker.size()) < schedule.batch_utterances)
    throw_data("cpc training needs >= " + std::to_string(schedule.batch_utterances) +
               " speakers (one per batch slot), archive has " + std::to_string(by_speaker.size()));

  auto stacks = model.stacks();
  detail::Optimizer opt(stacks, schedule.lr, schedule.clip_norm);
  TrainTrace trace;
  bool fallback_logged = false;
  double best_val = -std::numeric_limits<double>::infinity();
  int stagnant = 0;
  std::vector<Vec> best_params;

  for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    // Sampling streams are derived without the epoch index, so every epoch
    // replays the same batches, negative plans and dropout masks; with lr = 0
    // the loss trace is then exactly constant.
    Rng order_rng = Rng::derived(seed, "cpc_order");
    // per-speaker shuffled queues, then batches of one utterance from each of
    // batch_utterances distinct speakers (those with most utterances left)
    std::map<std::string, std::vector<size_t>> queues = by_speaker;
    for (auto& [spk, q] : queues) {
      auto idx = detail::shuffled_indices(q.size(), order_rng);
      std::vector<size_t> shuffled(q.size());
      for (size_t i = 0; i < q.size(); ++i) shuffled[i] = q[idx[i]];
      q = std::move(shuffled);
    }

    double epoch_loss = 0.0;
    int batches = 0;
    uint64_t utt_counter = 0;
    while (true) {
      std::vector<std::pair<size_t, std::string>> ready;  // (remaining, speaker)
      for (const auto& [spk, q] : queues)
        if (!q.empty()) ready.emplace_back(q.size(), spk);
      if (static_cast<int>(ready.size()) < schedule.batch_utterances) break;
      std::sort(ready.begin(), ready.end(),
                [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });

      std::vector<size_t> batch;
      for (int i = 0; i < schedule.batch_utterances; ++i) {
        auto& q = queues[ready[static_cast<size_t>(i)].second];
        batch.push_back(q.back());
        q.pop_back();
      }
      int t_min = std::numeric_limits<int>::max();
      for (size_t u : batch) t_min = std::min(t_min, archive.entries[u].length());
      if (t_min <= model.config.steps_ahead) continue;

      std::vector<Vec> grads(stacks.size());
      for (size_t i = 0; i < stacks.size(); ++i) grads[i] = Vec::Zero(stacks[i]->param_count());
      double batch_loss = 0.0;
      for (size_t u : batch) {
        Rng neg_rng = Rng::derived(seed, "cpc_negatives", utt_counter);
        uint64_t dropout_seed = splitmix64(seed ^ (utt_counter << 1) ^ 0x9e37u);
        ++utt_counter;
        bool used_fallback = false;
        auto plan = build_negative_plan(archive, static_cast<int>(u), t_min, model.config, neg_rng,
                                        &used_fallback);
        if (used_fallback && !fallback_logged) {
          trace.warnings.push_back("speaker " + archive.entries[u].speaker_id +
                                   " has a single utterance; negatives drawn within-utterance");
          log_warn(trace.warnings.back());
          fallback_logged = true;
        }
        auto step = cpc_step(model, archive.entries[u].frames.topRows(t_min), plan, true, dropout_seed);
        batch_loss += step.loss;
        grads[0] += step.d_encoder;
        grads[1] += step.d_context;
        for (int k = 0; k < model.config.steps_ahead; ++k)
          grads[static_cast<size_t>(2 + k)] += step.d_predictors[static_cast<size_t>(k)];
      }
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (auto& g : grads) g *= inv;
      opt.step(stacks, grads);
      epoch_loss += batch_loss * inv;
      ++batches;
    }
    if (batches == 0) throw_data("cpc training: no usable batches (utterances too short?)");
    trace.loss.push_back(epoch_loss / batches);
    if (!std::isfinite(trace.loss.back())) throw_training("cpc training diverged (non-finite loss)");
    trace.best_epoch = epoch;

    if (schedule.validation && epoch % schedule.eval_every == 0) {
      double score = schedule.validation(model);
      trace.validation.push_back(score);
      if (score > best_val + 1e-9) {
        best_val = score;
        stagnant = 0;
        trace.best_epoch = epoch;
        best_params.clear();
        for (auto* s : stacks) best_params.push_back(s->params);
      } else if (++stagnant >= schedule.patience) {
        if (!best_params.empty())
          for (size_t i = 0; i < stacks.size(); ++i) stacks[i]->params = best_params[i];
        break;
      }
    }
  }
  trace.clip_events = opt.clip_events;
  return trace;
}

struct ApcSchedule {
  double lr = 1e-3;
  int epochs = 50;
  double clip_norm = 5.0;
  // Utterances are still processed one at a time; gradients accumulate over
  // this many before each optimizer step.
  int batch_utterances = 1;
};

inline TrainTrace train_apc(ApcModel& model, const feat::FeatureArchive& archive,
                            const ApcSchedule& schedule, uint64_t seed) {
  archive.validate();
  auto stacks = model.stacks();
  detail::Optimizer opt(stacks, schedule.lr, schedule.clip_norm);
  TrainTrace trace;
  bool skip_logged = false;
  const int batch = std::max(1, schedule.batch_utterances);

  for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
    Rng order_rng = Rng::derived(seed, "apc_order", static_cast<uint64_t>(epoch));
    Rng anchor_rng = Rng::derived(seed, "apc_anchors", static_cast<uint64_t>(epoch));
    auto order = detail::shuffled_indices(archive.entries.size(), order_rng);
    double epoch_loss = 0.0, epoch_aux = 0.0;
    int used = 0;
    std::vector<Vec> grads{Vec::Zero(model.encoder.param_count()),
                           Vec::Zero(model.predictor.param_count())};
    int in_batch = 0;
    auto flush = [&]() {
      if (in_batch == 0) return;
      for (auto& g : grads) g /= static_cast<double>(in_batch);
      opt.step(stacks, grads);
      grads[0].setZero();
      grads[1].setZero();
      in_batch = 0;
    };
    for (size_t u : order) {
      const Mat& frames = archive.entries[u].frames;
      if (frames.rows() < model.config.shift + 1) {
        if (!skip_logged) {
          trace.warnings.push_back("utterance " + archive.entries[u].utterance_id +
                                   " shorter than shift+1; skipped");
          log_warn(trace.warnings.back());
          skip_logged = true;
        }
        continue;
      }
      auto anchors = apc_sample_anchors(model.config, static_cast<int>(frames.rows()), anchor_rng);
      auto step = apc_step(model, frames, anchors);
      grads[0] += step.d_encoder;
      grads[1] += step.d_predictor;
      if (++in_batch >= batch) flush();
      epoch_loss += step.loss.total;
      epoch_aux += step.loss.aux;
      ++used;
    }
    flush();
    if (used == 0) throw_data("apc training: no usable utterances");
    trace.loss.push_back(epoch_loss / used);
    trace.aux.push_back(epoch_aux / used);
    if (!std::isfinite(trace.loss.back())) throw_training("apc training diverged (non-finite loss)");
    trace.best_epoch = epoch;
  }
  trace.clip_events = opt.clip_events;
  return trace;
}

struct FcaeSchedule {
  int ae_epochs = 5;
  int cae_epochs = 10;
  double lr = 1e-3;     // CAE phase
  double ae_lr = 1e-3;  // AE warm-start phase
  int batch_frames = 256;
  double clip_norm = 5.0;
};

inline TrainTrace train_frame_cae(FrameCaeModel& model, const feat::FeatureArchive& archive,
                                  const std::vector<align::FramePair>& pairs,
                                  const FcaeSchedule& schedule, uint64_t seed) {
  archive.validate();
  if (pairs.empty()) throw_data("frame CAE training needs a non-empty frame-pair list");
  if (archive.dim() != model.config.input_dim)
    throw_config("frame CAE expects " + std::to_string(model.config.input_dim) +
                 "-dim inputs, archive has " + std::to_string(archive.dim()));
  for (const auto& p : pairs)
    if (p.x.size() != model.config.input_dim || p.y.size() != model.config.input_dim)
      throw_config("frame pair dim does not match the frame CAE input dim");

  Mat all_frames(archive.total_frames(), archive.dim());
  Eigen::Index at = 0;
  for (const auto& e : archive.entries) {
    all_frames.middleRows(at, e.frames.rows()) = e.frames;
    at += e.frames.rows();
  }

  auto stacks = model.stacks();
  TrainTrace trace;
  {
    detail::Optimizer opt(stacks, schedule.ae_lr, schedule.clip_norm);
    model.phase = FcaePhase::ae;
    for (int epoch = 1; epoch <= schedule.ae_epochs; ++epoch) {
      Rng rng = Rng::derived(seed, "fcae_ae", static_cast<uint64_t>(epoch));
      auto order = detail::shuffled_indices(static_cast<size_t>(all_frames.rows()), rng);
      double epoch_loss = 0.0;
      int batches = 0;
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(schedule.batch_frames)) {
        size_t count = std::min(static_cast<size_t>(schedule.batch_frames), order.size() - start);
        Mat x(count, archive.dim());
        for (size_t i = 0; i < count; ++i) x.row(static_cast<Eigen::Index>(i)) = all_frames.row(static_cast<Eigen::Index>(order[start + i]));
        auto step = fcae_step(model, x, x);
        std::vector<Vec> grads{step.d_encoder, step.d_decoder};
        opt.step(stacks, grads);
        epoch_loss += step.loss;
        ++batches;
      }
      trace.loss.push_back(epoch_loss / batches);
      if (!std::isfinite(trace.loss.back())) throw_training("frame AE training diverged");
    }
    trace.clip_events += opt.clip_events;
  }

  trace.cae_start_loss = frame_cae_loss(model, pairs);
  {
    detail::Optimizer opt(stacks, schedule.lr, schedule.clip_norm);
    model.phase = FcaePhase::cae;
    for (int epoch = 1; epoch <= schedule.cae_epochs; ++epoch) {
      Rng rng = Rng::derived(seed, "fcae_cae", static_cast<uint64_t>(epoch));
      auto order = detail::shuffled_indices(pairs.size(), rng);
      double epoch_loss = 0.0;
      int batches = 0;
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(schedule.batch_frames)) {
        size_t count = std::min(static_cast<size_t>(schedule.batch_frames), order.size() - start);
        Mat x(count, archive.dim()), y(count, archive.dim());
        for (size_t i = 0; i < count; ++i) {
          x.row(static_cast<Eigen::Index>(i)) = pairs[order[start + i]].x.transpose();
          y.row(static_cast<Eigen::Index>(i)) = pairs[order[start + i]].y.transpose();
        }
        auto step = fcae_step(model, x, y);
        std::vector<Vec> grads{step.d_encoder, step.d_decoder};
        opt.step(stacks, grads);
        epoch_loss += step.loss;
        ++batches;
      }
      trace.loss.push_back(epoch_loss / batches);
      if (!std::isfinite(trace.loss.back())) throw_training("frame CAE training diverged");
    }
    trace.clip_events += opt.clip_events;
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

inline feat::FeatureSequence encode_frames(const CpcModel& model, const feat::FeatureSequence& seq) {
  seq.validate();
  if (seq.dim() != model.config.input_dim)
    throw_config("cpc encode: input dim " + std::to_string(seq.dim()) + " != " +
                 std::to_string(model.config.input_dim));
  feat::FeatureSequence out = seq;
  Mat z = nn::forward(model.encoder, seq.frames, false).output;
  out.frames = nn::forward(model.context, z, false).output;  // c_t
  out.dim_label = feat::learned_label(model.config.c_dim);
  return out;
}

inline feat::FeatureSequence encode_frames(const ApcModel& model, const feat::FeatureSequence& seq) {
  seq.validate();
  if (seq.dim() != model.config.input_dim)
    throw_config("apc encode: input dim " + std::to_string(seq.dim()) + " != " +
                 std::to_string(model.config.input_dim));
  feat::FeatureSequence out = seq;
  out.frames = nn::forward(model.encoder, seq.frames, false).output;  // last GRU layer states
  out.dim_label = feat::learned_label(model.config.hidden);
  return out;
}

inline feat::FeatureSequence encode_frames(const FrameCaeModel& model, const feat::FeatureSequence& seq) {
  seq.validate();
  if (seq.dim() != model.config.input_dim)
    throw_config("frame CAE encode: input dim " + std::to_string(seq.dim()) + " != " +
                 std::to_string(model.config.input_dim));
  feat::FeatureSequence out = seq;
  out.frames = nn::forward(model.encoder, seq.frames, false).output;  // latent z_t
  out.dim_label = feat::learned_label(model.config.latent);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints (model-kind tag + config in the descriptor)
// ---------------------------------------------------------------------------

inline void save_model(const CpcModel& model, const std::string& path) {
  json desc{{"kind", "cpc"}, {"config", model.config}};
  nn::save_checkpoint(path, desc.dump(), model.stacks());
}

inline void save_model(const ApcModel& model, const std::string& path) {
  json desc{{"kind", "apc"}, {"config", model.config}};
  nn::save_checkpoint(path, desc.dump(), model.stacks());
}

inline void save_model(const FrameCaeModel& model, const std::string& path) {
  json desc{{"kind", "fcae"}, {"config", model.config}};
  nn::save_checkpoint(path, desc.dump(), model.stacks());
}

using FrameModel = std::variant<CpcModel, ApcModel, FrameCaeModel>;

inline std::string frame_model_kind(const FrameModel& m) {
  if (std::holds_alternative<CpcModel>(m)) return "cpc";
  if (std::holds_alternative<ApcModel>(m)) return "apc";
  return "fcae";
}

inline FrameModel load_frame_model(const std::string& path) {
  auto ckpt = nn::load_checkpoint(path);
  json desc = json::parse(ckpt.descriptor);
  std::string kind = desc.at("kind").get<std::string>();
  Rng zero(0);
  if (kind == "cpc") {
    auto model = CpcModel::build(desc.at("config").get<CpcConfig>(), zero);
    nn::assign_params(ckpt, model.stacks());
    return model;
  }
  if (kind == "apc") {
    auto model = ApcModel::build(desc.at("config").get<ApcConfig>(), zero);
    nn::assign_params(ckpt, model.stacks());
    return model;
  }
  if (kind == "fcae") {
    auto model = FrameCaeModel::build(desc.at("config").get<FrameCaeConfig>(), zero);
    nn::assign_params(ckpt, model.stacks());
    return model;
  }
  throw_format("unknown frame model kind: " + kind);
}

inline feat::FeatureSequence encode_frames(const FrameModel& model, const feat::FeatureSequence& seq) {
  return std::visit([&](const auto& m) { return encode_frames(m, seq); }, model);
}

inline feat::FeatureArchive encode_archive(const FrameModel& model, const feat::FeatureArchive& archive) {
  feat::FeatureArchive out;
  out.entries.reserve(archive.entries.size());
  for (const auto& e : archive.entries) out.entries.push_back(encode_frames(model, e));
  return out;
}

}  // namespace awe::frame

#endif  // AWE_FRAME_MODELS_HPP_
