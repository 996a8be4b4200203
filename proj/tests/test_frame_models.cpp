// tests/test_frame_models.cpp

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

#include "awe/frame_models.hpp"
#include "awe/synth.hpp"
#include "oracles/finite_diff.hpp"

#include <filesystem>

using awe::Mat;
using awe::Rng;
using awe::Vec;
namespace nn = awe::nn;
namespace feat = awe::feat;
namespace frame = awe::frame;
namespace align = awe::align;

namespace {

Mat random_mat(Rng& rng, int rows, int cols, double scale = 1.0) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.gaussian();
  return m;
}

frame::CpcConfig tiny_cpc() {
  frame::CpcConfig cfg;
  cfg.input_dim = 3;
  cfg.enc_layers = 1;
  cfg.enc_hidden = 6;
  cfg.dropout_after = 0;  // keep the loss smooth for finite differences
  cfg.z_dim = 3;
  cfg.c_dim = 4;
  cfg.steps_ahead = 2;
  cfg.n_candidates = 3;
  return cfg;
}

frame::ApcConfig tiny_apc() {
  frame::ApcConfig cfg;
  cfg.input_dim = 3;
  cfg.gru_layers = 2;
  cfg.hidden = 4;
  cfg.shift = 2;
  cfg.aux_anchors = 3;
  cfg.aux_history = 6;
  cfg.aux_slice = 3;
  cfg.aux_shift = 2;
  cfg.aux_weight = 0.1;
  return cfg;
}

frame::FrameCaeConfig tiny_fcae(int dim = 5) {
  frame::FrameCaeConfig cfg;
  cfg.input_dim = dim;
  cfg.enc_layers = 2;
  cfg.hidden = 6;
  cfg.latent = 3;
  return cfg;
}

frame::NegativePlan random_plan(Rng& rng, const frame::CpcConfig& cfg, int T) {
  frame::NegativePlan plan;
  const int n_neg_rows = 5;
  plan.negatives = random_mat(rng, n_neg_rows, cfg.input_dim);
  plan.candidates.resize(static_cast<size_t>(cfg.steps_ahead));
  plan.true_index.resize(static_cast<size_t>(cfg.steps_ahead));
  for (int ki = 0; ki < cfg.steps_ahead; ++ki) {
    int valid = T - (ki + 1);
    plan.candidates[ki].resize(static_cast<size_t>(valid));
    plan.true_index[ki].resize(static_cast<size_t>(valid));
    for (int t = 0; t < valid; ++t) {
      std::vector<frame::CpcCandidate> cands(static_cast<size_t>(cfg.n_candidates));
      int ti = static_cast<int>(rng.uniform_int(0, cfg.n_candidates - 1));
      for (int i = 0; i < cfg.n_candidates; ++i) {
        if (i == ti)
          cands[static_cast<size_t>(i)] = {-1, t + ki + 1};
        else
          cands[static_cast<size_t>(i)] = {static_cast<int>(rng.uniform_int(0, n_neg_rows - 1)), -1};
      }
      plan.candidates[ki][static_cast<size_t>(t)] = std::move(cands);
      plan.true_index[ki][static_cast<size_t>(t)] = ti;
    }
  }
  return plan;
}

feat::FeatureArchive constant_archive(int n_utts, int frames, int dim, double value,
                                      int n_speakers = 3) {
  feat::FeatureArchive archive;
  for (int i = 0; i < n_utts; ++i) {
    feat::FeatureSequence s;
    s.utterance_id = "u" + std::to_string(i);
    s.speaker_id = "spk" + std::to_string(i % n_speakers);
    s.frames = Mat::Constant(frames, dim, value);
    archive.entries.push_back(std::move(s));
  }
  return archive;
}

}  // namespace

// ---------------------------------------------------------------------------
// CPC scores and InfoNCE
// ---------------------------------------------------------------------------

TEST_CASE("cpc_scores: zero predictor head scores every candidate 1") {
  Rng rng(201);
  auto model = frame::CpcModel::build(tiny_cpc(), rng);
  for (auto& p : model.predictors) p.init_params_zero();
  Mat frames = random_mat(rng, 6, 3);
  Mat candidates = random_mat(rng, 4, 3);
  Vec scores = frame::cpc_scores(model, frames, 1, 1, candidates);
  for (int i = 0; i < 4; ++i) REQUIRE(scores[i] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("cpc_scores: orthogonal candidate scores 1, ln2-aligned candidate scores 2") {
  Rng rng(202);
  auto model = frame::CpcModel::build(tiny_cpc(), rng);
  // bias-only predictor head: output (ln 2, 0, 0)
  model.predictors[0].init_params_zero();
  model.predictors[0].params[4 * 3 + 0] = std::log(2.0);  // bias after W (c_dim*z_dim)
  Mat frames = random_mat(rng, 5, 3);
  Mat candidates(2, 3);
  candidates << 0, 1, 0,  // orthogonal to the prediction
      1, 0, 0;            // aligned
  Vec scores = frame::cpc_scores(model, frames, 0, 1, candidates);
  REQUIRE(scores[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(scores[1] == Catch::Approx(2.0).margin(1e-12));
  REQUIRE_THROWS_AS(frame::cpc_scores(model, frames, 0, 9, candidates), awe::Error);
}

TEST_CASE("info_nce_loss: uniform, saturated and hand-computed cases") {
  Vec uniform = Vec::Constant(32, 0.125);
  REQUIRE(frame::info_nce_loss(uniform, 7) == Catch::Approx(std::log(32.0)).margin(1e-9));

  Vec saturated(8);
  saturated.setConstant(1.0);
  saturated[3] = 1e9;
  REQUIRE(frame::info_nce_loss(saturated, 3) < 1e-8);

  Vec scores(4);
  scores << 1, 2, 3, 4;
  REQUIRE(frame::info_nce_loss(scores, 2) == Catch::Approx(-std::log(0.3)).margin(1e-9));
}

TEST_CASE("info_nce: non-negative, and bounded by ln N when the true score is maximal",
          "[properties]") {
  Rng rng(203);
  for (int rep = 0; rep < 200; ++rep) {
    int n = static_cast<int>(rng.uniform_int(2, 40));
    Vec scores(n);
    for (int i = 0; i < n; ++i) scores[i] = std::exp(2.0 * rng.gaussian());
    int true_index = static_cast<int>(rng.uniform_int(0, n - 1));
    double loss = frame::info_nce_loss(scores, true_index);
    REQUIRE(loss >= 0.0);
    int argmax = 0;
    scores.maxCoeff(&argmax);
    if (argmax == true_index) REQUIRE(loss <= std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST_CASE("cpc_step: gradients match finite differences through the whole model") {
  Rng rng(204);
  auto cfg = tiny_cpc();
  auto model = frame::CpcModel::build(cfg, rng);
  Mat frames = random_mat(rng, 6, cfg.input_dim);
  auto plan = random_plan(rng, cfg, 6);

  auto step = frame::cpc_step(model, frames, plan, false, 0);
  auto loss_fn = [&]() { return frame::cpc_step(model, frames, plan, false, 0).loss; };

  auto check = [&](nn::LayerStack& stack, const Vec& analytic) {
    auto numeric = oracle::central_diff(loss_fn, stack.params, 1e-6);
    REQUIRE(oracle::max_rel_err(analytic, numeric) < 1e-4);
  };
  check(model.encoder, step.d_encoder);
  check(model.context, step.d_context);
  for (int k = 0; k < cfg.steps_ahead; ++k)
    check(model.predictors[static_cast<size_t>(k)], step.d_predictors[static_cast<size_t>(k)]);
}

TEST_CASE("cpc encode: causal in the frame index") {
  Rng rng(205);
  auto model = frame::CpcModel::build(tiny_cpc(), rng);
  feat::FeatureSequence seq;
  seq.utterance_id = "u";
  seq.speaker_id = "s";
  seq.frames = random_mat(rng, 8, 3);
  auto enc = frame::encode_frames(model, seq);
  REQUIRE(enc.frames.rows() == 8);
  REQUIRE(enc.frames.cols() == 4);  // c_dim

  feat::FeatureSequence modified = seq;
  modified.frames.row(6) += Eigen::RowVector3d(1.0, -2.0, 0.5);
  modified.frames.row(7) += Eigen::RowVector3d(-1.0, 0.3, 2.0);
  auto enc2 = frame::encode_frames(model, modified);
  for (int t = 0; t <= 5; ++t) REQUIRE(enc.frames.row(t) == enc2.frames.row(t));
  REQUIRE(enc.frames.row(6) != enc2.frames.row(6));
}

TEST_CASE("cpc encode: single-frame utterance and determinism") {
  Rng rng(206);
  auto model = frame::CpcModel::build(tiny_cpc(), rng);
  feat::FeatureSequence seq;
  seq.utterance_id = "u";
  seq.speaker_id = "s";
  seq.frames = random_mat(rng, 1, 3);
  auto enc = frame::encode_frames(model, seq);
  REQUIRE(enc.frames.rows() == 1);
  REQUIRE(enc.frames.allFinite());
  auto enc2 = frame::encode_frames(model, seq);
  REQUIRE(enc.frames == enc2.frames);
}

TEST_CASE("train_cpc: deterministic traces, frozen parameters under lr 0, speaker check") {
  awe::synth::CorpusSpec spec;
  spec.n_word_types = 4;
  spec.n_speakers = 3;
  spec.n_utterances = 9;
  spec.dim = 3;
  spec.seed = 5;
  auto [archive, truth] = awe::synth::generate_corpus(spec);

  auto cfg = tiny_cpc();
  frame::CpcSchedule schedule;
  schedule.batch_utterances = 3;
  schedule.lr = 1e-3;
  schedule.max_epochs = 2;

  Rng r1(7);
  auto m1 = frame::CpcModel::build(cfg, r1);
  auto m1_copy = m1;
  auto trace1 = frame::train_cpc(m1, archive, schedule, 11);
  auto trace2 = frame::train_cpc(m1_copy, archive, schedule, 11);
  REQUIRE(trace1.loss == trace2.loss);

  Rng r2(7);
  auto m2 = frame::CpcModel::build(cfg, r2);
  frame::CpcSchedule frozen = schedule;
  frozen.lr = 0.0;
  frozen.max_epochs = 3;
  auto trace = frame::train_cpc(m2, archive, frozen, 11);
  REQUIRE(trace.loss.size() == 3);
  REQUIRE(std::abs(trace.loss[1] - trace.loss[0]) < 1e-9);
  REQUIRE(std::abs(trace.loss[2] - trace.loss[0]) < 1e-9);

  frame::CpcSchedule toobig = schedule;
  toobig.batch_utterances = 9;  // only 3 speakers available
  auto m3 = m1;
  REQUIRE_THROWS_AS(frame::train_cpc(m3, archive, toobig, 1), awe::Error);
}

// ---------------------------------------------------------------------------
// APC
// ---------------------------------------------------------------------------

TEST_CASE("apc_loss: bias-only predictor on a constant utterance") {
  Rng rng(211);
  auto cfg = tiny_apc();
  auto model = frame::ApcModel::build(cfg, rng);
  model.encoder.init_params_zero();  // z = 0 for every frame
  model.predictor.init_params_zero();

  const double c = 0.7;
  Mat frames = Mat::Constant(10, 3, c);
  // perfect: bias equals the constant target
  for (int j = 0; j < 3; ++j) model.predictor.params[cfg.hidden * 3 + j] = c;
  Rng anchors(1);
  auto loss = frame::apc_loss(model, frames, anchors);
  REQUIRE(loss.main == Catch::Approx(0.0).margin(1e-12));

  // off by +1 in every dimension: per-frame L1 equals the dim count
  for (int j = 0; j < 3; ++j) model.predictor.params[cfg.hidden * 3 + j] = c + 1.0;
  Rng anchors2(1);
  auto loss2 = frame::apc_loss(model, frames, anchors2);
  REQUIRE(loss2.main == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("apc_loss: 13-dim unit offset gives main = 13") {
  Rng rng(212);
  frame::ApcConfig cfg = tiny_apc();
  cfg.input_dim = 13;
  auto model = frame::ApcModel::build(cfg, rng);
  model.encoder.init_params_zero();
  model.predictor.init_params_zero();
  for (int j = 0; j < 13; ++j) model.predictor.params[cfg.hidden * 13 + j] = 1.0;
  Mat frames = Mat::Zero(9, 13);
  Rng anchors(2);
  auto loss = frame::apc_loss(model, frames, anchors);
  REQUIRE(loss.main == Catch::Approx(13.0).margin(1e-12));
}

TEST_CASE("apc_loss: matches a scalar recomputation of main + aux") {
  Rng rng(213);
  auto cfg = tiny_apc();
  auto model = frame::ApcModel::build(cfg, rng);
  Mat frames = random_mat(rng, 30, cfg.input_dim);
  Rng anchor_rng(3);
  auto loss = frame::apc_loss(model, frames, anchor_rng);
  REQUIRE(!loss.anchors.empty());

  // scalar re-assembly from the model's own forward outputs
  Mat z = nn::forward(model.encoder, frames, false).output;
  Mat pred = nn::forward(model.predictor, z, false).output;
  const int T = 30, k = cfg.shift;
  double main = 0.0;
  for (int t = 0; t < T - k; ++t) {
    double l1 = 0.0;
    for (int j = 0; j < cfg.input_dim; ++j) l1 += std::abs(frames(t + k, j) - pred(t, j));
    main += l1;
  }
  main /= (T - k);
  double aux = 0.0;
  for (int a : loss.anchors) {
    double slice = 0.0;
    for (int i = 0; i < cfg.aux_slice; ++i) {
      int p = a - cfg.aux_history + i;
      double l1 = 0.0;
      for (int j = 0; j < cfg.input_dim; ++j)
        l1 += std::abs(frames(p + cfg.aux_shift, j) - pred(p, j));
      slice += l1;
    }
    aux += slice / cfg.aux_slice;
  }
  aux /= static_cast<double>(loss.anchors.size());

  REQUIRE(loss.main == Catch::Approx(main).margin(1e-9));
  REQUIRE(loss.aux == Catch::Approx(aux).margin(1e-9));
  REQUIRE(loss.total == Catch::Approx(main + cfg.aux_weight * aux).margin(1e-9));
}

TEST_CASE("apc_step: gradients match finite differences") {
  Rng rng(214);
  auto cfg = tiny_apc();
  auto model = frame::ApcModel::build(cfg, rng);
  Mat frames = random_mat(rng, 18, cfg.input_dim);
  std::vector<int> anchors = {7, 9, 12};
  auto step = frame::apc_step(model, frames, anchors);
  auto loss_fn = [&]() { return frame::apc_step(model, frames, anchors, false).loss.total; };
  auto numeric_enc = oracle::central_diff(loss_fn, model.encoder.params, 1e-6);
  REQUIRE(oracle::max_rel_err(step.d_encoder, numeric_enc) < 1e-4);
  auto numeric_pred = oracle::central_diff(loss_fn, model.predictor.params, 1e-6);
  REQUIRE(oracle::max_rel_err(step.d_predictor, numeric_pred) < 1e-4);
}

TEST_CASE("apc: prediction at t is unchanged by frames after t") {
  Rng rng(215);
  auto cfg = tiny_apc();
  auto model = frame::ApcModel::build(cfg, rng);
  Mat frames = random_mat(rng, 12, cfg.input_dim);
  Mat z1 = nn::forward(model.encoder, frames, false).output;
  Mat pred1 = nn::forward(model.predictor, z1, false).output;
  Mat modified = frames;
  modified.row(9) += Eigen::RowVector3d(2.0, -1.0, 0.5);
  Mat z2 = nn::forward(model.encoder, modified, false).output;
  Mat pred2 = nn::forward(model.predictor, z2, false).output;
  for (int t = 0; t < 9; ++t) REQUIRE(pred1.row(t) == pred2.row(t));
  // APC encoding is the last GRU layer's states
  feat::FeatureSequence seq;
  seq.utterance_id = "u";
  seq.speaker_id = "s";
  seq.frames = frames;
  auto enc = frame::encode_frames(model, seq);
  REQUIRE(enc.frames == z1);
}

TEST_CASE("train_apc: a constant corpus is learnable to MAE < 1e-3 in 5 epochs", "[slow]") {
  auto archive = constant_archive(2000, 30, 3, 0.02);
  Rng rng(216);
  frame::ApcConfig cfg = tiny_apc();
  auto model = frame::ApcModel::build(cfg, rng);
  frame::ApcSchedule schedule;
  schedule.lr = 5e-5;
  schedule.epochs = 5;
  auto trace = frame::train_apc(model, archive, schedule, 21);
  REQUIRE(trace.loss.back() < 1e-3);
}

TEST_CASE("train_apc: deterministic traces; aux recorded with and without weight") {
  awe::synth::CorpusSpec spec;
  spec.n_word_types = 3;
  spec.n_speakers = 2;
  spec.n_utterances = 8;
  spec.dim = 3;
  spec.words_per_utterance_min = 3;
  spec.words_per_utterance_max = 5;
  spec.seed = 6;
  auto [archive, truth] = awe::synth::generate_corpus(spec);

  auto cfg = tiny_apc();
  frame::ApcSchedule schedule;
  schedule.epochs = 2;

  Rng r1(9);
  auto m1 = frame::ApcModel::build(cfg, r1);
  auto m2 = m1;
  auto t1 = frame::train_apc(m1, archive, schedule, 31);
  auto t2 = frame::train_apc(m2, archive, schedule, 31);
  REQUIRE(t1.loss == t2.loss);
  REQUIRE(t1.aux == t2.aux);

  frame::ApcConfig no_aux = cfg;
  no_aux.aux_weight = 0.0;
  Rng r3(9);
  auto m3 = frame::ApcModel::build(no_aux, r3);
  auto t3 = frame::train_apc(m3, archive, schedule, 31);
  REQUIRE(t3.aux.size() == t3.loss.size());
  REQUIRE(t1.loss[0] != t3.loss[0]);  // the weighted aux term changes the total
}

// ---------------------------------------------------------------------------
// Frame AE / CAE
// ---------------------------------------------------------------------------

TEST_CASE("frame_ae_loss: exact reconstruction and unit-offset arithmetic") {
  Rng rng(221);
  frame::FrameCaeConfig cfg = tiny_fcae(39);
  auto model = frame::FrameCaeModel::build(cfg, rng);
  model.encoder.init_params_zero();
  model.decoder.init_params_zero();
  Mat zeros = Mat::Zero(7, 39);
  REQUIRE(frame::frame_ae_loss(model, zeros) == 0.0);

  // decoder output bias = all ones -> x_hat = x + 1 in all 39 dims
  int bias_offset = model.decoder.offsets[model.decoder.layers.size() - 1] + cfg.hidden * 39;
  for (int j = 0; j < 39; ++j) model.decoder.params[bias_offset + j] = 1.0;
  REQUIRE(frame::frame_ae_loss(model, zeros) == Catch::Approx(39.0).margin(1e-12));
}

TEST_CASE("frame_ae_loss: matches a scalar oracle on a random batch") {
  Rng rng(222);
  auto model = frame::FrameCaeModel::build(tiny_fcae(), rng);
  Mat x = random_mat(rng, 6, 5);
  Mat xhat = frame::fcae_reconstruct(model, x);
  double expected = 0.0;
  for (int t = 0; t < 6; ++t) {
    double sq = 0.0;
    for (int j = 0; j < 5; ++j) sq += (x(t, j) - xhat(t, j)) * (x(t, j) - xhat(t, j));
    expected += sq;
  }
  expected /= 6.0;
  REQUIRE(frame::frame_ae_loss(model, x) == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("frame_cae_loss: zero pairs, single 3-4-5 pair, and scalar oracle") {
  Rng rng(223);
  auto model = frame::FrameCaeModel::build(tiny_fcae(), rng);
  model.encoder.init_params_zero();
  model.decoder.init_params_zero();

  std::vector<align::FramePair> zero_pairs(3, {Vec::Zero(5), Vec::Zero(5)});
  REQUIRE(frame::frame_cae_loss(model, zero_pairs) == 0.0);

  int bias_offset = model.decoder.offsets[model.decoder.layers.size() - 1] + 6 * 5;
  model.decoder.params[bias_offset + 0] = 3.0;
  model.decoder.params[bias_offset + 1] = 4.0;
  std::vector<align::FramePair> one_pair{{Vec::Zero(5), Vec::Zero(5)}};
  REQUIRE(frame::frame_cae_loss(model, one_pair) == Catch::Approx(25.0).margin(1e-12));

  auto random_model = frame::FrameCaeModel::build(tiny_fcae(), rng);
  std::vector<align::FramePair> pairs;
  for (int i = 0; i < 5; ++i) {
    pairs.push_back({random_mat(rng, 1, 5).row(0).transpose(), random_mat(rng, 1, 5).row(0).transpose()});
  }
  Mat x(5, 5), y(5, 5);
  for (int i = 0; i < 5; ++i) {
    x.row(i) = pairs[static_cast<size_t>(i)].x.transpose();
    y.row(i) = pairs[static_cast<size_t>(i)].y.transpose();
  }
  Mat yhat = frame::fcae_reconstruct(random_model, x);
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) expected += (y.row(i) - yhat.row(i)).squaredNorm();
  expected /= 5.0;
  REQUIRE(frame::frame_cae_loss(random_model, pairs) == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("frame CAE with y == x pairs reduces exactly to the AE loss", "[properties]") {
  Rng rng(224);
  for (int rep = 0; rep < 20; ++rep) {
    auto model = frame::FrameCaeModel::build(tiny_fcae(), rng);
    Mat x = random_mat(rng, 8, 5);
    std::vector<align::FramePair> pairs;
    for (int t = 0; t < 8; ++t) pairs.push_back({x.row(t).transpose(), x.row(t).transpose()});
    REQUIRE(frame::frame_cae_loss(model, pairs) ==
            Catch::Approx(frame::frame_ae_loss(model, x)).margin(1e-12));
  }
}

TEST_CASE("fcae_step: gradients match finite differences") {
  Rng rng(225);
  auto model = frame::FrameCaeModel::build(tiny_fcae(), rng);
  Mat x = random_mat(rng, 5, 5);
  Mat y = random_mat(rng, 5, 5);
  auto step = frame::fcae_step(model, x, y);
  auto loss_fn = [&]() {
    return nn::loss_value(nn::LossKind::mse, frame::fcae_reconstruct(model, x), y);
  };
  auto numeric_enc = oracle::central_diff(loss_fn, model.encoder.params, 1e-6);
  REQUIRE(oracle::max_rel_err(step.d_encoder, numeric_enc) < 1e-4);
  auto numeric_dec = oracle::central_diff(loss_fn, model.decoder.params, 1e-6);
  REQUIRE(oracle::max_rel_err(step.d_decoder, numeric_dec) < 1e-4);
}

TEST_CASE("train_frame_cae: validates inputs and records phase continuity") {
  Rng rng(226);
  auto archive = constant_archive(6, 10, 5, 0.3);
  for (auto& e : archive.entries) e.frames += random_mat(rng, 10, 5, 0.1);

  auto model = frame::FrameCaeModel::build(tiny_fcae(), rng);
  frame::FcaeSchedule schedule;
  schedule.ae_epochs = 2;
  schedule.cae_epochs = 2;
  schedule.batch_frames = 16;

  REQUIRE_THROWS_AS(frame::train_frame_cae(model, archive, {}, schedule, 1), awe::Error);

  std::vector<align::FramePair> pairs;
  for (int i = 0; i < 20; ++i)
    pairs.push_back({archive.entries[0].frames.row(i % 10).transpose(),
                     archive.entries[1].frames.row((i + 3) % 10).transpose()});

  auto trained = model;
  auto trace = frame::train_frame_cae(trained, archive, pairs, schedule, 1);
  REQUIRE(trace.loss.size() == 4);  // 2 AE + 2 CAE epochs

  // continuity: the recorded CAE start loss is the AE-initialized model's loss
  auto ae_only = model;
  frame::FcaeSchedule ae_sched = schedule;
  ae_sched.cae_epochs = 0;
  frame::train_frame_cae(ae_only, archive, pairs, ae_sched, 1);
  REQUIRE(trace.cae_start_loss == Catch::Approx(frame::frame_cae_loss(ae_only, pairs)).margin(1e-12));

  // dim mismatch is a configuration error
  auto wrong = frame::FrameCaeModel::build(tiny_fcae(7), rng);
  REQUIRE_THROWS_AS(frame::train_frame_cae(wrong, archive, pairs, schedule, 1), awe::Error);
}

TEST_CASE("frame model checkpoints round-trip through AWEF files") {
  Rng rng(227);
  auto dir = std::filesystem::temp_directory_path();

  auto cpc = frame::CpcModel::build(tiny_cpc(), rng);
  auto apc = frame::ApcModel::build(tiny_apc(), rng);
  auto fcae = frame::FrameCaeModel::build(tiny_fcae(), rng);

  feat::FeatureSequence seq;
  seq.utterance_id = "u";
  seq.speaker_id = "s";
  seq.frames = random_mat(rng, 7, 3);

  auto cpc_path = (dir / "awe_cpc.awef").string();
  frame::save_model(cpc, cpc_path);
  auto loaded = frame::load_frame_model(cpc_path);
  REQUIRE(frame::frame_model_kind(loaded) == "cpc");
  auto enc1 = frame::encode_frames(loaded, seq);
  auto enc2 = frame::encode_frames(frame::load_frame_model(cpc_path), seq);
  REQUIRE(enc1.frames == enc2.frames);

  auto apc_path = (dir / "awe_apc.awef").string();
  frame::save_model(apc, apc_path);
  REQUIRE(frame::frame_model_kind(frame::load_frame_model(apc_path)) == "apc");

  feat::FeatureSequence seq5 = seq;
  seq5.frames = random_mat(rng, 7, 5);
  auto fcae_path = (dir / "awe_fcae.awef").string();
  frame::save_model(fcae, fcae_path);
  auto fcae_loaded = frame::load_frame_model(fcae_path);
  REQUIRE(frame::frame_model_kind(fcae_loaded) == "fcae");
  REQUIRE(frame::encode_frames(fcae_loaded, seq5).frames.cols() == 3);  // latent dim

  std::filesystem::remove(cpc_path);
  std::filesystem::remove(apc_path);
  std::filesystem::remove(fcae_path);
}
