// awe/awe_models.hpp

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

// Segment-level acoustic word embeddings: the recurrent encoder-decoder
// (AE-RNN warm start, then CAE-RNN on discovered pairs) and the downsampling
// baseline. The embedding is an affine map of the encoder's final hidden
// state; the decoder is conditioned on the embedding both through its initial
// hidden states and as its input at every step. No teacher forcing.

#ifndef AWE_AWE_MODELS_HPP_
#define AWE_AWE_MODELS_HPP_

#include "awe/align.hpp"
#include "awe/features.hpp"
#include "awe/nn.hpp"

#include "json.hpp"

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace awe::seg {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Downsampling baseline
// ---------------------------------------------------------------------------

// n_keep equally spaced frames, linearly interpolated at fractional positions,
// concatenated in order. A single-frame segment tiles that frame.
inline Vec downsample_vector(const Mat& frames, int n_keep = 10) {
  const int T = static_cast<int>(frames.rows());
  if (T < 1) throw_input("downsample: empty sequence");
  const int d = static_cast<int>(frames.cols());
  Vec out(static_cast<Eigen::Index>(n_keep) * d);
  for (int i = 0; i < n_keep; ++i) {
    double pos = (T == 1 || n_keep == 1) ? 0.0 : static_cast<double>(i) * (T - 1) / (n_keep - 1);
    int i0 = static_cast<int>(pos);
    double frac = pos - i0;
    int i1 = std::min(i0 + 1, T - 1);
    out.segment(static_cast<Eigen::Index>(i) * d, d) =
        ((1.0 - frac) * frames.row(i0) + frac * frames.row(i1)).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoder-decoder model
// ---------------------------------------------------------------------------

struct AweConfig {
  int input_dim = 13;
  int gru_layers = 3;
  int hidden = 512;
  int embed_dim = 130;
};

inline void to_json(json& j, const AweConfig& c) {
  j = json{{"input_dim", c.input_dim}, {"gru_layers", c.gru_layers}, {"hidden", c.hidden},
           {"embed_dim", c.embed_dim}};
}

inline void from_json(const json& j, AweConfig& c) {
  j.at("input_dim").get_to(c.input_dim);
  j.at("gru_layers").get_to(c.gru_layers);
  j.at("hidden").get_to(c.hidden);
  j.at("embed_dim").get_to(c.embed_dim);
}

enum class AwePhase { ae, cae };

struct AweModel {
  AweConfig config;
  AwePhase phase = AwePhase::ae;
  nn::LayerStack encoder;                // GRU stack, input_dim -> hidden
  nn::LayerStack embed_head;             // affine(hidden, embed_dim)
  std::vector<nn::LayerStack> dec_init;  // per decoder layer: affine(embed_dim, hidden)
  nn::LayerStack decoder;                // GRU stack, embed_dim -> hidden
  nn::LayerStack output_head;            // affine(hidden, input_dim)

  static AweModel build(const AweConfig& cfg, Rng& rng) {
    AweModel m;
    m.config = cfg;
    int in = cfg.input_dim;
    for (int l = 0; l < cfg.gru_layers; ++l) {
      m.encoder.gru(in, cfg.hidden);
      in = cfg.hidden;
    }
    m.embed_head.affine(cfg.hidden, cfg.embed_dim);
    in = cfg.embed_dim;
    for (int l = 0; l < cfg.gru_layers; ++l) {
      nn::LayerStack init;
      init.affine(cfg.embed_dim, cfg.hidden);
      m.dec_init.push_back(std::move(init));
      m.decoder.gru(in, cfg.hidden);
      in = cfg.hidden;
    }
    m.output_head.affine(cfg.hidden, cfg.input_dim);
    m.encoder.init_params(rng);
    m.embed_head.init_params(rng);
    for (auto& s : m.dec_init) s.init_params(rng);
    m.decoder.init_params(rng);
    m.output_head.init_params(rng);
    return m;
  }

  std::vector<const nn::LayerStack*> stacks() const {
    std::vector<const nn::LayerStack*> s{&encoder, &embed_head};
    for (const auto& i : dec_init) s.push_back(&i);
    s.push_back(&decoder);
    s.push_back(&output_head);
    return s;
  }
  std::vector<nn::LayerStack*> stacks() {
    std::vector<nn::LayerStack*> s{&encoder, &embed_head};
    for (auto& i : dec_init) s.push_back(&i);
    s.push_back(&decoder);
    s.push_back(&output_head);
    return s;
  }
};

// Embedding of one segment: affine head over the last hidden state of the last
// encoder GRU. Depends only on encoder + head, never on the decoder.
inline Vec awe_encode(const AweModel& model, const Mat& segment) {
  if (segment.rows() < 1) throw_input("awe_encode: empty segment");
  auto enc = nn::forward(model.encoder, segment, false);
  Mat last = enc.output.bottomRows(1);
  return nn::forward(model.embed_head, last, false).output.row(0).transpose();
}

struct AweStep {
  double loss = 0.0;
  std::vector<Vec> grads;  // aligned with stacks()
};

namespace detail {

struct AweForwardPass {
  nn::ForwardResult enc, head, dec, out;
  std::vector<nn::ForwardResult> init;
  Mat dec_input;
  double loss = 0.0;
};

inline AweForwardPass awe_forward(const AweModel& model, const Mat& input, const Mat& target) {
  if (input.cols() != model.config.input_dim || target.cols() != model.config.input_dim)
    throw_config("awe model: segment dim does not match input_dim");
  AweForwardPass pass;
  pass.enc = nn::forward(model.encoder, input, false);
  pass.head = nn::forward(model.embed_head, pass.enc.output.bottomRows(1), false);
  const Mat& z = pass.head.output;  // 1 x embed

  std::vector<Vec> h0;
  for (const auto& init_stack : model.dec_init) {
    pass.init.push_back(nn::forward(init_stack, z, false));
    h0.push_back(pass.init.back().output.row(0).transpose());
  }
  pass.dec_input = z.replicate(target.rows(), 1);
  pass.dec = nn::forward(model.decoder, pass.dec_input, false, 0, &h0);
  pass.out = nn::forward(model.output_head, pass.dec.output, false);
  pass.loss = nn::loss_value(nn::LossKind::mse, pass.out.output, target);
  return pass;
}

}  // namespace detail

// (1/|X|) sum_t ||x_t - x_hat_t||^2: the decoder reconstructs the input.
inline double ae_rnn_loss(const AweModel& model, const Mat& segment) {
  return detail::awe_forward(model, segment, segment).loss;
}

// (1/|Y|) sum_t ||y_t - y_hat_t||^2: decoder length follows the target.
inline double cae_rnn_loss(const AweModel& model, const Mat& input, const Mat& target) {
  return detail::awe_forward(model, input, target).loss;
}

// Loss + gradients for one (input, target) item.
inline AweStep awe_step(const AweModel& model, const Mat& input, const Mat& target) {
  auto pass = detail::awe_forward(model, input, target);
  AweStep step;
  step.loss = pass.loss;

  auto out_grads = nn::backward(model.output_head, pass.out,
                                nn::loss_grad(nn::LossKind::mse, pass.out.output, target));
  auto dec_grads = nn::backward(model.decoder, pass.dec, out_grads.input);

  Mat d_z = Mat::Zero(1, model.config.embed_dim);
  for (Eigen::Index t = 0; t < dec_grads.input.rows(); ++t) d_z += dec_grads.input.row(t);

  std::vector<Vec> init_grads;
  for (size_t l = 0; l < model.dec_init.size(); ++l) {
    Mat d_h0 = dec_grads.initial_hidden[l].transpose();
    auto g = nn::backward(model.dec_init[l], pass.init[l], d_h0);
    init_grads.push_back(g.params);
    d_z += g.input;
  }

  auto head_grads = nn::backward(model.embed_head, pass.head, d_z);
  Mat d_enc = Mat::Zero(input.rows(), model.config.hidden);
  d_enc.bottomRows(1) = head_grads.input;
  auto enc_grads = nn::backward(model.encoder, pass.enc, d_enc);

  step.grads.push_back(enc_grads.params);
  step.grads.push_back(head_grads.params);
  for (auto& g : init_grads) step.grads.push_back(g);
  step.grads.push_back(dec_grads.params);
  step.grads.push_back(out_grads.params);
  return step;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct AweSchedule {
  int ae_epochs = 150;
  double ae_lr = 1e-3;
  int cae_epochs = 25;
  double cae_lr = 1e-4;
  int batch_segments = 256;
  double clip_norm = 5.0;
  int eval_every = 1;  // CAE-phase validation cadence
  int patience = 5;
  std::function<double(const AweModel&)> validation;  // optional; higher is better
};

struct TrainAweResult {
  std::vector<double> ae_loss;   // per epoch
  std::vector<double> cae_loss;  // per epoch
  std::vector<double> validation;
  double cae_start_loss = 0.0;  // CAE objective right after the AE phase
  int best_cae_epoch = 0;       // 1-based; the epoch whose weights are kept
  int64_t clip_events = 0;
};

// Two-phase training. AE phase trains on every distinct pair member with the
// segment as its own target; CAE phase uses both orders of every pair.
inline TrainAweResult train_awe(AweModel& model, const feat::FeatureArchive& archive,
                                const std::vector<align::SegmentPair>& pairs,
                                const AweSchedule& schedule, uint64_t seed) {
  if (pairs.empty()) throw_data("awe training needs a non-empty pair list");

  std::map<std::string, Mat> segments;  // key -> frames
  auto key_of = [](const align::SegmentRef& r) {
    return r.utterance_id + ":" + std::to_string(r.start) + "-" + std::to_string(r.end);
  };
  for (const auto& p : pairs) {
    for (const auto& ref : {p.a, p.b})
      if (!segments.count(key_of(ref))) segments[key_of(ref)] = align::slice_segment(archive, ref);
  }
  std::vector<const Mat*> members;
  for (const auto& [k, m] : segments) members.push_back(&m);

  std::vector<std::pair<const Mat*, const Mat*>> items;  // (input, target), both orders
  for (const auto& p : pairs) {
    const Mat* a = &segments[key_of(p.a)];
    const Mat* b = &segments[key_of(p.b)];
    items.emplace_back(a, b);
    items.emplace_back(b, a);
  }

  auto stacks = model.stacks();
  TrainAweResult result;

  auto run_phase = [&](const char* tag, int epochs, double lr,
                       const std::vector<std::pair<const Mat*, const Mat*>>& data,
                       std::vector<double>& trace, bool allow_early_stop) {
    std::vector<nn::AdamState> states;
    for (auto* s : stacks) states.push_back(nn::AdamState::for_stack(*s, lr));
    double best_score = -std::numeric_limits<double>::infinity();
    int stagnant = 0;
    std::vector<Vec> best_params;

    for (int epoch = 1; epoch <= epochs; ++epoch) {
      Rng rng = Rng::derived(seed, tag, static_cast<uint64_t>(epoch));
      std::vector<size_t> order(data.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

      double epoch_loss = 0.0;
      size_t done = 0;
      while (done < order.size()) {
        size_t count = std::min(static_cast<size_t>(schedule.batch_segments), order.size() - done);
        std::vector<Vec> grads(stacks.size());
        for (size_t i = 0; i < stacks.size(); ++i) grads[i] = Vec::Zero(stacks[i]->param_count());
        double batch_loss = 0.0;
        for (size_t i = 0; i < count; ++i) {
          const auto& item = data[order[done + i]];
          auto step = awe_step(model, *item.first, *item.second);
          batch_loss += step.loss;
          for (size_t s = 0; s < stacks.size(); ++s) grads[s] += step.grads[s];
        }
        const double inv = 1.0 / static_cast<double>(count);
        for (auto& g : grads) g *= inv;
        std::vector<Vec*> refs;
        for (auto& g : grads) refs.push_back(&g);
        if (nn::clip_global_norm(refs, schedule.clip_norm) < 1.0) ++result.clip_events;
        for (size_t s = 0; s < stacks.size(); ++s) nn::adam_step(*stacks[s], grads[s], states[s]);
        epoch_loss += batch_loss;
        done += count;
      }
      trace.push_back(epoch_loss / static_cast<double>(data.size()));
      if (!std::isfinite(trace.back())) throw_training("awe training diverged (non-finite loss)");

      // without validation the kept weights are simply the last epoch's
      if (allow_early_stop && !schedule.validation) result.best_cae_epoch = epoch;
      if (allow_early_stop && schedule.validation && epoch % schedule.eval_every == 0) {
        double score = schedule.validation(model);
        result.validation.push_back(score);
        if (score > best_score + 1e-9) {
          best_score = score;
          stagnant = 0;
          result.best_cae_epoch = epoch;
          best_params.clear();
          for (auto* s : stacks) best_params.push_back(s->params);
        } else if (++stagnant >= schedule.patience) {
          break;
        }
      }
    }
    if (allow_early_stop && !best_params.empty())
      for (size_t s = 0; s < stacks.size(); ++s) stacks[s]->params = best_params[s];
  };

  std::vector<std::pair<const Mat*, const Mat*>> ae_items;
  for (const Mat* m : members) ae_items.emplace_back(m, m);
  model.phase = AwePhase::ae;
  run_phase("awe_ae", schedule.ae_epochs, schedule.ae_lr, ae_items, result.ae_loss, false);

  if (schedule.cae_epochs > 0) {
    double start = 0.0;
    for (const auto& item : items) start += cae_rnn_loss(model, *item.first, *item.second);
    result.cae_start_loss = start / static_cast<double>(items.size());
    model.phase = AwePhase::cae;
    result.best_cae_epoch = 0;
    run_phase("awe_cae", schedule.cae_epochs, schedule.cae_lr, items, result.cae_loss, true);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Embeddings and the AWEM file
// ---------------------------------------------------------------------------

struct Embedding {
  Vec vector;
  align::SegmentRef segment;
  std::string label;  // word type when ground truth is known, else empty
  std::string speaker_id;
};

struct EvalSegment {
  align::SegmentRef ref;
  std::string label;
  std::string speaker_id;
};

// Same line format as the ground-truth file: `utt label start end speaker`.
inline std::vector<EvalSegment> load_segments(const std::string& path) {
  auto is = io::open_in(path);
  std::vector<EvalSegment> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    EvalSegment seg;
    if (!(ss >> seg.ref.utterance_id)) continue;
    if (!(ss >> seg.label >> seg.ref.start >> seg.ref.end >> seg.speaker_id))
      throw_format("segments " + path + ": malformed line " + std::to_string(line_no));
    out.push_back(std::move(seg));
  }
  return out;
}

inline void save_segments(const std::vector<EvalSegment>& segments, const std::string& path) {
  auto os = io::open_out(path);
  for (const auto& s : segments)
    os << s.ref.utterance_id << " " << (s.label.empty() ? "?" : s.label) << " " << s.ref.start
       << " " << s.ref.end << " " << s.speaker_id << "\n";
}

inline std::vector<Embedding> embed_segments(const AweModel& model,
                                             const feat::FeatureArchive& archive,
                                             const std::vector<EvalSegment>& segments) {
  std::vector<Embedding> out;
  out.reserve(segments.size());
  for (const auto& s : segments) {
    Embedding e;
    e.vector = awe_encode(model, align::slice_segment(archive, s.ref));
    e.segment = s.ref;
    e.label = s.label;
    e.speaker_id = s.speaker_id;
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<Embedding> downsample_segments(const feat::FeatureArchive& archive,
                                                  const std::vector<EvalSegment>& segments,
                                                  int n_keep = 10) {
  std::vector<Embedding> out;
  out.reserve(segments.size());
  for (const auto& s : segments) {
    Embedding e;
    e.vector = downsample_vector(align::slice_segment(archive, s.ref), n_keep);
    e.segment = s.ref;
    e.label = s.label;
    e.speaker_id = s.speaker_id;
    out.push_back(std::move(e));
  }
  return out;
}

inline constexpr uint16_t kAwemVersion = 1;

// AWEM: magic, version u16, count u32, dim u16; per entry: utterance id
// (length-prefixed), start u32, end u32, label, speaker id, dim f32.
inline void save_awem(const std::vector<Embedding>& embeddings, const std::string& path) {
  if (embeddings.empty()) throw_data("refusing to write an empty embedding file");
  auto os = io::open_out(path);
  io::write_magic(os, "AWEM");
  io::write_le<uint16_t>(os, kAwemVersion);
  io::write_le<uint32_t>(os, static_cast<uint32_t>(embeddings.size()));
  io::write_le<uint16_t>(os, static_cast<uint16_t>(embeddings.front().vector.size()));
  for (const auto& e : embeddings) {
    io::write_string(os, e.segment.utterance_id);
    io::write_le<uint32_t>(os, static_cast<uint32_t>(e.segment.start));
    io::write_le<uint32_t>(os, static_cast<uint32_t>(e.segment.end));
    io::write_string(os, e.label);
    io::write_string(os, e.speaker_id);
    for (Eigen::Index i = 0; i < e.vector.size(); ++i)
      io::write_le<float>(os, static_cast<float>(e.vector[i]));
  }
}

inline std::vector<Embedding> load_awem(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, "AWEM", "embedding file");
  auto version = io::read_le<uint16_t>(is, "embedding version");
  if (version != kAwemVersion) throw_format("unsupported AWEM version " + std::to_string(version));
  auto count = io::read_le<uint32_t>(is, "embedding count");
  auto dim = io::read_le<uint16_t>(is, "embedding dim");
  std::vector<Embedding> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Embedding e;
    e.segment.utterance_id = io::read_string(is, "utterance id");
    e.segment.start = static_cast<int>(io::read_le<uint32_t>(is, "segment start"));
    e.segment.end = static_cast<int>(io::read_le<uint32_t>(is, "segment end"));
    e.label = io::read_string(is, "label");
    e.speaker_id = io::read_string(is, "speaker id");
    e.vector.resize(dim);
    for (int j = 0; j < dim; ++j)
      e.vector[j] = static_cast<double>(io::read_le<float>(is, "embedding values"));
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_model(const AweModel& model, const std::string& path) {
  json desc{{"kind", "awe"},
            {"config", model.config},
            {"phase", model.phase == AwePhase::ae ? "ae" : "cae"}};
  nn::save_checkpoint(path, desc.dump(), model.stacks());
}

inline AweModel load_awe_model(const std::string& path) {
  auto ckpt = nn::load_checkpoint(path);
  json desc = json::parse(ckpt.descriptor);
  if (desc.at("kind").get<std::string>() != "awe")
    throw_format("checkpoint is not an awe model: " + path);
  Rng zero(0);
  auto model = AweModel::build(desc.at("config").get<AweConfig>(), zero);
  model.phase = desc.at("phase").get<std::string>() == "cae" ? AwePhase::cae : AwePhase::ae;
  nn::assign_params(ckpt, model.stacks());
  return model;
}

}  // namespace awe::seg

#endif  // AWE_AWE_MODELS_HPP_
