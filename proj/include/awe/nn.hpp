// awe/nn.hpp

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

// Minimal differentiable-computation layer: affine, layer-norm, ReLU, inverted
// dropout, GRU and LSTM recurrences over time-major matrices, with reverse-mode
// gradients, Adam, a finite-difference gradient checker and a flat checkpoint
// format. Everything runs in doubles; checkpoints store f32.
//
// Flat parameter layout per layer (column-major matrices):
//   affine(in,out):  W[in x out], b[out]
//   layer_norm(d):   gamma[d], beta[d]
//   gru(in,H):       Wx[in x 3H], Wh[H x 3H], bx[3H], bh[3H]   gates r,z,n
//   lstm(in,H):      Wx[in x 4H], Wh[H x 4H], bx[4H], bh[4H]   gates i,f,g,o
// GRU candidate applies the reset gate to the recurrent term:
//   n_t = tanh(gx_n + r_t * (h_{t-1} Wh_n + bh_n))

#ifndef AWE_NN_HPP_
#define AWE_NN_HPP_

#include "awe/common.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace awe::nn {

inline constexpr double kNormEps = 1e-5;

enum class LayerKind { affine, layer_norm, relu, dropout, gru, lstm };

struct LayerSpec {
  LayerKind kind;
  int in = 0;        // affine/gru/lstm input dim; layer_norm dim
  int out = 0;       // affine output dim; gru/lstm hidden dim
  double rate = 0.0;  // dropout rate in [0, 1)

  int param_count() const {
    switch (kind) {
      case LayerKind::affine:
        return in * out + out;
      case LayerKind::layer_norm:
        return 2 * in;
      case LayerKind::gru:
        return 3 * out * (in + out) + 6 * out;
      case LayerKind::lstm:
        return 4 * out * (in + out) + 8 * out;
      default:
        return 0;
    }
  }

  // -1 means "any" (shape-preserving layer)
  int input_dim() const {
    switch (kind) {
      case LayerKind::affine:
      case LayerKind::gru:
      case LayerKind::lstm:
        return in;
      case LayerKind::layer_norm:
        return in;
      default:
        return -1;
    }
  }

  int output_dim(int incoming) const {
    switch (kind) {
      case LayerKind::affine:
        return out;
      case LayerKind::gru:
      case LayerKind::lstm:
        return out;
      default:
        return incoming;
    }
  }

  std::string name() const {
    switch (kind) {
      case LayerKind::affine:
        return "affine(" + std::to_string(in) + "," + std::to_string(out) + ")";
      case LayerKind::layer_norm:
        return "layer_norm(" + std::to_string(in) + ")";
      case LayerKind::relu:
        return "relu";
      case LayerKind::dropout: {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "dropout(%g)", rate);
        return buf;
      }
      case LayerKind::gru:
        return "gru(" + std::to_string(in) + "," + std::to_string(out) + ")";
      case LayerKind::lstm:
        return "lstm(" + std::to_string(in) + "," + std::to_string(out) + ")";
    }
    return "?";
  }
};

class LayerStack {
 public:
  std::vector<LayerSpec> layers;
  Vec params;
  std::vector<int> offsets{0};  // offsets[i] = start of layer i; back() = total

  LayerStack& affine(int in, int out) { return add({LayerKind::affine, in, out}); }
  LayerStack& layer_norm(int dim) { return add({LayerKind::layer_norm, dim, dim}); }
  LayerStack& relu() { return add({LayerKind::relu}); }
  LayerStack& dropout(double rate) {
    if (rate < 0.0 || rate >= 1.0) throw_config("dropout rate must be in [0,1)");
    LayerSpec s{LayerKind::dropout};
    s.rate = rate;
    return add(s);
  }
  LayerStack& gru(int in, int hidden) { return add({LayerKind::gru, in, hidden}); }
  LayerStack& lstm(int in, int hidden) { return add({LayerKind::lstm, in, hidden}); }

  int param_count() const { return offsets.back(); }

  int input_dim() const {
    for (const auto& l : layers)
      if (l.input_dim() > 0) return l.input_dim();
    return -1;
  }

  int output_dim() const {
    int dim = input_dim();
    for (const auto& l : layers) dim = l.output_dim(dim);
    return dim;
  }

  void init_params_zero() { params = Vec::Zero(param_count()); }

  // Uniform +-sqrt(6/(fan_in+fan_out)) per weight matrix, biases zero,
  // layer-norm gain 1.
  void init_params(Rng& rng) {
    init_params_zero();
    for (size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      double* p = params.data() + offsets[i];
      switch (l.kind) {
        case LayerKind::affine: {
          double bound = std::sqrt(6.0 / (l.in + l.out));
          for (int k = 0; k < l.in * l.out; ++k) p[k] = rng.uniform(-bound, bound);
          break;
        }
        case LayerKind::layer_norm:
          for (int k = 0; k < l.in; ++k) p[k] = 1.0;
          break;
        case LayerKind::gru:
        case LayerKind::lstm: {
          int gates = (l.kind == LayerKind::gru) ? 3 : 4;
          double bx_bound = std::sqrt(6.0 / (l.in + l.out));
          double bh_bound = std::sqrt(6.0 / (l.out + l.out));
          int nx = l.in * gates * l.out;
          int nh = l.out * gates * l.out;
          for (int k = 0; k < nx; ++k) p[k] = rng.uniform(-bx_bound, bx_bound);
          for (int k = 0; k < nh; ++k) p[nx + k] = rng.uniform(-bh_bound, bh_bound);
          break;
        }
        default:
          break;
      }
    }
  }

  Eigen::Map<const Vec> layer_params(int i) const {
    return Eigen::Map<const Vec>(params.data() + offsets[i], layer_size(i));
  }
  int layer_size(int i) const { return offsets[i + 1] - offsets[i]; }

  std::string layer_name(int i) const {
    return std::to_string(i) + ":" + layers[static_cast<size_t>(i)].name();
  }

 private:
  LayerStack& add(LayerSpec spec) {
    int incoming = layers.empty() ? -1 : output_dim();
    int want = spec.input_dim();
    if (incoming > 0 && want > 0 && want != incoming)
      throw_config("layer " + spec.name() + " expects input dim " + std::to_string(want) +
                   " but previous layer produces " + std::to_string(incoming));
    layers.push_back(spec);
    offsets.push_back(offsets.back() + spec.param_count());
    return *this;
  }
};

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

struct LayerCache {
  Mat input;
  Mat mask;                 // relu / dropout
  Mat xhat;                 // layer_norm
  Vec inv_sigma;            // layer_norm, per row
  Mat r, z, n, ghn, hprev;  // gru
  Mat ig, fg, gg, og, tc, cprev;  // lstm (hprev shared)
};

struct ForwardResult {
  Mat output;
  std::vector<LayerCache> caches;
  bool train_mode = false;
};

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Eigen::Map<const Mat> map_mat(const LayerStack& s, int layer, int offset_in_layer,
                                     int rows, int cols) {
  return Eigen::Map<const Mat>(s.params.data() + s.offsets[layer] + offset_in_layer, rows, cols);
}

inline Eigen::Map<const Vec> map_vec(const LayerStack& s, int layer, int offset_in_layer, int n) {
  return Eigen::Map<const Vec>(s.params.data() + s.offsets[layer] + offset_in_layer, n);
}

}  // namespace detail

// initial_hidden: one vector per recurrent layer, in layer order (LSTM cell
// state always starts at zero). Missing or empty entries mean zeros.
inline ForwardResult forward(const LayerStack& stack, const Mat& input, bool train_mode,
                             uint64_t seed = 0,
                             const std::vector<Vec>* initial_hidden = nullptr) {
  if (input.rows() < 1 || input.cols() < 1) throw_config("forward: empty input");
  int want = stack.input_dim();
  if (want > 0 && input.cols() != want)
    throw_config("forward: input has " + std::to_string(input.cols()) + " columns, stack expects " +
                 std::to_string(want));

  Rng dropout_rng = Rng::derived(seed, "dropout");
  size_t recurrent_seen = 0;
  auto h0_for = [&](int hidden) -> Eigen::RowVectorXd {
    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(hidden);
    if (initial_hidden && recurrent_seen < initial_hidden->size() &&
        (*initial_hidden)[recurrent_seen].size() > 0) {
      if ((*initial_hidden)[recurrent_seen].size() != hidden)
        throw_config("forward: initial hidden state size mismatch");
      h = (*initial_hidden)[recurrent_seen].transpose();
    }
    ++recurrent_seen;
    return h;
  };
  ForwardResult res;
  res.train_mode = train_mode;
  res.caches.resize(stack.layers.size());
  Mat x = input;

  for (size_t li = 0; li < stack.layers.size(); ++li) {
    const auto& l = stack.layers[li];
    auto& cache = res.caches[li];
    cache.input = x;
    const int T = static_cast<int>(x.rows());

    switch (l.kind) {
      case LayerKind::affine: {
        auto W = detail::map_mat(stack, static_cast<int>(li), 0, l.in, l.out);
        auto b = detail::map_vec(stack, static_cast<int>(li), l.in * l.out, l.out);
        x = (x * W).rowwise() + b.transpose();
        break;
      }
      case LayerKind::layer_norm: {
        auto gamma = detail::map_vec(stack, static_cast<int>(li), 0, l.in);
        auto beta = detail::map_vec(stack, static_cast<int>(li), l.in, l.in);
        cache.xhat.resize(T, l.in);
        cache.inv_sigma.resize(T);
        for (int t = 0; t < T; ++t) {
          double mu = x.row(t).mean();
          double var = (x.row(t).array() - mu).square().mean();
          double inv = 1.0 / std::sqrt(var + kNormEps);
          cache.inv_sigma[t] = inv;
          cache.xhat.row(t) = (x.row(t).array() - mu) * inv;
        }
        x = (cache.xhat.array().rowwise() * gamma.transpose().array()).rowwise() +
            beta.transpose().array();
        break;
      }
      case LayerKind::relu: {
        cache.mask = (x.array() > 0.0).cast<double>();
        x = x.cwiseProduct(cache.mask);
        break;
      }
      case LayerKind::dropout: {
        if (train_mode) {
          double keep = 1.0 - l.rate;
          cache.mask.resize(x.rows(), x.cols());
          for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j)
              cache.mask(i, j) = (dropout_rng.uniform() < keep) ? 1.0 / keep : 0.0;
          x = x.cwiseProduct(cache.mask);
        }
        break;
      }
      case LayerKind::gru: {
        const int H = l.out;
        auto Wx = detail::map_mat(stack, static_cast<int>(li), 0, l.in, 3 * H);
        auto Wh = detail::map_mat(stack, static_cast<int>(li), l.in * 3 * H, H, 3 * H);
        auto bx = detail::map_vec(stack, static_cast<int>(li), (l.in + H) * 3 * H, 3 * H);
        auto bh = detail::map_vec(stack, static_cast<int>(li), (l.in + H) * 3 * H + 3 * H, 3 * H);
        Mat gx = (x * Wx).rowwise() + bx.transpose();
        cache.r.resize(T, H);
        cache.z.resize(T, H);
        cache.n.resize(T, H);
        cache.ghn.resize(T, H);
        cache.hprev.resize(T, H);
        Mat out(T, H);
        Eigen::RowVectorXd h = h0_for(H);
        for (int t = 0; t < T; ++t) {
          cache.hprev.row(t) = h;
          Eigen::RowVectorXd gh = h * Wh + bh.transpose();
          auto rt = (gx.row(t).head(H) + gh.head(H)).unaryExpr(&detail::sigmoid);
          auto zt = (gx.row(t).segment(H, H) + gh.segment(H, H)).unaryExpr(&detail::sigmoid);
          cache.ghn.row(t) = gh.tail(H);
          cache.r.row(t) = rt;
          cache.z.row(t) = zt;
          cache.n.row(t) = (gx.row(t).tail(H).array() + rt.array() * gh.tail(H).array()).tanh();
          h = (1.0 - zt.array()) * cache.n.row(t).array() + zt.array() * h.array();
          out.row(t) = h;
        }
        x = std::move(out);
        break;
      }
      case LayerKind::lstm: {
        const int H = l.out;
        auto Wx = detail::map_mat(stack, static_cast<int>(li), 0, l.in, 4 * H);
        auto Wh = detail::map_mat(stack, static_cast<int>(li), l.in * 4 * H, H, 4 * H);
        auto bx = detail::map_vec(stack, static_cast<int>(li), (l.in + H) * 4 * H, 4 * H);
        auto bh = detail::map_vec(stack, static_cast<int>(li), (l.in + H) * 4 * H + 4 * H, 4 * H);
        Mat gx = (x * Wx).rowwise() + (bx + bh).transpose();
        cache.ig.resize(T, H);
        cache.fg.resize(T, H);
        cache.gg.resize(T, H);
        cache.og.resize(T, H);
        cache.tc.resize(T, H);
        cache.cprev.resize(T, H);
        cache.hprev.resize(T, H);
        Mat out(T, H);
        Eigen::RowVectorXd h = h0_for(H);
        Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(H);
        for (int t = 0; t < T; ++t) {
          cache.hprev.row(t) = h;
          cache.cprev.row(t) = c;
          Eigen::RowVectorXd a = gx.row(t) + h * Wh;
          auto it = a.head(H).unaryExpr(&detail::sigmoid);
          auto ft = a.segment(H, H).unaryExpr(&detail::sigmoid);
          Eigen::RowVectorXd gt = a.segment(2 * H, H).array().tanh();
          auto ot = a.tail(H).unaryExpr(&detail::sigmoid);
          c = ft.array() * c.array() + it.array() * gt.array();
          cache.ig.row(t) = it;
          cache.fg.row(t) = ft;
          cache.gg.row(t) = gt;
          cache.og.row(t) = ot;
          cache.tc.row(t) = c.array().tanh();
          h = ot.array() * cache.tc.row(t).array();
          out.row(t) = h;
        }
        x = std::move(out);
        break;
      }
    }
  }
  res.output = std::move(x);
  return res;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

struct Gradients {
  Vec params;  // same layout as LayerStack::params
  Mat input;   // dL/d(stack input)
  std::vector<Vec> initial_hidden;  // per recurrent layer, in layer order
};

inline Gradients backward(const LayerStack& stack, const ForwardResult& fwd, const Mat& upstream) {
  if (fwd.caches.size() != stack.layers.size())
    throw_usage("backward: cache does not match stack (missing or stale forward)");
  if (upstream.rows() != fwd.output.rows() || upstream.cols() != fwd.output.cols())
    throw_usage("backward: upstream gradient shape does not match forward output");

  Gradients g;
  g.params = Vec::Zero(stack.param_count());
  std::vector<Vec> h0_grads_reversed;
  Mat d = upstream;

  for (int li = static_cast<int>(stack.layers.size()) - 1; li >= 0; --li) {
    const auto& l = stack.layers[static_cast<size_t>(li)];
    const auto& cache = fwd.caches[static_cast<size_t>(li)];
    double* gp = g.params.data() + stack.offsets[static_cast<size_t>(li)];
    const int T = static_cast<int>(cache.input.rows());

    switch (l.kind) {
      case LayerKind::affine: {
        auto W = detail::map_mat(stack, li, 0, l.in, l.out);
        Eigen::Map<Mat> dW(gp, l.in, l.out);
        Eigen::Map<Vec> db(gp + l.in * l.out, l.out);
        dW = cache.input.transpose() * d;
        db = d.colwise().sum();
        d = d * W.transpose();
        break;
      }
      case LayerKind::layer_norm: {
        auto gamma = detail::map_vec(stack, li, 0, l.in);
        Eigen::Map<Vec> dgamma(gp, l.in);
        Eigen::Map<Vec> dbeta(gp + l.in, l.in);
        dgamma = (d.array() * cache.xhat.array()).colwise().sum();
        dbeta = d.colwise().sum();
        Mat dx(T, l.in);
        for (int t = 0; t < T; ++t) {
          Eigen::ArrayXd gr = d.row(t).transpose().array() * gamma.array();
          double mean_g = gr.mean();
          double mean_gx = (gr * cache.xhat.row(t).transpose().array()).mean();
          dx.row(t) = ((gr - mean_g - cache.xhat.row(t).transpose().array() * mean_gx) *
                       cache.inv_sigma[t])
                          .transpose();
        }
        d = std::move(dx);
        break;
      }
      case LayerKind::relu: {
        d = d.cwiseProduct(cache.mask);
        break;
      }
      case LayerKind::dropout: {
        if (cache.mask.size() > 0) d = d.cwiseProduct(cache.mask);
        break;
      }
      case LayerKind::gru: {
        const int H = l.out;
        auto Wx = detail::map_mat(stack, li, 0, l.in, 3 * H);
        auto Wh = detail::map_mat(stack, li, l.in * 3 * H, H, 3 * H);
        Mat dgx = Mat::Zero(T, 3 * H);
        Mat dgh = Mat::Zero(T, 3 * H);
        Eigen::RowVectorXd dh = Eigen::RowVectorXd::Zero(H);
        for (int t = T - 1; t >= 0; --t) {
          Eigen::ArrayXd dht = (d.row(t) + dh).transpose().array();
          auto rt = cache.r.row(t).transpose().array();
          auto zt = cache.z.row(t).transpose().array();
          auto nt = cache.n.row(t).transpose().array();
          auto hp = cache.hprev.row(t).transpose().array();
          auto ghn = cache.ghn.row(t).transpose().array();
          Eigen::ArrayXd dz_pre = dht * (hp - nt) * zt * (1.0 - zt);
          Eigen::ArrayXd dn_pre = dht * (1.0 - zt) * (1.0 - nt.square());
          Eigen::ArrayXd dr_pre = dn_pre * ghn * rt * (1.0 - rt);
          dgx.row(t).head(H) = dr_pre.transpose();
          dgx.row(t).segment(H, H) = dz_pre.transpose();
          dgx.row(t).tail(H) = dn_pre.transpose();
          dgh.row(t).head(H) = dr_pre.transpose();
          dgh.row(t).segment(H, H) = dz_pre.transpose();
          dgh.row(t).tail(H) = (dn_pre * rt).transpose();
          dh = (dht * zt).matrix().transpose() + dgh.row(t) * Wh.transpose();
        }
        Eigen::Map<Mat> dWx(gp, l.in, 3 * H);
        Eigen::Map<Mat> dWh(gp + l.in * 3 * H, H, 3 * H);
        Eigen::Map<Vec> dbx(gp + (l.in + H) * 3 * H, 3 * H);
        Eigen::Map<Vec> dbh(gp + (l.in + H) * 3 * H + 3 * H, 3 * H);
        dWx = cache.input.transpose() * dgx;
        dWh = cache.hprev.transpose() * dgh;
        dbx = dgx.colwise().sum();
        dbh = dgh.colwise().sum();
        h0_grads_reversed.push_back(dh.transpose());
        d = dgx * Wx.transpose();
        break;
      }
      case LayerKind::lstm: {
        const int H = l.out;
        auto Wx = detail::map_mat(stack, li, 0, l.in, 4 * H);
        auto Wh = detail::map_mat(stack, li, l.in * 4 * H, H, 4 * H);
        Mat da = Mat::Zero(T, 4 * H);
        Eigen::RowVectorXd dh = Eigen::RowVectorXd::Zero(H);
        Eigen::ArrayXd dc = Eigen::ArrayXd::Zero(H);
        for (int t = T - 1; t >= 0; --t) {
          Eigen::ArrayXd dht = (d.row(t) + dh).transpose().array();
          auto it = cache.ig.row(t).transpose().array();
          auto ft = cache.fg.row(t).transpose().array();
          auto gt = cache.gg.row(t).transpose().array();
          auto ot = cache.og.row(t).transpose().array();
          auto tc = cache.tc.row(t).transpose().array();
          auto cp = cache.cprev.row(t).transpose().array();
          Eigen::ArrayXd do_pre = dht * tc * ot * (1.0 - ot);
          dc += dht * ot * (1.0 - tc.square());
          Eigen::ArrayXd df_pre = dc * cp * ft * (1.0 - ft);
          Eigen::ArrayXd di_pre = dc * gt * it * (1.0 - it);
          Eigen::ArrayXd dg_pre = dc * it * (1.0 - gt.square());
          dc *= ft;
          da.row(t).head(H) = di_pre.transpose();
          da.row(t).segment(H, H) = df_pre.transpose();
          da.row(t).segment(2 * H, H) = dg_pre.transpose();
          da.row(t).tail(H) = do_pre.transpose();
          dh = da.row(t) * Wh.transpose();
        }
        Eigen::Map<Mat> dWx(gp, l.in, 4 * H);
        Eigen::Map<Mat> dWh(gp + l.in * 4 * H, H, 4 * H);
        Eigen::Map<Vec> dbx(gp + (l.in + H) * 4 * H, 4 * H);
        Eigen::Map<Vec> dbh(gp + (l.in + H) * 4 * H + 4 * H, 4 * H);
        dWx = cache.input.transpose() * da;
        dWh = cache.hprev.transpose() * da;
        dbx = da.colwise().sum();
        dbh = dbx;
        h0_grads_reversed.push_back(dh.transpose());
        d = da * Wx.transpose();
        break;
      }
    }
  }
  g.input = std::move(d);
  g.initial_hidden.assign(h0_grads_reversed.rbegin(), h0_grads_reversed.rend());
  return g;
}

// ---------------------------------------------------------------------------
// Losses (frame-wise matrices: mean over rows of the per-row norm)
// ---------------------------------------------------------------------------

enum class LossKind { mse, mae };

inline double loss_value(LossKind kind, const Mat& out, const Mat& target) {
  if (out.rows() != target.rows() || out.cols() != target.cols())
    throw_usage("loss: output/target shape mismatch");
  Mat diff = out - target;
  if (kind == LossKind::mse) return diff.array().square().rowwise().sum().mean();
  return diff.array().abs().rowwise().sum().mean();
}

inline Mat loss_grad(LossKind kind, const Mat& out, const Mat& target) {
  Mat diff = out - target;
  double inv_rows = 1.0 / static_cast<double>(out.rows());
  if (kind == LossKind::mse) return 2.0 * inv_rows * diff;
  return inv_rows * diff.array().sign().matrix();
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  Vec m, v;
  uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_stack(const LayerStack& stack, double lr) {
    AdamState s;
    s.m = Vec::Zero(stack.param_count());
    s.v = Vec::Zero(stack.param_count());
    s.lr = lr;
    return s;
  }
};

inline void adam_step(LayerStack& stack, const Vec& grads, AdamState& state) {
  if (grads.size() != stack.params.size() || state.m.size() != stack.params.size())
    throw_usage("adam_step: gradient/state size does not match parameters");
  if (!all_finite(grads)) {
    for (size_t li = 0; li < stack.layers.size(); ++li) {
      if (!grads.segment(stack.offsets[li], stack.layer_size(static_cast<int>(li))).allFinite())
        throw_training("non-finite gradient in layer " + stack.layer_name(static_cast<int>(li)));
    }
    throw_training("non-finite gradient");
  }
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  Vec mhat = state.m / c1;
  Vec vhat = state.v / c2;
  stack.params -=
      state.lr * mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() + Vec::Constant(vhat.size(), state.epsilon));
}

// Scales each gradient in place so the combined L2 norm is at most max_norm.
// Returns the factor applied.
inline double clip_global_norm(const std::vector<Vec*>& grads, double max_norm) {
  double sq = 0.0;
  for (const Vec* g : grads) sq += g->squaredNorm();
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  double factor = max_norm / norm;
  for (Vec* g : grads) *g *= factor;
  return factor;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckLayer {
  std::string layer;
  double max_rel_err = 0.0;
  int checked = 0;
  bool pass = true;
  bool skipped = false;
  std::string note;
};

struct GradCheckReport {
  std::vector<GradCheckLayer> layers;
  double max_rel_err = 0.0;
  bool pass = true;
};

// Central-difference check of backward() on every parameter (random subsample
// above max_checked). Dropout layers under train_mode are reported as
// non-checkable rather than failed.
inline GradCheckReport grad_check(LayerStack& stack, LossKind loss, const Mat& input,
                                  const Mat& target, double step, double tolerance,
                                  bool train_mode = false, uint64_t seed = 0,
                                  int max_checked = 10000) {
  if (step <= 0.0) throw_usage("grad_check: step must be positive");
  GradCheckReport report;

  auto fwd = forward(stack, input, train_mode, seed);
  auto analytic = backward(stack, fwd, loss_grad(loss, fwd.output, target));
  auto loss_at = [&]() {
    auto f = forward(stack, input, train_mode, seed);
    return loss_value(loss, f.output, target);
  };

  std::vector<int> indices;
  std::vector<int> index_layer;
  for (size_t li = 0; li < stack.layers.size(); ++li) {
    const auto& l = stack.layers[li];
    if (l.kind == LayerKind::dropout && train_mode) {
      GradCheckLayer e;
      e.layer = stack.layer_name(static_cast<int>(li));
      e.skipped = true;
      e.note = "non-checkable (stochastic)";
      report.layers.push_back(e);
      continue;
    }
    if (l.param_count() == 0) continue;
    GradCheckLayer e;
    e.layer = stack.layer_name(static_cast<int>(li));
    report.layers.push_back(e);
    for (int k = stack.offsets[li]; k < stack.offsets[li + 1]; ++k) {
      indices.push_back(k);
      index_layer.push_back(static_cast<int>(report.layers.size()) - 1);
    }
  }

  if (static_cast<int>(indices.size()) > max_checked) {
    Rng rng = Rng::derived(seed, "grad_check_subsample");
    for (int i = 0; i < max_checked; ++i) {
      auto j = static_cast<size_t>(rng.uniform_int(i, static_cast<int64_t>(indices.size()) - 1));
      std::swap(indices[static_cast<size_t>(i)], indices[j]);
      std::swap(index_layer[static_cast<size_t>(i)], index_layer[j]);
    }
    indices.resize(static_cast<size_t>(max_checked));
    index_layer.resize(static_cast<size_t>(max_checked));
  }

  for (size_t i = 0; i < indices.size(); ++i) {
    int k = indices[i];
    double saved = stack.params[k];
    stack.params[k] = saved + step;
    double up = loss_at();
    stack.params[k] = saved - step;
    double down = loss_at();
    stack.params[k] = saved;
    double numeric = (up - down) / (2.0 * step);
    double a = analytic.params[k];
    double mag = std::max(std::abs(a), std::abs(numeric));
    double err = (mag < 1e-8) ? 0.0 : std::abs(a - numeric) / std::max(mag, 1e-4);
    auto& entry = report.layers[static_cast<size_t>(index_layer[i])];
    entry.checked += 1;
    entry.max_rel_err = std::max(entry.max_rel_err, err);
  }

  for (auto& e : report.layers) {
    if (e.skipped) continue;
    e.pass = e.max_rel_err <= tolerance;
    report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    report.pass = report.pass && e.pass;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Stack signatures and checkpoints
// ---------------------------------------------------------------------------

inline std::string stack_signature(const LayerStack& stack) {
  std::string sig;
  for (size_t i = 0; i < stack.layers.size(); ++i) {
    if (i) sig += "|";
    sig += stack.layers[i].name();
  }
  return sig;
}

inline LayerStack parse_stack(const std::string& signature) {
  LayerStack stack;
  size_t pos = 0;
  while (pos <= signature.size()) {
    size_t bar = signature.find('|', pos);
    std::string tok = signature.substr(pos, bar == std::string::npos ? bar : bar - pos);
    pos = (bar == std::string::npos) ? signature.size() + 1 : bar + 1;
    if (tok.empty()) continue;
    auto args = [&](const char* head) {
      size_t open = tok.find('(');
      std::vector<double> out;
      if (open == std::string::npos) throw_format(std::string("bad layer token: ") + tok);
      std::string inner = tok.substr(open + 1, tok.size() - open - 2);
      std::stringstream ss(inner);
      std::string field;
      while (std::getline(ss, field, ',')) out.push_back(std::stod(field));
      if (out.empty()) throw_format(std::string("bad args for ") + head + ": " + tok);
      return out;
    };
    if (tok.rfind("affine", 0) == 0) {
      auto a = args("affine");
      stack.affine(static_cast<int>(a.at(0)), static_cast<int>(a.at(1)));
    } else if (tok.rfind("layer_norm", 0) == 0) {
      stack.layer_norm(static_cast<int>(args("layer_norm").at(0)));
    } else if (tok == "relu") {
      stack.relu();
    } else if (tok.rfind("dropout", 0) == 0) {
      stack.dropout(args("dropout").at(0));
    } else if (tok.rfind("gru", 0) == 0) {
      auto a = args("gru");
      stack.gru(static_cast<int>(a.at(0)), static_cast<int>(a.at(1)));
    } else if (tok.rfind("lstm", 0) == 0) {
      auto a = args("lstm");
      stack.lstm(static_cast<int>(a.at(0)), static_cast<int>(a.at(1)));
    } else {
      throw_format("unknown layer token: " + tok);
    }
  }
  stack.init_params_zero();
  return stack;
}

inline constexpr uint16_t kCheckpointVersion = 1;

// Checkpoint file: magic "AWEF", version u16, descriptor (length-prefixed
// UTF-8), parameter count u64, parameters as little-endian f32.
inline void save_checkpoint(const std::string& path, const std::string& descriptor,
                            const std::vector<const LayerStack*>& stacks) {
  auto os = io::open_out(path);
  io::write_magic(os, "AWEF");
  io::write_le<uint16_t>(os, kCheckpointVersion);
  io::write_string(os, descriptor);
  uint64_t count = 0;
  for (const auto* s : stacks) count += static_cast<uint64_t>(s->param_count());
  io::write_le<uint64_t>(os, count);
  for (const auto* s : stacks)
    for (int i = 0; i < s->param_count(); ++i)
      io::write_le<float>(os, static_cast<float>(s->params[i]));
}

struct Checkpoint {
  std::string descriptor;
  std::vector<float> params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, "AWEF", "checkpoint");
  auto version = io::read_le<uint16_t>(is, "checkpoint version");
  if (version != kCheckpointVersion)
    throw_format("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.descriptor = io::read_string(is, "checkpoint descriptor");
  auto count = io::read_le<uint64_t>(is, "checkpoint parameter count");
  ckpt.params.resize(count);
  for (uint64_t i = 0; i < count; ++i) ckpt.params[i] = io::read_le<float>(is, "checkpoint parameters");
  return ckpt;
}

inline void assign_params(const Checkpoint& ckpt, const std::vector<LayerStack*>& stacks) {
  uint64_t need = 0;
  for (const auto* s : stacks) need += static_cast<uint64_t>(s->param_count());
  if (need != ckpt.params.size())
    throw_format("checkpoint holds " + std::to_string(ckpt.params.size()) + " parameters, model needs " +
                 std::to_string(need));
  size_t pos = 0;
  for (auto* s : stacks) {
    if (s->params.size() != s->param_count()) s->init_params_zero();
    for (int i = 0; i < s->param_count(); ++i) s->params[i] = static_cast<double>(ckpt.params[pos++]);
  }
}

}  // namespace awe::nn

#endif  // AWE_NN_HPP_
