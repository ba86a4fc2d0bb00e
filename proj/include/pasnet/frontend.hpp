#pragma once

#include <cmath>
#include <utility>

#include "pasnet/neurons.hpp"
#include "pasnet/ops.hpp"
#include "pasnet/tensor.hpp"

namespace pasnet {

// One raw IMU window: [T, C_in, V] in sensor units.
struct RawWindow {
  Tensor data;
  int label = -1;
  double sample_rate = 100.0;

  std::size_t steps() const { return data.dim(0); }
  std::size_t channels() const { return data.dim(1); }
  std::size_t nodes() const { return data.dim(2); }
};

// Condensed continuous token stream: [T', C_tok, V].
struct TokenTensor {
  Tensor data;

  std::size_t steps() const { return data.dim(0); }
  std::size_t channels() const { return data.dim(1); }
  std::size_t nodes() const { return data.dim(2); }
};

// Token channel count for a given input channel count: per-channel
// {mean,max,var} blocks plus per-triad magnitude {mean,max,var} blocks.
inline std::size_t token_channels(std::size_t c_in) {
  require(c_in >= 3 && c_in % 3 == 0,
          "tokenizer requires channels grouped in xyz triads (C_in divisible by 3)");
  return 3 * c_in + 3 * (c_in / 3);
}

// Condenses a raw window into statistical tokens over non-overlapping
// patches of length `stride`. Output channel layout, in order: channel
// means [C_in], channel maxes [C_in], channel variances [C_in], then the
// same three statistics of the per-triad L2 magnitude [C_in/3 each].
// Variances are population variances (divide by patch length).
inline TokenTensor tokenize(const RawWindow& window, std::size_t stride) {
  const Tensor& x = window.data;
  require(x.rank() == 3, "tokenize: expected [T,C,V] window");
  const std::size_t T = x.dim(0), C = x.dim(1), V = x.dim(2);
  const std::size_t c_tok = token_channels(C);
  require(stride >= 1 && T >= stride, "tokenize: window shorter than stride");
  if (!x.all_finite()) throw InputError("tokenize: non-finite values in window");

  const std::size_t triads = C / 3;
  const std::size_t t_out = T / stride;
  Tensor n({t_out, c_tok, V});
  for (std::size_t p = 0; p < t_out; ++p) {
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t c = 0; c < C; ++c) {
        double sum = 0.0, sq = 0.0, mx = -1e300;
        for (std::size_t j = 0; j < stride; ++j) {
          const double val = x.at3(p * stride + j, c, v);
          sum += val;
          sq += val * val;
          mx = std::max(mx, val);
        }
        const double mean = sum / static_cast<double>(stride);
        const double var = sq / static_cast<double>(stride) - mean * mean;
        n.at3(p, c, v) = mean;
        n.at3(p, C + c, v) = mx;
        n.at3(p, 2 * C + c, v) = var < 0.0 ? 0.0 : var;
      }
      for (std::size_t g = 0; g < triads; ++g) {
        double sum = 0.0, sq = 0.0, mx = -1e300;
        for (std::size_t j = 0; j < stride; ++j) {
          const std::size_t t = p * stride + j;
          const double ax = x.at3(t, 3 * g, v);
          const double ay = x.at3(t, 3 * g + 1, v);
          const double az = x.at3(t, 3 * g + 2, v);
          const double mag = std::sqrt(ax * ax + ay * ay + az * az);
          sum += mag;
          sq += mag * mag;
          mx = std::max(mx, mag);
        }
        const double mean = sum / static_cast<double>(stride);
        const double var = sq / static_cast<double>(stride) - mean * mean;
        n.at3(p, 3 * C + g, v) = mean;
        n.at3(p, 3 * C + triads + g, v) = mx;
        n.at3(p, 3 * C + 2 * triads + g, v) = var < 0.0 ? 0.0 : var;
      }
    }
  }
  return TokenTensor{std::move(n)};
}

// Temporal-aware batch normalization parameters. Statistics pool jointly
// over batch, time, and node dimensions, per channel.
struct TbnParams {
  enum class Mode { kTraining, kFrozen };

  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  Mode mode = Mode::kTraining;

  static TbnParams init(std::size_t channels, double eps = 1e-5, double momentum = 0.1) {
    TbnParams p;
    p.gamma = Tensor::full({channels}, 1.0);
    p.beta = Tensor::zeros({channels});
    p.running_mean = Tensor::zeros({channels});
    p.running_var = Tensor::full({channels}, 1.0);
    p.eps = eps;
    p.momentum = momentum;
    return p;
  }

  std::size_t channels() const { return gamma.size(); }

  void validate() const {
    require(eps > 0.0, "TbnParams: eps must be positive");
    require(momentum > 0.0 && momentum < 1.0, "TbnParams: momentum must be in (0,1)");
    for (std::size_t i = 0; i < running_var.size(); ++i)
      require(running_var[i] >= 0.0, "TbnParams: running_var must be nonnegative");
  }
};

namespace detail {

// Per-channel mean/var of [B,T,C,V] pooled over B, T, V.
inline void tbn_batch_stats(const Tensor& x, Tensor& mean, Tensor& var) {
  const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2), V = x.dim(3);
  mean = Tensor::zeros({C});
  var = Tensor::zeros({C});
  const double n = static_cast<double>(B * T * V);
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    const double* xs = x.data() + bt * C * V;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t v = 0; v < V; ++v) mean[c] += xs[c * V + v];
  }
  for (std::size_t c = 0; c < C; ++c) mean[c] /= n;
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    const double* xs = x.data() + bt * C * V;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t v = 0; v < V; ++v) {
        const double d = xs[c * V + v] - mean[c];
        var[c] += d * d;
      }
  }
  for (std::size_t c = 0; c < C; ++c) var[c] /= n;
}

}  // namespace detail

// Plain (non-tape) T-BN forward on [B,T,C,V] or [T,C,V]. In training mode
// batch statistics are used and the running statistics advance by EMA; in
// frozen mode the running statistics are used.
inline Tensor tbn_forward(const Tensor& x_in, TbnParams& p) {
  p.validate();
  Tensor x = x_in;
  const bool unbatched = x.rank() == 3;
  require(x.rank() == 4 || unbatched, "tbn_forward: expected [B,T,C,V] or [T,C,V]");
  if (!x.all_finite()) throw InputError("tbn_forward: non-finite input");
  const std::vector<std::size_t> orig = x.shape();
  if (unbatched) x = Tensor({1, orig[0], orig[1], orig[2]}, std::vector<double>(x.data(), x.data() + x.size()));
  const std::size_t C = x.dim(2);
  require(C == p.channels(), "tbn_forward: channel mismatch");

  Tensor mean, var;
  if (p.mode == TbnParams::Mode::kTraining) {
    detail::tbn_batch_stats(x, mean, var);
    for (std::size_t c = 0; c < C; ++c) {
      p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean[c];
      p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * var[c];
    }
  } else {
    mean = p.running_mean;
    var = p.running_var;
  }
  const std::size_t BT = x.dim(0) * x.dim(1), V = x.dim(3);
  Tensor out = x;
  // Numerator-first form: a constant channel maps to beta exactly.
  for (std::size_t c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(var[c] + p.eps);
    const double sc = p.gamma[c] * inv;
    for (std::size_t bt = 0; bt < BT; ++bt) {
      double* row = out.data() + bt * C * V + c * V;
      for (std::size_t v = 0; v < V; ++v) row[v] = sc * (row[v] - mean[c]) + p.beta[c];
    }
  }
  if (unbatched) return Tensor(orig, std::vector<double>(out.data(), out.data() + out.size()));
  return out;
}

// Tape op for T-BN on [B,T,C,V]. Training mode normalizes with batch
// statistics and advances `p`'s running statistics as a side effect.
inline Var tbn(Tape& tp, Var x, Var gamma, Var beta, TbnParams& p, bool training) {
  p.validate();
  const Tensor& X = tp.val(x);
  require(X.rank() == 4, "tbn: expected [B,T,C,V]");
  const std::size_t B = X.dim(0), T = X.dim(1), C = X.dim(2), V = X.dim(3);
  require(C == p.channels(), "tbn: channel mismatch");
  const Tensor& G = tp.val(gamma);
  const Tensor& Bt = tp.val(beta);
  require(G.size() == C && Bt.size() == C, "tbn: parameter size mismatch");

  Tensor mean, var;
  if (training) {
    detail::tbn_batch_stats(X, mean, var);
    for (std::size_t c = 0; c < C; ++c) {
      p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean[c];
      p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * var[c];
    }
  } else {
    mean = p.running_mean;
    var = p.running_var;
  }

  Tensor inv_std({C});
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + p.eps);

  Tensor out(X.shape());
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    const double* xs = X.data() + bt * C * V;
    double* os = out.data() + bt * C * V;
    for (std::size_t c = 0; c < C; ++c) {
      const double sc = G[c] * inv_std[c];
      for (std::size_t v = 0; v < V; ++v)
        os[c * V + v] = sc * (xs[c * V + v] - mean[c]) + Bt[c];
    }
  }

  return tp.record(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, training, mean = std::move(mean),
                    inv_std = std::move(inv_std), B, T, C, V](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& X2 = t.val(x);
    const Tensor& G2 = t.val(gamma);
    const double n = static_cast<double>(B * T * V);

    // Per-channel reductions: sum(g) and sum(g * xhat).
    Tensor sum_g = Tensor::zeros({C}), sum_gx = Tensor::zeros({C});
    for (std::size_t bt = 0; bt < B * T; ++bt) {
      const double* xs = X2.data() + bt * C * V;
      const double* gs = g.data() + bt * C * V;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t v = 0; v < V; ++v) {
          const double xhat = (xs[c * V + v] - mean[c]) * inv_std[c];
          sum_g[c] += gs[c * V + v];
          sum_gx[c] += gs[c * V + v] * xhat;
        }
    }
    if (t.requires_grad(gamma)) {
      Tensor& gg = t.grad_buffer(gamma);
      for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
    }
    if (t.requires_grad(beta)) {
      Tensor& gb = t.grad_buffer(beta);
      for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
    }
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad_buffer(x);
      for (std::size_t bt = 0; bt < B * T; ++bt) {
        const double* xs = X2.data() + bt * C * V;
        const double* gs = g.data() + bt * C * V;
        double* gxs = gx.data() + bt * C * V;
        for (std::size_t c = 0; c < C; ++c) {
          const double a = G2[c] * inv_std[c];
          for (std::size_t v = 0; v < V; ++v) {
            const std::size_t i = c * V + v;
            if (training) {
              const double xhat = (xs[i] - mean[c]) * inv_std[c];
              gxs[i] += a * (gs[i] - sum_g[c] / n - xhat * sum_gx[c] / n);
            } else {
              gxs[i] += a * gs[i];
            }
          }
        }
      }
    }
  });
}

// Folds a frozen T-BN into the preceding convolution. The weight tensor may
// have any rank as long as axis 0 indexes output channels. For any input,
// conv-then-TBN equals the folded conv.
inline std::pair<Tensor, Tensor> fold_tbn_into_conv(const Tensor& conv_w,
                                                    const Tensor& conv_b,
                                                    const TbnParams& p) {
  if (p.mode != TbnParams::Mode::kFrozen)
    throw StateError("fold_tbn_into_conv: T-BN must be frozen");
  const std::size_t Co = conv_w.dim(0);
  require(conv_b.size() == Co && p.channels() == Co, "fold_tbn_into_conv: shape mismatch");
  const std::size_t fan = conv_w.size() / Co;
  Tensor w = conv_w;
  Tensor b = conv_b;
  for (std::size_t o = 0; o < Co; ++o) {
    const double denom = p.running_var[o] + p.eps;
    if (denom <= 0.0) throw StateError("fold_tbn_into_conv: running_var + eps must be positive");
    const double scale = p.gamma[o] / std::sqrt(denom);
    const double shift = p.beta[o] - scale * p.running_mean[o];
    for (std::size_t i = 0; i < fan; ++i) w[o * fan + i] *= scale;
    b[o] = scale * conv_b[o] + shift;
  }
  return {std::move(w), std::move(b)};
}

// Stem: channel projection per node, T-BN, then LIF integration into binary
// spikes. The stem neuron is the dynamic variant with a constant gate of 1
// (threshold u_base); `self_gate_alpha` enables the experimental stem EMA
// gate driven by the stem's own previous spikes.
inline Var spiking_embed(Tape& tp, Var tokens, Var w, Var b, Var gamma, Var beta,
                         TbnParams& bn, const LifConfig& lif_cfg, bool training,
                         SpikeMode mode = SpikeMode::kHard, Var self_gate_alpha = Var{}) {
  Var projected = channel_conv(tp, tokens, w, b);
  Var normed = tbn(tp, projected, gamma, beta, bn, training);
  LifConfig stem_cfg = lif_cfg;
  stem_cfg.gated = false;
  return lif_scan(tp, normed, Var{}, stem_cfg, mode, self_gate_alpha);
}

}  // namespace pasnet
