#pragma once

#include <cmath>

#include "pasnet/tape.hpp"

// Generic differentiable ops shared across modules. Module-specific ops
// (LIF scans, masked spatiotemporal conv, T-BN, pooling, loss) live with
// their owning module headers.

namespace pasnet {

inline Var add(Tape& tp, Var a, Var b) {
  const Tensor& A = tp.val(a);
  const Tensor& B = tp.val(b);
  require(A.same_shape(B), "add: shape mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return tp.record(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var mul(Tape& tp, Var a, Var b) {
  const Tensor& A = tp.val(a);
  const Tensor& B = tp.val(b);
  require(A.same_shape(B), "mul: shape mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return tp.record(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& A2 = t.val(a);
    const Tensor& B2 = t.val(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * B2[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * A2[i];
    }
  });
}

inline Var scale(Tape& tp, Var a, double s) {
  Tensor out = tp.val(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return tp.record(std::move(out), {a}, [a, s](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g[i];
  });
}

inline Var sum(Tape& tp, Var a) {
  Tensor out = Tensor::scalar(tp.val(a).sum());
  return tp.record(std::move(out), {a}, [a](Tape& t, Var self) {
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

inline Var sigmoid(Tape& tp, Var a) {
  Tensor out = tp.val(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return tp.record(std::move(out), {a}, [a](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.val(self);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

// Per-node channel mixing on [B,T,C,V] streams: a 1D convolution with
// kernel size 1. weight [Cout,Cin], bias [Cout].
inline Var channel_conv(Tape& tp, Var x, Var weight, Var bias) {
  const Tensor& X = tp.val(x);
  const Tensor& W = tp.val(weight);
  const Tensor& Bv = tp.val(bias);
  require(X.rank() == 4, "channel_conv: expected [B,T,C,V] input");
  require(W.rank() == 2, "channel_conv: expected [Cout,Cin] weight");
  const std::size_t B = X.dim(0), T = X.dim(1), Ci = X.dim(2), V = X.dim(3);
  const std::size_t Co = W.dim(0);
  require(W.dim(1) == Ci, "channel_conv: weight/input channel mismatch");
  require(Bv.size() == Co, "channel_conv: bias size mismatch");

  Tensor out({B, T, Co, V});
  const double* xd = X.data();
  const double* wd = W.data();
  double* od = out.data();
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    const double* xs = xd + bt * Ci * V;
    double* os = od + bt * Co * V;
    for (std::size_t o = 0; o < Co; ++o) {
      const double* wrow = wd + o * Ci;
      double* orow = os + o * V;
      for (std::size_t v = 0; v < V; ++v) orow[v] = Bv[o];
      for (std::size_t i = 0; i < Ci; ++i) {
        const double w = wrow[i];
        if (w == 0.0) continue;
        const double* xrow = xs + i * V;
        for (std::size_t v = 0; v < V; ++v) orow[v] += w * xrow[v];
      }
    }
  }
  return tp.record(std::move(out), {x, weight, bias},
                   [x, weight, bias, B, T, Ci, Co, V](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& X2 = t.val(x);
    const Tensor& W2 = t.val(weight);
    const bool need_x = t.requires_grad(x);
    if (t.requires_grad(weight)) {
      Tensor& gw = t.grad_buffer(weight);
      for (std::size_t bt = 0; bt < B * T; ++bt) {
        const double* xs = X2.data() + bt * Ci * V;
        const double* gs = g.data() + bt * Co * V;
        for (std::size_t o = 0; o < Co; ++o) {
          const double* grow = gs + o * V;
          double* gwrow = gw.data() + o * Ci;
          for (std::size_t i = 0; i < Ci; ++i) {
            const double* xrow = xs + i * V;
            double acc = 0.0;
            for (std::size_t v = 0; v < V; ++v) acc += grow[v] * xrow[v];
            gwrow[i] += acc;
          }
        }
      }
    }
    if (t.requires_grad(bias)) {
      Tensor& gb = t.grad_buffer(bias);
      for (std::size_t bt = 0; bt < B * T; ++bt) {
        const double* gs = g.data() + bt * Co * V;
        for (std::size_t o = 0; o < Co; ++o) {
          const double* grow = gs + o * V;
          for (std::size_t v = 0; v < V; ++v) gb[o] += grow[v];
        }
      }
    }
    if (need_x) {
      Tensor& gx = t.grad_buffer(x);
      for (std::size_t bt = 0; bt < B * T; ++bt) {
        double* gxs = gx.data() + bt * Ci * V;
        const double* gs = g.data() + bt * Co * V;
        for (std::size_t o = 0; o < Co; ++o) {
          const double* grow = gs + o * V;
          const double* wrow = W2.data() + o * Ci;
          for (std::size_t i = 0; i < Ci; ++i) {
            const double w = wrow[i];
            if (w == 0.0) continue;
            double* gxrow = gxs + i * V;
            for (std::size_t v = 0; v < V; ++v) gxrow[v] += w * grow[v];
          }
        }
      }
    }
  });
}

// Linear map applied per time step on [B,T,C]: out[b,t,k] = W[k,:]·x[b,t,:] + bias[k].
inline Var linear(Tape& tp, Var x, Var weight, Var bias) {
  const Tensor& X = tp.val(x);
  const Tensor& W = tp.val(weight);
  const Tensor& Bv = tp.val(bias);
  require(X.rank() == 3, "linear: expected [B,T,C] input");
  const std::size_t B = X.dim(0), T = X.dim(1), C = X.dim(2);
  const std::size_t K = W.dim(0);
  require(W.rank() == 2 && W.dim(1) == C, "linear: weight shape mismatch");
  require(Bv.size() == K, "linear: bias size mismatch");

  Tensor out({B, T, K});
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    const double* xs = X.data() + bt * C;
    double* os = out.data() + bt * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double* wrow = W.data() + k * C;
      double acc = Bv[k];
      for (std::size_t c = 0; c < C; ++c) acc += wrow[c] * xs[c];
      os[k] = acc;
    }
  }
  return tp.record(std::move(out), {x, weight, bias},
                   [x, weight, bias, B, T, C, K](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& X2 = t.val(x);
    const Tensor& W2 = t.val(weight);
    if (t.requires_grad(weight)) {
      Tensor& gw = t.grad_buffer(weight);
      for (std::size_t bt = 0; bt < B * T; ++bt) {
        const double* xs = X2.data() + bt * C;
        const double* gs = g.data() + bt * K;
        for (std::size_t k = 0; k < K; ++k) {
          double* gwrow = gw.data() + k * C;
          const double gk = gs[k];
          if (gk == 0.0) continue;
          for (std::size_t c = 0; c < C; ++c) gwrow[c] += gk * xs[c];
        }
      }
    }
    if (t.requires_grad(bias)) {
      Tensor& gb = t.grad_buffer(bias);
      for (std::size_t bt = 0; bt < B * T; ++bt) {
        const double* gs = g.data() + bt * K;
        for (std::size_t k = 0; k < K; ++k) gb[k] += gs[k];
      }
    }
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad_buffer(x);
      for (std::size_t bt = 0; bt < B * T; ++bt) {
        double* gxs = gx.data() + bt * C;
        const double* gs = g.data() + bt * K;
        for (std::size_t k = 0; k < K; ++k) {
          const double gk = gs[k];
          if (gk == 0.0) continue;
          const double* wrow = W2.data() + k * C;
          for (std::size_t c = 0; c < C; ++c) gxs[c] += gk * wrow[c];
        }
      }
    }
  });
}

// Mean over the channel axis of [B,T,C,V], keeping a singleton channel.
inline Var channel_mean(Tape& tp, Var x) {
  const Tensor& X = tp.val(x);
  require(X.rank() == 4, "channel_mean: expected [B,T,C,V]");
  const std::size_t B = X.dim(0), T = X.dim(1), C = X.dim(2), V = X.dim(3);
  Tensor out({B, T, 1, V});
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    const double* xs = X.data() + bt * C * V;
    double* os = out.data() + bt * V;
    for (std::size_t v = 0; v < V; ++v) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) acc += xs[c * V + v];
      os[v] = acc / static_cast<double>(C);
    }
  }
  return tp.record(std::move(out), {x}, [x, B, T, C, V](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x);
    const double inv = 1.0 / static_cast<double>(C);
    for (std::size_t bt = 0; bt < B * T; ++bt) {
      const double* gs = g.data() + bt * V;
      double* gxs = gx.data() + bt * C * V;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t v = 0; v < V; ++v) gxs[c * V + v] += gs[v] * inv;
    }
  });
}

// Broadcast a singleton channel of [B,T,1,V] across C channels.
inline Var channel_broadcast(Tape& tp, Var x, std::size_t channels) {
  const Tensor& X = tp.val(x);
  require(X.rank() == 4 && X.dim(2) == 1, "channel_broadcast: expected [B,T,1,V]");
  const std::size_t B = X.dim(0), T = X.dim(1), V = X.dim(3);
  Tensor out({B, T, channels, V});
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    const double* xs = X.data() + bt * V;
    double* os = out.data() + bt * channels * V;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t v = 0; v < V; ++v) os[c * V + v] = xs[v];
  }
  return tp.record(std::move(out), {x}, [x, B, T, channels, V](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t bt = 0; bt < B * T; ++bt) {
      const double* gs = g.data() + bt * channels * V;
      double* gxs = gx.data() + bt * V;
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t v = 0; v < V; ++v) gxs[v] += gs[c * V + v];
    }
  });
}

}  // namespace pasnet
