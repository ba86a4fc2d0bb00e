#pragma once

#include <cmath>
#include <utility>

#include "pasnet/ops.hpp"
#include "pasnet/tape.hpp"
#include "pasnet/tensor.hpp"

namespace pasnet {

// Binary activation stream, the inter-block currency. Wraps a tensor whose
// elements are exactly 0 or 1.
struct SpikeTensor {
  Tensor data;

  SpikeTensor() = default;
  explicit SpikeTensor(Tensor d) : data(std::move(d)) {
    if (!data.is_binary()) throw InputError("SpikeTensor: values must be exactly 0 or 1");
  }
};

enum class SurrogateKind { kRectangular, kArctan };

// Pseudo-derivative of the Heaviside step used on the backward pass.
// Both kinds integrate to 1 over their support and peak at 1/(2*width).
inline double surrogate_value(double u_minus_th, SurrogateKind kind, double width) {
  switch (kind) {
    case SurrogateKind::kRectangular:
      return std::fabs(u_minus_th) <= width ? 1.0 / (2.0 * width) : 0.0;
    case SurrogateKind::kArctan: {
      const double z = 3.14159265358979323846 * u_minus_th / (2.0 * width);
      return 1.0 / (2.0 * width * (1.0 + z * z));
    }
  }
  return 0.0;
}

struct LifConfig {
  double tau = 0.5;     // leak factor, in (0,1)
  double u_base = 1.0;  // baseline threshold, > 0
  SurrogateKind surrogate = SurrogateKind::kRectangular;
  double surrogate_width = 0.5;
  bool gated = false;         // dynamic threshold driven by an EMA gate
  double gate_alpha = 0.9;    // EMA decay, in (0,1); learnable upstream
  bool gate_pool_channels = false;  // pool the gate over channels before use
  // BPTT truncation window for the recurrent scans: gradients stop flowing
  // across segment boundaries every `bptt_truncation` steps. 0 = full BPTT.
  std::size_t bptt_truncation = 0;

  void validate() const {
    require(tau > 0.0 && tau < 1.0, "LifConfig: tau must be in (0,1)");
    require(u_base > 0.0, "LifConfig: u_base must be positive");
    require(surrogate_width > 0.0, "LifConfig: surrogate width must be positive");
    require(gate_alpha > 0.0 && gate_alpha < 1.0, "LifConfig: gate_alpha must be in (0,1)");
  }
};

inline Tensor surrogate_grad(const Tensor& u_minus_th, const LifConfig& cfg) {
  cfg.validate();
  Tensor out = u_minus_th;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = surrogate_value(out[i], cfg.surrogate, cfg.surrogate_width);
  return out;
}

// Per-neuron recurrent state: membrane potential, previous spike, and (for
// the dynamic variant) the EMA gate value. All tensors share one shape.
struct LifState {
  Tensor membrane;
  Tensor prev_spike;
  Tensor gate;  // empty when ungated

  static LifState zeros(const std::vector<std::size_t>& shape, bool gated) {
    LifState s;
    s.membrane = Tensor::zeros(shape);
    s.prev_spike = Tensor::zeros(shape);
    if (gated) s.gate = Tensor::zeros(shape);
    return s;
  }
};

// One causal EMA update: alpha*gate + (1-alpha)*spikes, elementwise.
// With gate in [0,1] and binary spikes the result stays in [0,1].
inline Tensor ema_gate_step(const Tensor& gate, const Tensor& spikes, double alpha) {
  require(gate.same_shape(spikes), "ema_gate_step: shape mismatch");
  Tensor out = gate;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = alpha * out[i] + (1.0 - alpha) * spikes[i];
  return out;
}

// One step of the dynamic-threshold LIF. Advances the gate from the block's
// input spikes, integrates with hard reset, and fires where the membrane
// reaches u_base*(2 - gate). State is updated in place; returns the spikes.
inline Tensor dynamic_lif_step(LifState& state, const Tensor& current,
                               const Tensor& input_spikes, const LifConfig& cfg) {
  cfg.validate();
  require(state.membrane.same_shape(current), "dynamic_lif_step: shape mismatch");
  if (cfg.gated) {
    require(!state.gate.empty(), "dynamic_lif_step: gated config requires gate state");
    state.gate = ema_gate_step(state.gate, input_spikes, cfg.gate_alpha);
  }
  Tensor spikes(current.shape());
  for (std::size_t i = 0; i < current.size(); ++i) {
    const double u = cfg.tau * state.membrane[i] * (1.0 - state.prev_spike[i]) + current[i];
    const double th = cfg.gated ? cfg.u_base * (2.0 - state.gate[i]) : cfg.u_base;
    spikes[i] = u >= th ? 1.0 : 0.0;
    state.membrane[i] = u;
  }
  state.prev_spike = spikes;
  return spikes;
}

// Static LIF: the dynamic step with the threshold fixed at u_base.
inline Tensor static_lif_step(LifState& state, const Tensor& current, const LifConfig& cfg) {
  LifConfig ungated = cfg;
  ungated.gated = false;
  return dynamic_lif_step(state, current, Tensor(), ungated);
}

// clamp(a+b, 0, 1): the logical OR of two binary tensors.
inline Tensor clamp_residual(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "clamp_residual: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = out[i] + b[i];
    out[i] = s < 0.0 ? 0.0 : (s > 1.0 ? 1.0 : s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape ops
// ---------------------------------------------------------------------------

// EMA gate over the time axis of [B,T,C,V] spikes with a scalar decay.
// gate[t] = alpha*gate[t-1] + (1-alpha)*x[t], gate[-1] = 0. A nonzero
// `truncation` cuts the backward recurrence at segment boundaries (TBPTT).
inline Var ema_gate_scan(Tape& tp, Var spikes, Var alpha, std::size_t truncation = 0) {
  const Tensor& X = tp.val(spikes);
  require(X.rank() == 4, "ema_gate_scan: expected [B,T,C,V]");
  require(tp.val(alpha).size() == 1, "ema_gate_scan: alpha must be scalar");
  const double a = tp.val(alpha)[0];
  require(a > 0.0 && a < 1.0, "ema_gate_scan: alpha must be in (0,1)");
  const std::size_t B = X.dim(0), T = X.dim(1), E = X.dim(2) * X.dim(3);

  Tensor out(X.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const double* xs = X.data() + b * T * E;
    double* os = out.data() + b * T * E;
    for (std::size_t t = 0; t < T; ++t) {
      const double* xrow = xs + t * E;
      const double* prev = t > 0 ? os + (t - 1) * E : nullptr;
      double* orow = os + t * E;
      for (std::size_t i = 0; i < E; ++i)
        orow[i] = a * (prev ? prev[i] : 0.0) + (1.0 - a) * xrow[i];
    }
  }
  return tp.record(std::move(out), {spikes, alpha},
                   [spikes, alpha, a, B, T, E, truncation](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& X2 = t.val(spikes);
    const Tensor& G = t.val(self);
    const bool need_x = t.requires_grad(spikes);
    const bool need_a = t.requires_grad(alpha);
    Tensor* gx = need_x ? &t.grad_buffer(spikes) : nullptr;
    double galpha = 0.0;
    std::vector<double> carry(E);
    for (std::size_t b = 0; b < B; ++b) {
      std::fill(carry.begin(), carry.end(), 0.0);
      for (std::size_t tt = T; tt-- > 0;) {
        const std::size_t base = (b * T + tt) * E;
        for (std::size_t i = 0; i < E; ++i) {
          const double total = g[base + i] + carry[i];
          const double gate_prev = tt > 0 ? G[base + i - E] : 0.0;
          if (need_a) galpha += total * (gate_prev - X2[base + i]);
          if (gx) (*gx)[base + i] += total * (1.0 - a);
          carry[i] = total * a;
        }
        if (truncation > 0 && tt % truncation == 0)
          std::fill(carry.begin(), carry.end(), 0.0);
      }
    }
    if (need_a) t.grad_buffer(alpha)[0] += galpha;
  });
}

enum class SpikeMode {
  kHard,     // Heaviside forward, surrogate backward, reset detached
  kSmoothed  // sigmoid((U-U_th)/width) forward, exact backward (gradient checks)
};

// LIF scan over the time axis of a [B,T,C,V] current stream.
//
// U[t] = tau*U[t-1]*(1-S[t-1]) + I[t]; threshold u_base*(2-gate[t]) when a
// gate stream is given, else u_base. Pass an invalid `gate` for the static
// variant. `self_gate` (stem experimentation flag) maintains an internal EMA
// gate over the scan's own previous output spikes, with decay val(alpha).
inline Var lif_scan(Tape& tp, Var current, Var gate, const LifConfig& cfg,
                    SpikeMode mode = SpikeMode::kHard, Var self_gate_alpha = Var{}) {
  cfg.validate();
  const Tensor& I = tp.val(current);
  require(I.rank() == 4, "lif_scan: expected [B,T,C,V]");
  const std::size_t B = I.dim(0), T = I.dim(1), E = I.dim(2) * I.dim(3);
  const bool gated = gate.valid();
  const bool self_gated = self_gate_alpha.valid();
  require(!(gated && self_gated), "lif_scan: external and self gate are exclusive");
  if (gated)
    require(tp.val(gate).same_shape(I), "lif_scan: gate/current shape mismatch");
  const double alpha = self_gated ? tp.val(self_gate_alpha)[0] : 0.0;
  const double tau = cfg.tau, ub = cfg.u_base, w = cfg.surrogate_width;
  const bool smooth = mode == SpikeMode::kSmoothed;

  Tensor spikes(I.shape());
  Tensor membrane(I.shape());                       // saved for backward
  Tensor gate_hist = self_gated ? Tensor(I.shape()) : Tensor();
  const Tensor* gate_in = gated ? &tp.val(gate) : nullptr;

  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t off = b * T * E;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t row = off + t * E;
      for (std::size_t i = 0; i < E; ++i) {
        const double u_prev = t > 0 ? membrane[row - E + i] : 0.0;
        const double s_prev = t > 0 ? spikes[row - E + i] : 0.0;
        const double u = tau * u_prev * (1.0 - s_prev) + I[row + i];
        double th = ub;
        if (gated) {
          th = ub * (2.0 - (*gate_in)[row + i]);
        } else if (self_gated) {
          const double g_prev = t > 0 ? gate_hist[row - E + i] : 0.0;
          const double g = alpha * g_prev + (1.0 - alpha) * s_prev;
          gate_hist[row + i] = g;
          th = ub * (2.0 - g);
        }
        membrane[row + i] = u;
        spikes[row + i] = smooth ? 1.0 / (1.0 + std::exp(-(u - th) / w))
                                 : (u >= th ? 1.0 : 0.0);
      }
    }
  }

  return tp.record(
      std::move(spikes), {current, gate, self_gate_alpha},
      [current, gate, self_gate_alpha, cfg, smooth, alpha, B, T, E,
       membrane = std::move(membrane), gate_hist = std::move(gate_hist)](Tape& t, Var self) {
        const Tensor& gS = t.grad(self);
        const Tensor& S = t.val(self);
        const bool gated2 = gate.valid();
        const bool self_gated2 = self_gate_alpha.valid();
        const Tensor* gate_in2 = gated2 ? &t.val(gate) : nullptr;
        const double tau = cfg.tau, ub = cfg.u_base, w = cfg.surrogate_width;

        Tensor* gI = t.requires_grad(current) ? &t.grad_buffer(current) : nullptr;
        Tensor* gGate = (gated2 && t.requires_grad(gate)) ? &t.grad_buffer(gate) : nullptr;
        double galpha = 0.0;

        std::vector<double> gU_next(E), s_extra(E), s_extra_next(E), dgate_carry(E);
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t off = b * T * E;
          std::fill(gU_next.begin(), gU_next.end(), 0.0);
          std::fill(s_extra.begin(), s_extra.end(), 0.0);
          std::fill(dgate_carry.begin(), dgate_carry.end(), 0.0);
          for (std::size_t tt = T; tt-- > 0;) {
            const std::size_t row = off + tt * E;
            std::fill(s_extra_next.begin(), s_extra_next.end(), 0.0);
            for (std::size_t i = 0; i < E; ++i) {
              double s_grad = gS[row + i] + s_extra[i];
              const double u = membrane[row + i];
              // Smoothed mode differentiates the reset product exactly; the
              // hard path detaches S[t-1] in the reset term.
              if (smooth && tt + 1 < T) s_grad += gU_next[i] * (-tau * u);
              double th = ub;
              double g_here = 0.0;
              if (gated2) {
                th = ub * (2.0 - (*gate_in2)[row + i]);
              } else if (self_gated2) {
                g_here = gate_hist[row + i];
                th = ub * (2.0 - g_here);
              }
              const double deriv =
                  smooth ? (S[row + i] * (1.0 - S[row + i])) / w
                         : surrogate_value(u - th, cfg.surrogate, cfg.surrogate_width);
              const double d = s_grad * deriv;
              const double s_here = S[row + i];
              double gU = d;
              if (tt + 1 < T) gU += gU_next[i] * tau * (1.0 - s_here);
              if (gI) (*gI)[row + i] += gU;
              if (gated2) {
                if (gGate) (*gGate)[row + i] += d * ub;
              } else if (self_gated2) {
                const double dgate = d * ub + dgate_carry[i];
                const double g_prev = tt > 0 ? gate_hist[row - E + i] : 0.0;
                const double s_prev = tt > 0 ? S[row - E + i] : 0.0;
                galpha += dgate * (g_prev - s_prev);
                if (tt > 0) s_extra_next[i] += dgate * (1.0 - alpha);
                dgate_carry[i] = dgate * alpha;
              }
              gU_next[i] = gU;
            }
            std::swap(s_extra, s_extra_next);
            if (cfg.bptt_truncation > 0 && tt % cfg.bptt_truncation == 0) {
              std::fill(gU_next.begin(), gU_next.end(), 0.0);
              std::fill(s_extra.begin(), s_extra.end(), 0.0);
              std::fill(dgate_carry.begin(), dgate_carry.end(), 0.0);
            }
          }
        }
        if (self_gated2 && t.requires_grad(self_gate_alpha))
          t.grad_buffer(self_gate_alpha)[0] += galpha;
      });
}

// Bounded residual join: clamp(a+b, 0, 1). Gradient passes where the sum
// lies inside [0,1] and is blocked at the saturated side.
inline Var clamp_residual(Tape& tp, Var a, Var b) {
  const Tensor& A = tp.val(a);
  const Tensor& B = tp.val(b);
  require(A.same_shape(B), "clamp_residual: shape mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = out[i] + B[i];
    out[i] = s < 0.0 ? 0.0 : (s > 1.0 ? 1.0 : s);
  }
  return tp.record(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& A2 = t.val(a);
    const Tensor& B2 = t.val(b);
    const bool na = t.requires_grad(a), nb = t.requires_grad(b);
    Tensor* ga = na ? &t.grad_buffer(a) : nullptr;
    Tensor* gb = nb ? &t.grad_buffer(b) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = A2[i] + B2[i];
      if (s < 0.0 || s > 1.0) continue;
      if (ga) (*ga)[i] += g[i];
      if (gb) (*gb)[i] += g[i];
    }
  });
}

}  // namespace pasnet
