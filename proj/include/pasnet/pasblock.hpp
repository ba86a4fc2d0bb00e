#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pasnet/frontend.hpp"
#include "pasnet/neurons.hpp"
#include "pasnet/ops.hpp"
#include "pasnet/topology.hpp"

namespace pasnet {

struct BlockConfig {
  std::size_t layer_index = 1;  // 1-based position in the stack
  std::size_t embed_dim = 32;   // D
  std::size_t nodes = 3;        // V
  std::size_t tcn_kernel = 3;   // K
  std::size_t topo_kernel = 5;  // k
  double mlp_ratio = 2.0;       // hidden expansion of the spiking MLP
  LifConfig lif;

  std::size_t hidden_dim() const {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(embed_dim))));
  }

  std::size_t nominal_dilation() const { return std::size_t{1} << (layer_index - 1); }

  // Dilation 2^(l-1), capped so the dilated kernel still fits the sequence.
  std::size_t effective_dilation(std::size_t seq_len) const {
    const std::size_t cap = std::max<std::size_t>(1, seq_len / std::max<std::size_t>(1, tcn_kernel));
    return std::max<std::size_t>(1, std::min(nominal_dilation(), cap));
  }

  void validate() const {
    require(layer_index >= 1, "BlockConfig: layer_index is 1-based");
    require(embed_dim >= 1 && nodes >= 1, "BlockConfig: dimensions must be positive");
    require(tcn_kernel >= 1 && topo_kernel >= 1, "BlockConfig: kernel sizes must be >= 1");
    require(mlp_ratio > 0.0, "BlockConfig: mlp_ratio must be positive");
    lif.validate();
  }
};

struct BlockParams {
  TopologyMask topo;
  Tensor proj_w, proj_b;  // [D,D], [D]   pointwise projection after routing
  TbnParams proj_bn;
  Tensor tcn1_w, tcn1_b;  // [H,D,K], [H] dilated expansion conv
  TbnParams tcn1_bn;
  Tensor tcn2_w, tcn2_b;  // [D,H], [D]   pointwise contraction conv
  TbnParams tcn2_bn;
  Tensor gate_alpha_raw;  // scalar logit; gate decay = sigmoid(raw)

  static BlockParams init(const BlockConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t D = cfg.embed_dim, H = cfg.hidden_dim(), V = cfg.nodes;
    const std::size_t K = cfg.tcn_kernel;
    BlockParams p;
    p.topo = TopologyMask::init(V, cfg.topo_kernel, rng);
    auto ubound = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
    p.proj_w = rng.uniform_tensor({D, D}, -ubound(D), ubound(D));
    p.proj_b = Tensor::zeros({D});
    p.proj_bn = TbnParams::init(D);
    p.tcn1_w = rng.uniform_tensor({H, D, K}, -ubound(D * K), ubound(D * K));
    p.tcn1_b = Tensor::zeros({H});
    p.tcn1_bn = TbnParams::init(H);
    p.tcn2_w = rng.uniform_tensor({D, H}, -ubound(H), ubound(H));
    p.tcn2_b = Tensor::zeros({D});
    p.tcn2_bn = TbnParams::init(D);
    // sigmoid(raw) = 0.9: slow decay at initialization
    p.gate_alpha_raw = Tensor::scalar(std::log(0.9 / 0.1));
    return p;
  }

  void set_mode(TbnParams::Mode m) {
    proj_bn.mode = m;
    tcn1_bn.mode = m;
    tcn2_bn.mode = m;
  }
};

// Plain dilated causal conv (streaming path):
// out[b,t,o,v] = bias[o] + sum_k sum_i W[o,i,k] x[b,t-k*d,i,v], zero padded.
inline Tensor dilated_causal_conv(const Tensor& x, const Tensor& weight,
                                  const Tensor& bias, std::size_t dilation) {
  require(x.rank() == 4, "dilated_causal_conv: expected [B,T,C,V]");
  require(weight.rank() == 3, "dilated_causal_conv: expected [Cout,Cin,K] weight");
  require(weight.dim(1) == x.dim(2), "dilated_causal_conv: channel mismatch");
  require(dilation >= 1, "dilated_causal_conv: dilation must be >= 1");
  const std::size_t B = x.dim(0), T = x.dim(1), Ci = x.dim(2), V = x.dim(3);
  const std::size_t Co = weight.dim(0), K = weight.dim(2);
  Tensor out({B, T, Co, V});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      double* orow = out.data() + ((b * T + t) * Co) * V;
      for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t v = 0; v < V; ++v) orow[o * V + v] = bias[o];
      for (std::size_t k = 0; k < K; ++k) {
        if (k * dilation > t) break;
        const double* xrow = x.data() + ((b * T + (t - k * dilation)) * Ci) * V;
        for (std::size_t o = 0; o < Co; ++o) {
          double* od = orow + o * V;
          for (std::size_t i = 0; i < Ci; ++i) {
            const double w = weight.at3(o, i, k);
            if (w == 0.0) continue;
            const double* xd = xrow + i * V;
            for (std::size_t v = 0; v < V; ++v) od[v] += w * xd[v];
          }
        }
      }
    }
  return out;
}

// Tape op for the dilated causal conv.
inline Var dilated_causal_conv(Tape& tp, Var x, Var weight, Var bias, std::size_t dilation) {
  Tensor out = dilated_causal_conv(tp.val(x), tp.val(weight), tp.val(bias), dilation);
  const Tensor& X = tp.val(x);
  const Tensor& W = tp.val(weight);
  const std::size_t B = X.dim(0), T = X.dim(1), Ci = X.dim(2), V = X.dim(3);
  const std::size_t Co = W.dim(0), K = W.dim(2);
  return tp.record(std::move(out), {x, weight, bias},
                   [x, weight, bias, dilation, B, T, Ci, Co, V, K](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& X2 = t.val(x);
    const Tensor& W2 = t.val(weight);
    Tensor* gx = t.requires_grad(x) ? &t.grad_buffer(x) : nullptr;
    Tensor* gw = t.requires_grad(weight) ? &t.grad_buffer(weight) : nullptr;
    Tensor* gb = t.requires_grad(bias) ? &t.grad_buffer(bias) : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t2 = 0; t2 < T; ++t2) {
        const double* grow = g.data() + ((b * T + t2) * Co) * V;
        if (gb)
          for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t v = 0; v < V; ++v) (*gb)[o] += grow[o * V + v];
        for (std::size_t k = 0; k < K; ++k) {
          if (k * dilation > t2) break;
          const std::size_t src = t2 - k * dilation;
          const double* xrow = X2.data() + ((b * T + src) * Ci) * V;
          double* gxrow = gx ? gx->data() + ((b * T + src) * Ci) * V : nullptr;
          for (std::size_t o = 0; o < Co; ++o) {
            const double* gd = grow + o * V;
            for (std::size_t i = 0; i < Ci; ++i) {
              const double w = W2.at3(o, i, k);
              double dot = 0.0;
              const double* xd = xrow + i * V;
              for (std::size_t v = 0; v < V; ++v) {
                dot += gd[v] * xd[v];
                if (gxrow) gxrow[i * V + v] += gd[v] * w;
              }
              if (gw) gw->at3(o, i, k) += dot;
            }
          }
        }
      }
  });
}

// Tape handles of one block's parameters.
struct BlockVars {
  Var topo_logits, topo_kernel;
  Var proj_w, proj_b, proj_gamma, proj_beta;
  Var tcn1_w, tcn1_b, tcn1_gamma, tcn1_beta;
  Var tcn2_w, tcn2_b, tcn2_gamma, tcn2_beta;
  Var gate_alpha_raw;
};

// Tape handles of the intermediate spike tensors, for telemetry/profiling.
struct BlockTrace {
  Var gate;
  Var s_topo, s_mid, s_mlp1, s_mlp2, s_out;
};

// One PAS-Block: Stage 1 routes spatial structure through the masked
// spatiotemporal conv and fires dynamic-threshold neurons under the causal
// EMA gate; Stage 2 is the spiking dilated TCN (expand then contract).
// Both stages close with bounded residuals, so the output stays binary.
inline Var pas_block_forward(Tape& tp, Var s_in, const BlockConfig& cfg, BlockParams& params,
                             const BlockVars& vars, bool training,
                             SpikeMode mode = SpikeMode::kHard, BlockTrace* trace = nullptr) {
  cfg.validate();
  const std::size_t T = tp.val(s_in).dim(1);
  const std::size_t C = tp.val(s_in).dim(2);

  // Stage 1: causal neuromodulation in parallel with topology routing.
  Var alpha = sigmoid(tp, vars.gate_alpha_raw);
  Var gate;
  if (cfg.lif.gate_pool_channels) {
    Var pooled = channel_mean(tp, s_in);
    gate = channel_broadcast(tp, ema_gate_scan(tp, pooled, alpha, cfg.lif.bptt_truncation), C);
  } else {
    gate = ema_gate_scan(tp, s_in, alpha, cfg.lif.bptt_truncation);
  }
  Var mask = symmetrize_mask(tp, vars.topo_logits);
  Var i_topo = masked_st_conv(tp, s_in, vars.topo_kernel, mask);
  Var i_dyn = tbn(tp, channel_conv(tp, i_topo, vars.proj_w, vars.proj_b),
                  vars.proj_gamma, vars.proj_beta, params.proj_bn, training);
  LifConfig dyn_cfg = cfg.lif;
  dyn_cfg.gated = true;
  Var s_topo = lif_scan(tp, i_dyn, gate, dyn_cfg, mode);
  Var s_mid = clamp_residual(tp, s_in, s_topo);

  // Stage 2: spiking dilated TCN.
  const std::size_t d = cfg.effective_dilation(T);
  Var i_mlp1 = tbn(tp, dilated_causal_conv(tp, s_mid, vars.tcn1_w, vars.tcn1_b, d),
                   vars.tcn1_gamma, vars.tcn1_beta, params.tcn1_bn, training);
  LifConfig static_cfg = cfg.lif;
  static_cfg.gated = false;
  Var s_mlp1 = lif_scan(tp, i_mlp1, Var{}, static_cfg, mode);
  Var i_mlp2 = tbn(tp, channel_conv(tp, s_mlp1, vars.tcn2_w, vars.tcn2_b),
                   vars.tcn2_gamma, vars.tcn2_beta, params.tcn2_bn, training);
  Var s_mlp2 = lif_scan(tp, i_mlp2, Var{}, static_cfg, mode);
  Var s_out = clamp_residual(tp, s_mid, s_mlp2);

  if (trace) *trace = BlockTrace{gate, s_topo, s_mid, s_mlp1, s_mlp2, s_out};
  return s_out;
}

// Sequential composition of the block stack. `configs`, `params` and `vars`
// must have equal length >= 1; traces (when requested) are filled per layer.
inline Var stack_forward(Tape& tp, Var s0, const std::vector<BlockConfig>& configs,
                         std::vector<BlockParams>& params, const std::vector<BlockVars>& vars,
                         bool training, SpikeMode mode = SpikeMode::kHard,
                         std::vector<BlockTrace>* traces = nullptr) {
  require(!configs.empty() && configs.size() == params.size() && configs.size() == vars.size(),
          "stack_forward: needs at least one block with matching params");
  if (traces) traces->resize(configs.size());
  Var s = s0;
  for (std::size_t l = 0; l < configs.size(); ++l)
    s = pas_block_forward(tp, s, configs[l], params[l], vars[l], training, mode,
                          traces ? &(*traces)[l] : nullptr);
  return s;
}

}  // namespace pasnet
