#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pasnet/frontend.hpp"
#include "pasnet/pasblock.hpp"
#include "pasnet/readout.hpp"

namespace pasnet {

struct ModelConfig {
  std::size_t nodes = 3;        // V
  std::size_t in_channels = 6;  // C_in, xyz triads
  std::size_t classes = 4;      // K
  std::size_t embed_dim = 32;   // D
  std::size_t depth = 2;        // L
  double mlp_ratio = 2.0;
  std::size_t stride = 4;       // tokenizer patch length s
  std::size_t tcn_kernel = 3;   // K of the dilated TCN
  std::size_t topo_kernel = 5;  // k of the masked spatiotemporal conv
  double tau = 0.5;
  double u_base = 1.0;
  SurrogateKind surrogate = SurrogateKind::kRectangular;
  double surrogate_width = 0.5;
  double warmup_ratio = 0.2;
  double exit_threshold = 0.9;
  std::uint64_t seed = 12345;
  // Experimentation flags (open architecture choices).
  bool stem_self_gate = false;       // EMA-gate the stem from its own spikes
  bool gate_pool_channels = false;   // channel-mean pooled block gates
  std::size_t bptt_truncation = 0;   // 0 = full BPTT through the scans
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t token_dim() const { return token_channels(in_channels); }

  LifConfig lif() const {
    LifConfig c;
    c.tau = tau;
    c.u_base = u_base;
    c.surrogate = surrogate;
    c.surrogate_width = surrogate_width;
    c.gate_pool_channels = gate_pool_channels;
    c.bptt_truncation = bptt_truncation;
    return c;
  }

  BlockConfig block(std::size_t layer_index) const {
    BlockConfig b;
    b.layer_index = layer_index;
    b.embed_dim = embed_dim;
    b.nodes = nodes;
    b.tcn_kernel = tcn_kernel;
    b.topo_kernel = topo_kernel;
    b.mlp_ratio = mlp_ratio;
    b.lif = lif();
    return b;
  }

  void validate() const {
    require(nodes >= 1 && classes >= 2 && embed_dim >= 1 && depth >= 1,
            "ModelConfig: dimensions out of range");
    require(stride >= 1, "ModelConfig: stride must be >= 1");
    require(warmup_ratio >= 0.0 && warmup_ratio <= 1.0, "ModelConfig: warmup_ratio in [0,1]");
    require(exit_threshold > 0.0 && exit_threshold <= 1.0, "ModelConfig: exit_threshold in (0,1]");
    token_channels(in_channels);
    block(depth).validate();
  }
};

struct PasNet {
  ModelConfig cfg;
  Tensor embed_w, embed_b;  // [D,C_tok], [D]
  TbnParams embed_bn;
  Tensor stem_alpha_raw;  // used only with cfg.stem_self_gate
  std::vector<BlockParams> blocks;
  Tensor head_w, head_b;  // [K,D], [K]

  static PasNet init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    PasNet m;
    m.cfg = cfg;
    const std::size_t D = cfg.embed_dim, C = cfg.token_dim(), K = cfg.classes;
    auto ubound = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
    m.embed_w = rng.uniform_tensor({D, C}, -ubound(C), ubound(C));
    m.embed_b = Tensor::zeros({D});
    m.embed_bn = TbnParams::init(D, cfg.bn_eps, cfg.bn_momentum);
    m.stem_alpha_raw = Tensor::scalar(std::log(0.9 / 0.1));
    for (std::size_t l = 1; l <= cfg.depth; ++l) {
      BlockParams p = BlockParams::init(cfg.block(l), rng);
      p.proj_bn.eps = p.tcn1_bn.eps = p.tcn2_bn.eps = cfg.bn_eps;
      p.proj_bn.momentum = p.tcn1_bn.momentum = p.tcn2_bn.momentum = cfg.bn_momentum;
      m.blocks.push_back(std::move(p));
    }
    m.head_w = rng.uniform_tensor({K, D}, -ubound(D), ubound(D));
    m.head_b = Tensor::zeros({K});
    return m;
  }

  void set_mode(TbnParams::Mode mode) {
    embed_bn.mode = mode;
    for (auto& b : blocks) b.set_mode(mode);
  }

  // Visits every trainable parameter in a fixed order.
  template <typename F>
  void for_each_param(F&& f) {
    f("frontend.embed.weight", embed_w);
    f("frontend.embed.bias", embed_b);
    f("frontend.tbn.gamma", embed_bn.gamma);
    f("frontend.tbn.beta", embed_bn.beta);
    if (cfg.stem_self_gate) f("frontend.stem_gate.alpha_raw", stem_alpha_raw);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      BlockParams& b = blocks[l];
      const std::string p = "block" + std::to_string(l + 1) + ".";
      f(p + "topo.logits", b.topo.logits);
      f(p + "topo.kernel", b.topo.kernel);
      f(p + "gate.alpha_raw", b.gate_alpha_raw);
      f(p + "proj.weight", b.proj_w);
      f(p + "proj.bias", b.proj_b);
      f(p + "proj.tbn.gamma", b.proj_bn.gamma);
      f(p + "proj.tbn.beta", b.proj_bn.beta);
      f(p + "tcn1.weight", b.tcn1_w);
      f(p + "tcn1.bias", b.tcn1_b);
      f(p + "tcn1.tbn.gamma", b.tcn1_bn.gamma);
      f(p + "tcn1.tbn.beta", b.tcn1_bn.beta);
      f(p + "tcn2.weight", b.tcn2_w);
      f(p + "tcn2.bias", b.tcn2_b);
      f(p + "tcn2.tbn.gamma", b.tcn2_bn.gamma);
      f(p + "tcn2.tbn.beta", b.tcn2_bn.beta);
    }
    f("readout.head.weight", head_w);
    f("readout.head.bias", head_b);
  }

  // Parameters plus non-trainable persistent state (BN running statistics).
  template <typename F>
  void for_each_state(F&& f) {
    for_each_param(f);
    f("frontend.tbn.running_mean", embed_bn.running_mean);
    f("frontend.tbn.running_var", embed_bn.running_var);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      BlockParams& b = blocks[l];
      const std::string p = "block" + std::to_string(l + 1) + ".";
      f(p + "proj.tbn.running_mean", b.proj_bn.running_mean);
      f(p + "proj.tbn.running_var", b.proj_bn.running_var);
      f(p + "tcn1.tbn.running_mean", b.tcn1_bn.running_mean);
      f(p + "tcn1.tbn.running_var", b.tcn1_bn.running_var);
      f(p + "tcn2.tbn.running_mean", b.tcn2_bn.running_mean);
      f(p + "tcn2.tbn.running_var", b.tcn2_bn.running_var);
    }
  }
};

// Tape handles of the full model's parameters, in for_each_param order.
struct ModelVars {
  Var embed_w, embed_b, embed_gamma, embed_beta, stem_alpha_raw;
  std::vector<BlockVars> blocks;
  Var head_w, head_b;
  std::vector<std::pair<std::string, Var>> named;  // traversal order
};

inline ModelVars bind_model(Tape& tp, PasNet& m, bool trainable = true) {
  ModelVars v;
  v.blocks.resize(m.blocks.size());
  auto place = [&](const std::string& name, Var var) { v.named.emplace_back(name, var); };
  m.for_each_param([&](const std::string& name, Tensor& t) {
    Var var = trainable ? tp.param(t) : tp.input(t);
    place(name, var);
  });
  // Map traversal order back onto the structured handles.
  std::size_t i = 0;
  auto next = [&]() { return v.named[i++].second; };
  v.embed_w = next();
  v.embed_b = next();
  v.embed_gamma = next();
  v.embed_beta = next();
  if (m.cfg.stem_self_gate) v.stem_alpha_raw = next();
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    BlockVars& b = v.blocks[l];
    b.topo_logits = next();
    b.topo_kernel = next();
    b.gate_alpha_raw = next();
    b.proj_w = next();
    b.proj_b = next();
    b.proj_gamma = next();
    b.proj_beta = next();
    b.tcn1_w = next();
    b.tcn1_b = next();
    b.tcn1_gamma = next();
    b.tcn1_beta = next();
    b.tcn2_w = next();
    b.tcn2_b = next();
    b.tcn2_gamma = next();
    b.tcn2_beta = next();
  }
  v.head_w = next();
  v.head_b = next();
  return v;
}

// Tape handles of the intermediate spike streams of one forward pass.
struct ModelTrace {
  Var stem;  // S^(0)
  std::vector<BlockTrace> blocks;
  Var pooled, logits;
};

// Full forward on batched tokens [B,T',C_tok,V] -> per-step logits [B,T',K].
inline Var model_forward(Tape& tp, PasNet& m, const ModelVars& v, Var tokens,
                         bool training, SpikeMode mode = SpikeMode::kHard,
                         ModelTrace* trace = nullptr) {
  require(tp.val(tokens).rank() == 4, "model_forward: expected [B,T,C_tok,V] tokens");
  require(tp.val(tokens).dim(2) == m.cfg.token_dim(), "model_forward: token channel mismatch");
  require(tp.val(tokens).dim(3) == m.cfg.nodes, "model_forward: node count mismatch");

  Var stem_alpha;
  if (m.cfg.stem_self_gate) stem_alpha = sigmoid(tp, v.stem_alpha_raw);
  Var spikes = spiking_embed(tp, tokens, v.embed_w, v.embed_b, v.embed_gamma, v.embed_beta,
                             m.embed_bn, m.cfg.lif(), training, mode, stem_alpha);
  if (trace) trace->stem = spikes;
  std::vector<BlockConfig> cfgs;
  cfgs.reserve(m.blocks.size());
  for (std::size_t l = 1; l <= m.blocks.size(); ++l) cfgs.push_back(m.cfg.block(l));
  spikes = stack_forward(tp, spikes, cfgs, m.blocks, v.blocks, training, mode,
                         trace ? &trace->blocks : nullptr);
  Var pooled = spatial_pool(tp, spikes);
  Var logits = linear(tp, pooled, v.head_w, v.head_b);
  if (trace) {
    trace->pooled = pooled;
    trace->logits = logits;
  }
  return logits;
}

// Stacks per-sample token tensors into one [B,T,C,V] batch.
inline Tensor stack_tokens(const std::vector<TokenTensor>& tokens) {
  require(!tokens.empty(), "stack_tokens: empty batch");
  const std::size_t T = tokens.front().steps();
  const std::size_t C = tokens.front().channels();
  const std::size_t V = tokens.front().nodes();
  Tensor out({tokens.size(), T, C, V});
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    const Tensor& t = tokens[b].data;
    require(t.dim(0) == T && t.dim(1) == C && t.dim(2) == V, "stack_tokens: ragged batch");
    std::copy(t.data(), t.data() + t.size(), out.data() + b * t.size());
  }
  return out;
}

// Frozen-model convenience: per-step logits [T,K] for one raw window.
inline Tensor eval_window_logits(PasNet& m, const RawWindow& w) {
  Tape tp;
  ModelVars v = bind_model(tp, m, /*trainable=*/false);
  Var tokens = tp.input(stack_tokens({tokenize(w, m.cfg.stride)}));
  Var logits = model_forward(tp, m, v, tokens, /*training=*/false);
  const Tensor& L = tp.val(logits);
  const std::size_t T = L.dim(1), K = L.dim(2);
  Tensor out({T, K});
  std::copy(L.data(), L.data() + L.size(), out.data());
  return out;
}

}  // namespace pasnet
