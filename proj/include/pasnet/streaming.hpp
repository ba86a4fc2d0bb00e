#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pasnet/model.hpp"
#include "pasnet/profiler.hpp"

namespace pasnet {

// Step-wise inference engine. Frozen T-BN statistics are folded into the
// preceding convolution weights and the topology mask is baked into the
// kernel, so each incoming token advances the network with the same
// arithmetic as whole-window evaluation: streaming output equals batch
// output step for step.
class StreamingModel {
 public:
  // `expected_steps` pins the dilation caps to the same horizon the batch
  // path would see (T' = floor(T / stride)).
  static StreamingModel fold(PasNet& model, std::size_t expected_steps) {
    require(expected_steps >= 1, "StreamingModel: expected_steps must be >= 1");
    model.set_mode(TbnParams::Mode::kFrozen);
    StreamingModel s;
    s.cfg_ = model.cfg;
    auto [ew, eb] = fold_tbn_into_conv(model.embed_w, model.embed_b, model.embed_bn);
    s.embed_w_ = std::move(ew);
    s.embed_b_ = std::move(eb);
    s.stem_alpha_ = 1.0 / (1.0 + std::exp(-model.stem_alpha_raw[0]));
    for (std::size_t l = 1; l <= model.cfg.depth; ++l) {
      const BlockParams& p = model.blocks[l - 1];
      FoldedBlock fb;
      const Tensor mask = symmetrize_mask(p.topo.logits);
      fb.eff_kernel = p.topo.kernel;
      const std::size_t V = model.cfg.nodes, k = model.cfg.topo_kernel;
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t u = 0; u < V; ++u)
          for (std::size_t j = 0; j < k; ++j) fb.eff_kernel.at3(v, u, j) *= mask.at2(v, u);
      auto [pw, pb] = fold_tbn_into_conv(p.proj_w, p.proj_b, p.proj_bn);
      fb.proj_w = std::move(pw);
      fb.proj_b = std::move(pb);
      auto [t1w, t1b] = fold_tbn_into_conv(p.tcn1_w, p.tcn1_b, p.tcn1_bn);
      fb.tcn1_w = std::move(t1w);
      fb.tcn1_b = std::move(t1b);
      auto [t2w, t2b] = fold_tbn_into_conv(p.tcn2_w, p.tcn2_b, p.tcn2_bn);
      fb.tcn2_w = std::move(t2w);
      fb.tcn2_b = std::move(t2b);
      fb.alpha = 1.0 / (1.0 + std::exp(-p.gate_alpha_raw[0]));
      fb.dilation = model.cfg.block(l).effective_dilation(expected_steps);
      s.blocks_.push_back(std::move(fb));
    }
    s.head_w_ = model.head_w;
    s.head_b_ = model.head_b;
    s.reset();
    return s;
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t steps_done() const { return steps_; }

  void reset() {
    const std::vector<std::size_t> shape{cfg_.embed_dim, cfg_.nodes};
    stem_state_ = LifState::zeros(shape, cfg_.stem_self_gate);
    states_.clear();
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      BlockState bs;
      bs.dyn = LifState::zeros(shape, true);
      bs.mlp1 = LifState::zeros({cfg_.block(l + 1).hidden_dim(), cfg_.nodes}, false);
      bs.mlp2 = LifState::zeros(shape, false);
      bs.in_hist.clear();
      bs.mid_hist.clear();
      states_.push_back(std::move(bs));
    }
    steps_ = 0;
  }

  // Advances one token step [C_tok, V]; returns the per-class logits [K].
  Tensor step(const Tensor& token) {
    require(token.rank() == 2 && token.dim(0) == cfg_.token_dim() && token.dim(1) == cfg_.nodes,
            "StreamingModel::step: token shape mismatch");
    ++steps_;
    Tensor spikes = stem_step(token);
    for (std::size_t l = 0; l < blocks_.size(); ++l) spikes = block_step(l, spikes);
    Tensor pooled = spatial_pool_step(spikes);
    Tensor logits({cfg_.classes});
    for (std::size_t kk = 0; kk < cfg_.classes; ++kk) {
      double acc = head_b_[kk];
      for (std::size_t d = 0; d < cfg_.embed_dim; ++d) acc += head_w_.at2(kk, d) * pooled[d];
      logits[kk] = acc;
    }
    return logits;
  }

 private:
  struct FoldedBlock {
    Tensor eff_kernel;  // [V,V,k], mask baked in
    Tensor proj_w, proj_b;
    Tensor tcn1_w, tcn1_b;
    Tensor tcn2_w, tcn2_b;
    double alpha = 0.9;
    std::size_t dilation = 1;
  };

  struct BlockState {
    LifState dyn, mlp1, mlp2;
    std::vector<Tensor> in_hist;   // per-step [D,V], oldest first
    std::vector<Tensor> mid_hist;
  };

  Tensor stem_step(const Tensor& token) {
    const std::size_t D = cfg_.embed_dim, V = cfg_.nodes, C = cfg_.token_dim();
    Tensor current({D, V});
    for (std::size_t o = 0; o < D; ++o)
      for (std::size_t v = 0; v < V; ++v) {
        double acc = embed_b_[o];
        for (std::size_t i = 0; i < C; ++i) acc += embed_w_.at2(o, i) * token.at2(i, v);
        current.at2(o, v) = acc;
      }
    LifConfig lif = cfg_.lif();
    if (cfg_.stem_self_gate) {
      lif.gated = true;
      lif.gate_alpha = stem_alpha_;
      // The self gate reads the stem's own previous spikes.
      return dynamic_lif_step(stem_state_, current, stem_state_.prev_spike, lif);
    }
    lif.gated = false;
    return static_lif_step(stem_state_, current, lif);
  }

  Tensor block_step(std::size_t l, const Tensor& s_in) {
    const FoldedBlock& fb = blocks_[l];
    BlockState& st = states_[l];
    const std::size_t D = cfg_.embed_dim, V = cfg_.nodes, k = cfg_.topo_kernel;
    const std::size_t H = cfg_.block(l + 1).hidden_dim(), K = cfg_.tcn_kernel;

    Tensor gate_input = s_in;
    if (cfg_.gate_pool_channels) {
      for (std::size_t v = 0; v < V; ++v) {
        double mean = 0.0;
        for (std::size_t c = 0; c < D; ++c) mean += s_in.at2(c, v);
        mean /= static_cast<double>(D);
        for (std::size_t c = 0; c < D; ++c) gate_input.at2(c, v) = mean;
      }
    }

    st.in_hist.push_back(s_in);
    Tensor i_topo({D, V});
    const std::size_t have = st.in_hist.size();
    for (std::size_t j = 0; j < k && j < have; ++j) {
      const Tensor& past = st.in_hist[have - 1 - j];
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t u = 0; u < V; ++u) {
          const double w = fb.eff_kernel.at3(v, u, j);
          if (w == 0.0) continue;
          for (std::size_t c = 0; c < D; ++c) i_topo.at2(c, v) += w * past.at2(c, u);
        }
    }

    Tensor i_dyn({D, V});
    for (std::size_t o = 0; o < D; ++o)
      for (std::size_t v = 0; v < V; ++v) {
        double acc = fb.proj_b[o];
        for (std::size_t i = 0; i < D; ++i) acc += fb.proj_w.at2(o, i) * i_topo.at2(i, v);
        i_dyn.at2(o, v) = acc;
      }

    LifConfig dyn_cfg = cfg_.lif();
    dyn_cfg.gated = true;
    dyn_cfg.gate_alpha = fb.alpha;
    Tensor s_topo = dynamic_lif_step(st.dyn, i_dyn, gate_input, dyn_cfg);
    Tensor s_mid = clamp_residual(s_in, s_topo);
    st.mid_hist.push_back(s_mid);

    Tensor i_mlp1({H, V});
    for (std::size_t o = 0; o < H; ++o)
      for (std::size_t v = 0; v < V; ++v) i_mlp1.at2(o, v) = fb.tcn1_b[o];
    const std::size_t mid_have = st.mid_hist.size();
    for (std::size_t kk = 0; kk < K; ++kk) {
      if (kk * fb.dilation >= mid_have) break;
      const Tensor& past = st.mid_hist[mid_have - 1 - kk * fb.dilation];
      for (std::size_t o = 0; o < H; ++o)
        for (std::size_t i = 0; i < D; ++i) {
          const double w = fb.tcn1_w.at3(o, i, kk);
          if (w == 0.0) continue;
          for (std::size_t v = 0; v < V; ++v) i_mlp1.at2(o, v) += w * past.at2(i, v);
        }
    }

    LifConfig static_cfg = cfg_.lif();
    static_cfg.gated = false;
    Tensor s_mlp1 = static_lif_step(st.mlp1, i_mlp1, static_cfg);

    Tensor i_mlp2({D, V});
    for (std::size_t o = 0; o < D; ++o)
      for (std::size_t v = 0; v < V; ++v) {
        double acc = fb.tcn2_b[o];
        for (std::size_t h = 0; h < H; ++h) acc += fb.tcn2_w.at2(o, h) * s_mlp1.at2(h, v);
        i_mlp2.at2(o, v) = acc;
      }
    Tensor s_mlp2 = static_lif_step(st.mlp2, i_mlp2, static_cfg);
    return clamp_residual(s_mid, s_mlp2);
  }

  ModelConfig cfg_;
  Tensor embed_w_, embed_b_;
  double stem_alpha_ = 0.9;
  std::vector<FoldedBlock> blocks_;
  Tensor head_w_, head_b_;

  LifState stem_state_;
  std::vector<BlockState> states_;
  std::size_t steps_ = 0;
};

// One token patch of a raw window: samples [p*stride, (p+1)*stride).
inline Tensor window_token_step(const RawWindow& w, std::size_t stride, std::size_t patch) {
  const std::size_t C = w.channels(), V = w.nodes();
  RawWindow slice;
  slice.data = Tensor({stride, C, V});
  for (std::size_t j = 0; j < stride; ++j)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t v = 0; v < V; ++v)
        slice.data.at3(j, c, v) = w.data.at3(patch * stride + j, c, v);
  TokenTensor tok = tokenize(slice, stride);
  Tensor out({tok.channels(), tok.nodes()});
  for (std::size_t c = 0; c < out.dim(0); ++c)
    for (std::size_t v = 0; v < out.dim(1); ++v) out.at2(c, v) = tok.data.at3(0, c, v);
  return out;
}

// Streams the whole window without exiting; returns per-step logits [T',K].
inline Tensor stream_window_logits(StreamingModel& model, const RawWindow& window) {
  const std::size_t stride = model.config().stride;
  const std::size_t steps = window.steps() / stride;
  require(steps >= 1, "stream_window_logits: window shorter than one patch");
  model.reset();
  Tensor logits({steps, model.config().classes});
  for (std::size_t p = 0; p < steps; ++p) {
    Tensor row = model.step(window_token_step(window, stride, p));
    for (std::size_t kk = 0; kk < row.size(); ++kk) logits.at2(p, kk) = row[kk];
  }
  return logits;
}

struct ExitTraceRow {
  std::size_t sample_id = 0;
  std::size_t exit_step = 0;  // 1-based
  int predicted = -1;
  int true_label = -1;
  double confidence = 0.0;
  double energy_saved = 0.0;
};

// Streams one window under the confidence-driven exit policy, halting at the
// exit step (the remaining patches are never computed).
inline ExitTraceRow stream_window_with_exit(StreamingModel& model, const RawWindow& window,
                                            const ExitPolicy& policy, std::size_t sample_id) {
  const std::size_t stride = model.config().stride;
  const std::size_t total = window.steps() / stride;
  require(total >= 1, "stream_window_with_exit: window shorter than one patch");
  const std::size_t t_warm = warmup_steps(model.config().warmup_ratio, total);
  model.reset();
  ExitTraceRow row;
  row.sample_id = sample_id;
  row.true_label = window.label;
  for (std::size_t p = 0; p < total; ++p) {
    Tensor logits = model.step(window_token_step(window, stride, p));
    ExitDecision d = early_exit_decide(logits, policy, p + 1, t_warm, total);
    if (d.exit) {
      row.exit_step = p + 1;
      row.predicted = d.predicted;
      row.confidence = d.confidence;
      break;
    }
  }
  row.energy_saved = energy_saved_by_exit(total, row.exit_step);
  return row;
}

inline std::string exit_trace_csv(const std::vector<ExitTraceRow>& rows) {
  std::string out =
      "sample_id,exit_step,predicted_class,true_class,confidence_at_exit,energy_saved_fraction\n";
  char buf[160];
  for (const ExitTraceRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%d,%d,%.9g,%.9g\n", r.sample_id, r.exit_step,
                  r.predicted, r.true_label, r.confidence, r.energy_saved);
    out += buf;
  }
  return out;
}

}  // namespace pasnet
