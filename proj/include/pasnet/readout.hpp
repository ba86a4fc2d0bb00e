#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pasnet/ops.hpp"
#include "pasnet/tape.hpp"
#include "pasnet/tensor.hpp"

namespace pasnet {

// Fused mean+max pooling across the node axis, per step (plain form, for
// one step [C,V] -> [C]).
inline Tensor spatial_pool_step(const Tensor& x) {
  require(x.rank() == 2, "spatial_pool_step: expected [C,V]");
  const std::size_t C = x.dim(0), V = x.dim(1);
  Tensor out({C});
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0, mx = x.at2(c, 0);
    for (std::size_t v = 0; v < V; ++v) {
      sum += x.at2(c, v);
      mx = std::max(mx, x.at2(c, v));
    }
    out[c] = sum / static_cast<double>(V) + mx;
  }
  return out;
}

// Tape op: [B,T,C,V] -> [B,T,C], mean over V plus max over V. The max
// gradient routes to the first maximal node.
inline Var spatial_pool(Tape& tp, Var x) {
  const Tensor& X = tp.val(x);
  require(X.rank() == 4 && X.dim(3) >= 1, "spatial_pool: expected [B,T,C,V]");
  const std::size_t B = X.dim(0), T = X.dim(1), C = X.dim(2), V = X.dim(3);
  Tensor out({B, T, C});
  std::vector<std::uint32_t> argmax(B * T * C);
  for (std::size_t btc = 0; btc < B * T * C; ++btc) {
    const double* xs = X.data() + btc * V;
    double sum = xs[0], mx = xs[0];
    std::uint32_t am = 0;
    for (std::size_t v = 1; v < V; ++v) {
      sum += xs[v];
      if (xs[v] > mx) {
        mx = xs[v];
        am = static_cast<std::uint32_t>(v);
      }
    }
    out[btc] = sum / static_cast<double>(V) + mx;
    argmax[btc] = am;
  }
  return tp.record(std::move(out), {x},
                   [x, V, argmax = std::move(argmax)](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x);
    const double inv = 1.0 / static_cast<double>(V);
    for (std::size_t btc = 0; btc < g.size(); ++btc) {
      double* gxs = gx.data() + btc * V;
      const double gv = g[btc];
      for (std::size_t v = 0; v < V; ++v) gxs[v] += gv * inv;
      gxs[argmax[btc]] += gv;
    }
  });
}

inline Tensor softmax(const Tensor& logits) {
  Tensor p = logits;
  double mx = p[0];
  for (std::size_t i = 1; i < p.size(); ++i) mx = std::max(mx, p[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(p[i] - mx);
    z += p[i];
  }
  for (std::size_t i = 0; i < p.size(); ++i) p[i] /= z;
  return p;
}

enum class TseWeighting { kUniform, kLinear };

struct TseConfig {
  double warmup_ratio = 0.2;  // fraction of steps masked at the start
  TseWeighting weighting = TseWeighting::kUniform;
  double label_smoothing = 0.1;

  void validate() const {
    require(warmup_ratio >= 0.0 && warmup_ratio <= 1.0, "TseConfig: warmup_ratio in [0,1]");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0, "TseConfig: label_smoothing in [0,1)");
  }
};

// Number of masked initial steps for a sequence of given length.
inline std::size_t warmup_steps(double ratio, std::size_t total_steps) {
  require(total_steps >= 1, "warmup_steps: empty sequence");
  auto w = static_cast<std::size_t>(ratio * static_cast<double>(total_steps));
  return std::min(w, total_steps - 1);
}

// Per-step logits of one sample plus its warmup horizon.
struct LogitSequence {
  Tensor logits;  // [T,K]
  std::size_t t_warm = 0;
};

namespace detail {

inline double step_weight(TseWeighting w, std::size_t idx, std::size_t t_warm, std::size_t total) {
  if (w == TseWeighting::kUniform) return 1.0;
  const std::size_t n = total - t_warm;
  return static_cast<double>(idx - t_warm + 1) / static_cast<double>(n);
}

// Smoothed target mass on class k for true label y.
inline double smoothed_target(int k, int y, double ls, std::size_t classes) {
  return (k == y ? 1.0 - ls : 0.0) + ls / static_cast<double>(classes);
}

}  // namespace detail

// Temporal spike error: weighted cross-entropy over the post-warmup steps,
// normalized by the weight mass.
inline double tse_loss(const LogitSequence& seq, int label, const TseConfig& cfg) {
  cfg.validate();
  require(seq.logits.rank() == 2, "tse_loss: expected [T,K] logits");
  const std::size_t T = seq.logits.dim(0), K = seq.logits.dim(1);
  if (seq.t_warm >= T) throw ConfigError("tse_loss: warmup must leave at least one step");
  require(label >= 0 && static_cast<std::size_t>(label) < K, "tse_loss: label out of range");

  double wsum = 0.0, acc = 0.0;
  for (std::size_t t = seq.t_warm; t < T; ++t) {
    Tensor row({K});
    for (std::size_t k = 0; k < K; ++k) row[k] = seq.logits.at2(t, k);
    const Tensor p = softmax(row);
    double ce = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double q = detail::smoothed_target(static_cast<int>(k), label, cfg.label_smoothing, K);
      if (q > 0.0) ce -= q * std::log(std::max(p[k], 1e-300));
    }
    const double w = detail::step_weight(cfg.weighting, t, seq.t_warm, T);
    acc += w * ce;
    wsum += w;
  }
  return acc / wsum;
}

// Tape op: mean over the batch of per-sample TSE losses on [B,T,K] logits.
inline Var tse_loss(Tape& tp, Var logits, const std::vector<int>& labels,
                    const TseConfig& cfg, std::size_t t_warm) {
  cfg.validate();
  const Tensor& L = tp.val(logits);
  require(L.rank() == 3, "tse_loss: expected [B,T,K] logits");
  const std::size_t B = L.dim(0), T = L.dim(1), K = L.dim(2);
  require(labels.size() == B, "tse_loss: label count mismatch");
  if (t_warm >= T) throw ConfigError("tse_loss: warmup must leave at least one step");

  // Cache softmax probabilities of the supervised steps for the backward.
  Tensor probs({B, T, K});
  double wsum = 0.0;
  for (std::size_t t = t_warm; t < T; ++t) wsum += detail::step_weight(cfg.weighting, t, t_warm, T);

  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const int y = labels[b];
    require(y >= 0 && static_cast<std::size_t>(y) < K, "tse_loss: label out of range");
    for (std::size_t t = t_warm; t < T; ++t) {
      Tensor row({K});
      for (std::size_t k = 0; k < K; ++k) row[k] = L.at3(b, t, k);
      const Tensor p = softmax(row);
      double ce = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        probs.at3(b, t, k) = p[k];
        const double q = detail::smoothed_target(static_cast<int>(k), y, cfg.label_smoothing, K);
        if (q > 0.0) ce -= q * std::log(std::max(p[k], 1e-300));
      }
      total += detail::step_weight(cfg.weighting, t, t_warm, T) * ce;
    }
  }
  total /= wsum * static_cast<double>(B);

  return tp.record(Tensor::scalar(total), {logits},
                   [logits, labels, cfg, t_warm, wsum, B, T, K,
                    probs = std::move(probs)](Tape& t, Var self) {
    const double g = t.grad(self)[0];
    Tensor& gl = t.grad_buffer(logits);
    const double norm = g / (wsum * static_cast<double>(B));
    for (std::size_t b = 0; b < B; ++b) {
      const int y = labels[b];
      for (std::size_t tt = t_warm; tt < T; ++tt) {
        const double w = detail::step_weight(cfg.weighting, tt, t_warm, T) * norm;
        for (std::size_t k = 0; k < K; ++k) {
          const double q = detail::smoothed_target(static_cast<int>(k), y, cfg.label_smoothing, K);
          gl.at3(b, tt, k) += w * (probs.at3(b, tt, k) - q);
        }
      }
    }
  });
}

// Confidence-driven early exit: exit as soon as the maximum softmax
// probability clears the threshold, never during warmup, always by the
// final step.
struct ExitPolicy {
  double confidence_threshold = 0.9;

  void validate() const {
    require(confidence_threshold > 0.0 && confidence_threshold <= 1.0,
            "ExitPolicy: threshold must be in (0,1]");
  }
};

struct ExitDecision {
  bool exit = false;
  int predicted = -1;
  double confidence = 0.0;
};

// `t` is the 1-based step index; `total_steps` the full horizon T'.
inline ExitDecision early_exit_decide(const Tensor& logits_step, const ExitPolicy& policy,
                                      std::size_t t, std::size_t t_warm,
                                      std::size_t total_steps) {
  policy.validate();
  require(t >= 1 && t <= total_steps, "early_exit_decide: step out of range");
  const Tensor p = softmax(logits_step);
  std::size_t best = 0;
  for (std::size_t k = 1; k < p.size(); ++k)
    if (p[k] > p[best]) best = k;
  ExitDecision d;
  d.predicted = static_cast<int>(best);
  d.confidence = p[best];
  if (t <= t_warm)
    d.exit = false;
  else
    d.exit = p[best] >= policy.confidence_threshold || t == total_steps;
  return d;
}

// Offline evaluation rule: per-step accuracy of the argmax prediction over a
// dataset, plus the earliest step whose accuracy reaches 99.5% of the peak.
struct AccuracyCurve {
  std::vector<double> accuracy;  // per step, index 0 = step 1
  std::size_t exit_step = 1;     // 1-based
};

inline AccuracyCurve cumulative_accuracy_curve(const std::vector<Tensor>& logit_seqs,
                                               const std::vector<int>& labels) {
  if (logit_seqs.empty()) throw InputError("cumulative_accuracy_curve: empty dataset");
  require(logit_seqs.size() == labels.size(), "cumulative_accuracy_curve: size mismatch");
  const std::size_t T = logit_seqs.front().dim(0);
  const std::size_t K = logit_seqs.front().dim(1);
  AccuracyCurve curve;
  curve.accuracy.assign(T, 0.0);
  for (std::size_t i = 0; i < logit_seqs.size(); ++i) {
    const Tensor& L = logit_seqs[i];
    require(L.dim(0) == T && L.dim(1) == K, "cumulative_accuracy_curve: ragged sequences");
    for (std::size_t t = 0; t < T; ++t) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (L.at2(t, k) > L.at2(t, best)) best = k;
      if (static_cast<int>(best) == labels[i]) curve.accuracy[t] += 1.0;
    }
  }
  for (double& a : curve.accuracy) a /= static_cast<double>(logit_seqs.size());
  const double peak = *std::max_element(curve.accuracy.begin(), curve.accuracy.end());
  curve.exit_step = T;
  for (std::size_t t = 0; t < T; ++t)
    if (curve.accuracy[t] >= 0.995 * peak) {
      curve.exit_step = t + 1;
      break;
    }
  return curve;
}

}  // namespace pasnet
