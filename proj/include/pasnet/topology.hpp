#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "pasnet/tape.hpp"
#include "pasnet/tensor.hpp"

namespace pasnet {

// Learnable node-adjacency logits plus the shared temporal kernel of the
// masked spatiotemporal convolution. The effective mask is
// sigmoid((A + A^T)/2): symmetric by construction, entries in (0,1).
struct TopologyMask {
  Tensor logits;  // [V,V]
  Tensor kernel;  // [V,V,k]

  std::size_t nodes() const { return logits.dim(0); }
  std::size_t kernel_size() const { return kernel.dim(2); }

  static TopologyMask init(std::size_t v, std::size_t k, Rng& rng) {
    TopologyMask m;
    m.logits = Tensor::zeros({v, v});  // mask starts uniform at 0.5
    const double bound = 1.0 / std::sqrt(static_cast<double>(v * k));
    m.kernel = rng.uniform_tensor({v, v, k}, -bound, bound);
    return m;
  }
};

// sigmoid((A + A^T)/2) on a square logit matrix.
inline Tensor symmetrize_mask(const Tensor& logits) {
  require(logits.rank() == 2 && logits.dim(0) == logits.dim(1),
          "symmetrize_mask: expected square matrix");
  if (!logits.all_finite()) throw InputError("symmetrize_mask: non-finite logits");
  const std::size_t V = logits.dim(0);
  Tensor out({V, V});
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t j = 0; j < V; ++j) {
      const double pre = 0.5 * (logits.at2(i, j) + logits.at2(j, i));
      out.at2(i, j) = 1.0 / (1.0 + std::exp(-pre));
    }
  return out;
}

// Tape op for the symmetrized sigmoid mask. The symmetrized pre-activation
// makes the logit gradient symmetric under transposition of index pairs, so
// the mask stays exactly symmetric across optimizer steps.
inline Var symmetrize_mask(Tape& tp, Var logits) {
  Tensor out = symmetrize_mask(tp.val(logits));
  const std::size_t V = out.dim(0);
  return tp.record(std::move(out), {logits}, [logits, V](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& M = t.val(self);
    Tensor& gl = t.grad_buffer(logits);
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t j = 0; j < V; ++j) {
        const double dsig = M.at2(i, j) * (1.0 - M.at2(i, j));
        gl.at2(i, j) += 0.5 * dsig * (g.at2(i, j) + g.at2(j, i));
      }
  });
}

namespace detail {

// Shared masked spatiotemporal convolution kernel (also used by the
// streaming engine): out[b,t,c,v] = sum_j sum_u (W[v,u,j]*M[v,u]) x[b,t-j,c,u]
// with strictly causal zero padding. The V x V masked kernel is shared
// across all channels.
inline void masked_st_conv_forward(const Tensor& x, const Tensor& kernel,
                                   const Tensor& mask, Tensor& out) {
  const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2), V = x.dim(3);
  const std::size_t k = kernel.dim(2);
  out = Tensor::zeros(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      double* orow = out.data() + ((b * T + t) * C) * V;
      for (std::size_t j = 0; j < k && j <= t; ++j) {
        const double* xrow = x.data() + ((b * T + (t - j)) * C) * V;
        for (std::size_t v = 0; v < V; ++v)
          for (std::size_t u = 0; u < V; ++u) {
            const double w = kernel.at3(v, u, j) * mask.at2(v, u);
            if (w == 0.0) continue;
            for (std::size_t c = 0; c < C; ++c) orow[c * V + v] += w * xrow[c * V + u];
          }
      }
    }
}

}  // namespace detail

// Plain masked spatiotemporal convolution on [B,T,C,V] spikes.
inline Tensor masked_st_conv(const Tensor& spikes, const TopologyMask& topo) {
  require(spikes.rank() == 4, "masked_st_conv: expected [B,T,C,V]");
  require(spikes.dim(3) == topo.nodes(), "masked_st_conv: node count mismatch");
  Tensor out;
  detail::masked_st_conv_forward(spikes, topo.kernel, symmetrize_mask(topo.logits), out);
  return out;
}

// Tape op. `mask` is the symmetrized sigmoid mask node; `kernel` the raw
// [V,V,k] temporal kernel. Because the input is binary, the forward is
// realizable as gather-and-accumulate of masked weights.
inline Var masked_st_conv(Tape& tp, Var x, Var kernel, Var mask) {
  const Tensor& X = tp.val(x);
  const Tensor& K = tp.val(kernel);
  const Tensor& M = tp.val(mask);
  require(X.rank() == 4, "masked_st_conv: expected [B,T,C,V]");
  require(K.rank() == 3 && K.dim(0) == K.dim(1), "masked_st_conv: expected [V,V,k] kernel");
  require(M.rank() == 2 && M.dim(0) == K.dim(0), "masked_st_conv: mask/kernel mismatch");
  require(X.dim(3) == K.dim(0), "masked_st_conv: node count mismatch");
  const std::size_t B = X.dim(0), T = X.dim(1), C = X.dim(2), V = X.dim(3);
  const std::size_t k = K.dim(2);

  Tensor out;
  detail::masked_st_conv_forward(X, K, M, out);
  return tp.record(std::move(out), {x, kernel, mask},
                   [x, kernel, mask, B, T, C, V, k](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& X2 = t.val(x);
    const Tensor& K2 = t.val(kernel);
    const Tensor& M2 = t.val(mask);
    const bool need_x = t.requires_grad(x);
    const bool need_k = t.requires_grad(kernel);
    const bool need_m = t.requires_grad(mask);
    Tensor* gx = need_x ? &t.grad_buffer(x) : nullptr;
    Tensor* gk = need_k ? &t.grad_buffer(kernel) : nullptr;
    Tensor* gm = need_m ? &t.grad_buffer(mask) : nullptr;

    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t2 = 0; t2 < T; ++t2) {
        const double* grow = g.data() + ((b * T + t2) * C) * V;
        for (std::size_t j = 0; j < k && j <= t2; ++j) {
          const double* xrow = X2.data() + ((b * T + (t2 - j)) * C) * V;
          double* gxrow = gx ? gx->data() + ((b * T + (t2 - j)) * C) * V : nullptr;
          for (std::size_t v = 0; v < V; ++v)
            for (std::size_t u = 0; u < V; ++u) {
              const double kw = K2.at3(v, u, j);
              const double mw = M2.at2(v, u);
              double dot = 0.0;  // sum_c g[t,c,v] * x[t-j,c,u]
              if (need_k || need_m || gxrow) {
                for (std::size_t c = 0; c < C; ++c) {
                  const double gcv = grow[c * V + v];
                  dot += gcv * xrow[c * V + u];
                  if (gxrow) gxrow[c * V + u] += gcv * kw * mw;
                }
              }
              if (gk) gk->at3(v, u, j) += dot * mw;
              if (gm) gm->at2(v, u) += dot * kw;
            }
        }
      }
  });
}

// Writes each layer's effective mask as a plain-text matrix file
// ("topo_layer{l}.txt", one row per line, 6 significant digits).
inline void export_mask_heatmaps(const std::vector<Tensor>& masks,
                                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t l = 0; l < masks.size(); ++l) {
    const Tensor& m = masks[l];
    std::ofstream f(dir / ("topo_layer" + std::to_string(l + 1) + ".txt"));
    if (!f) throw InputError("export_mask_heatmaps: cannot open output file");
    const std::size_t V = m.dim(0);
    char buf[64];
    for (std::size_t i = 0; i < V; ++i) {
      for (std::size_t j = 0; j < V; ++j) {
        std::snprintf(buf, sizeof buf, "%.6g", m.at2(i, j));
        f << (j ? " " : "") << buf;
      }
      f << '\n';
    }
  }
}

}  // namespace pasnet
