#pragma once

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "pasnet/model.hpp"

namespace pasnet {

enum class CostDomain { kContinuousStem, kSpikingCore };

// One weighted layer's cost account. For spiking layers `firing_rate` is the
// fraction of dense accumulation slots actually triggered by input spikes
// (this equals the plain input firing rate for pointwise layers and differs
// only by causal boundary effects for temporal kernels), so
// sops = flops_dense * firing_rate holds exactly.
struct LayerCost {
  std::string name;
  CostDomain domain = CostDomain::kSpikingCore;
  double flops_dense = 0.0;
  double firing_rate = 1.0;
  double sops = 0.0;
};

struct NeuronOverhead {
  std::string name;
  double adds = 0.0;  // elementwise updates, excluded from MAC/SOP totals
};

struct LayerDesc {
  enum class Kind { kLinear, kConv1d, kMaskedST, kElementwise };
  Kind kind = Kind::kLinear;
  std::size_t positions = 0;     // output positions (e.g. T*V for node-wise convs)
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;   // fan-in channels (nodes V for kMaskedST)
  std::size_t kernel = 1;        // temporal taps
  std::size_t elements = 0;      // for kElementwise
};

// Dense operation count of one layer: conv/linear as output elements times
// fan-in (causal zero-padding slots included); elementwise kinds count one
// add per element.
inline double count_layer_flops(const LayerDesc& d) {
  switch (d.kind) {
    case LayerDesc::Kind::kLinear:
      return static_cast<double>(d.positions) * static_cast<double>(d.out_channels) *
             static_cast<double>(d.in_channels);
    case LayerDesc::Kind::kConv1d:
    case LayerDesc::Kind::kMaskedST:
      return static_cast<double>(d.positions) * static_cast<double>(d.out_channels) *
             static_cast<double>(d.in_channels) * static_cast<double>(d.kernel);
    case LayerDesc::Kind::kElementwise:
      return static_cast<double>(d.elements);
  }
  throw ConfigError("count_layer_flops: unknown layer kind");
}

namespace detail {

// Spikes per time step, summed over batch/channel/node: counts[t].
inline std::vector<double> spike_histogram(const Tensor& spikes) {
  const std::size_t B = spikes.dim(0), T = spikes.dim(1), E = spikes.dim(2) * spikes.dim(3);
  std::vector<double> h(T, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const double* row = spikes.data() + (b * T + t) * E;
      for (std::size_t i = 0; i < E; ++i) h[t] += row[i];
    }
  return h;
}

inline std::size_t valid_taps(std::size_t t, std::size_t T, std::size_t K, std::size_t d) {
  return std::min(K, (T - 1 - t) / d + 1);
}

}  // namespace detail

// Spike-triggered accumulations of a per-node causal channel-mixing conv
// fed by `spikes` [B,T,C,V]: every input spike at time t fans out to
// out_channels * (valid taps) weight accumulations. Returned per inference
// (averaged over the batch).
inline double conv_sops(const Tensor& spikes, std::size_t out_channels, std::size_t taps,
                        std::size_t dilation) {
  const std::size_t B = spikes.dim(0), T = spikes.dim(1);
  const std::vector<double> hist = detail::spike_histogram(spikes);
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t)
    total += hist[t] * static_cast<double>(out_channels) *
             static_cast<double>(detail::valid_taps(t, T, taps, dilation));
  return total / static_cast<double>(B);
}

// Same for the masked spatiotemporal conv: channel-shared kernel, so each
// spike fans out to V output nodes per valid tap.
inline double masked_sops(const Tensor& spikes, std::size_t taps) {
  const std::size_t B = spikes.dim(0), T = spikes.dim(1), V = spikes.dim(3);
  const std::vector<double> hist = detail::spike_histogram(spikes);
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t)
    total += hist[t] * static_cast<double>(V) *
             static_cast<double>(detail::valid_taps(t, T, taps, 1));
  return total / static_cast<double>(B);
}

// Named binary activation streams captured from one forward pass.
struct SpikeRecord {
  std::size_t batch = 1;
  std::size_t steps = 0;
  std::vector<std::pair<std::string, Tensor>> layers;

  const Tensor& find(const std::string& name) const {
    for (const auto& [n, t] : layers)
      if (n == name) return t;
    throw InputError("SpikeRecord: no layer named " + name);
  }
};

inline SpikeRecord collect_spikes(const Tape& tp, const ModelTrace& trace) {
  SpikeRecord r;
  const Tensor& stem = tp.val(trace.stem);
  r.batch = stem.dim(0);
  r.steps = stem.dim(1);
  r.layers.emplace_back("Stem", stem);
  for (std::size_t l = 0; l < trace.blocks.size(); ++l) {
    const std::string p = "Block" + std::to_string(l + 1) + "_";
    r.layers.emplace_back(p + "Topo", tp.val(trace.blocks[l].s_topo));
    r.layers.emplace_back(p + "Mid", tp.val(trace.blocks[l].s_mid));
    r.layers.emplace_back(p + "MLP1", tp.val(trace.blocks[l].s_mlp1));
    r.layers.emplace_back(p + "MLP2", tp.val(trace.blocks[l].s_mlp2));
    r.layers.emplace_back(p + "Out", tp.val(trace.blocks[l].s_out));
  }
  return r;
}

// Layer-by-segment mean firing rates (8 uniform temporal segments), plus the
// overall per-layer rate. Matrix rows follow the record's spiking layers
// except the residual mid-stream, which is cost bookkeeping rather than a
// neuron population.
struct FiringMatrix {
  std::vector<std::string> layer_names;
  Tensor rates;                  // [layers, 8]
  std::vector<double> overall;   // per layer
  static constexpr std::size_t kSegments = 8;
};

inline FiringMatrix measure_firing_rates(const SpikeRecord& record) {
  FiringMatrix m;
  std::vector<const Tensor*> tensors;
  for (const auto& [name, t] : record.layers) {
    if (name.size() >= 4 && name.substr(name.size() - 4) == "_Mid") continue;
    m.layer_names.push_back(name);
    tensors.push_back(&t);
  }
  m.rates = Tensor({m.layer_names.size(), FiringMatrix::kSegments});
  for (std::size_t li = 0; li < tensors.size(); ++li) {
    const Tensor& s = *tensors[li];
    const std::size_t B = s.dim(0), T = s.dim(1), E = s.dim(2) * s.dim(3);
    double total = 0.0;
    for (std::size_t seg = 0; seg < FiringMatrix::kSegments; ++seg) {
      const std::size_t t0 = seg * T / FiringMatrix::kSegments;
      const std::size_t t1 = (seg + 1) * T / FiringMatrix::kSegments;
      double acc = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = t0; t < t1; ++t) {
          const double* row = s.data() + (b * T + t) * E;
          for (std::size_t i = 0; i < E; ++i) acc += row[i];
        }
      const std::size_t n = B * (t1 - t0) * E;
      m.rates.at2(li, seg) = n > 0 ? acc / static_cast<double>(n) : 0.0;
      total += acc;
    }
    m.overall.push_back(total / static_cast<double>(B * T * E));
  }
  return m;
}

// Cost accounts of every weighted layer for one inference. Binary-input
// layers (topology conv, both TCN convs) are spiking-core and SOP-billed;
// the stem embedding, the Stage-1 projection (its input current is real
// valued), and the classifier head are continuous.
inline std::vector<LayerCost> model_layer_costs(const PasNet& model, const SpikeRecord& rec) {
  const ModelConfig& c = model.cfg;
  const std::size_t T = rec.steps, V = c.nodes, D = c.embed_dim;
  std::vector<LayerCost> costs;

  auto continuous = [&](std::string name, double flops) {
    LayerCost lc;
    lc.name = std::move(name);
    lc.domain = CostDomain::kContinuousStem;
    lc.flops_dense = flops;
    lc.firing_rate = 1.0;
    lc.sops = 0.0;
    costs.push_back(std::move(lc));
  };
  auto spiking = [&](std::string name, double flops, double sops) {
    LayerCost lc;
    lc.name = std::move(name);
    lc.domain = CostDomain::kSpikingCore;
    lc.flops_dense = flops;
    lc.sops = sops;
    lc.firing_rate = flops > 0.0 ? sops / flops : 0.0;
    costs.push_back(std::move(lc));
  };

  continuous("Stem_Conv", count_layer_flops({LayerDesc::Kind::kLinear, T * V, D, c.token_dim()}));
  for (std::size_t l = 1; l <= c.depth; ++l) {
    const std::string p = "Block" + std::to_string(l) + "_";
    const BlockConfig bc = c.block(l);
    const std::size_t H = bc.hidden_dim();
    const std::size_t d_eff = bc.effective_dilation(T);
    const Tensor& s_in = l == 1 ? rec.find("Stem") : rec.find("Block" + std::to_string(l - 1) + "_Out");
    spiking(p + "TopoConv",
            count_layer_flops({LayerDesc::Kind::kMaskedST, T * V, D, V, c.topo_kernel}),
            masked_sops(s_in, c.topo_kernel));
    continuous(p + "Proj", count_layer_flops({LayerDesc::Kind::kLinear, T * V, D, D}));
    spiking(p + "TCN1",
            count_layer_flops({LayerDesc::Kind::kConv1d, T * V, H, D, c.tcn_kernel}),
            conv_sops(rec.find(p + "Mid"), H, c.tcn_kernel, d_eff));
    spiking(p + "TCN2", count_layer_flops({LayerDesc::Kind::kConv1d, T * V, D, H, 1}),
            conv_sops(rec.find(p + "MLP1"), D, 1, 1));
  }
  continuous("Head", count_layer_flops({LayerDesc::Kind::kLinear, T, c.classes, D}));
  return costs;
}

// Elementwise neuron-update tallies (EMA, LIF, residual clamps), reported
// separately and never billed into Eq.-level MAC/SOP totals.
inline std::vector<NeuronOverhead> model_neuron_overhead(const PasNet& model,
                                                         std::size_t steps) {
  const ModelConfig& c = model.cfg;
  const double elems = static_cast<double>(steps * c.embed_dim * c.nodes);
  std::vector<NeuronOverhead> out;
  out.push_back({"Stem_LIF", elems});
  for (std::size_t l = 1; l <= c.depth; ++l) {
    const std::string p = "Block" + std::to_string(l) + "_";
    const double helems =
        static_cast<double>(steps * c.block(l).hidden_dim() * c.nodes);
    out.push_back({p + "Gate_EMA", elems});
    out.push_back({p + "DynLIF", elems});
    out.push_back({p + "MLP1_LIF", helems});
    out.push_back({p + "MLP2_LIF", elems});
    out.push_back({p + "Residuals", 2.0 * elems});
  }
  return out;
}

struct EnergyConfig {
  double e_mac_pj = 4.6;  // 45nm FP32 multiply-accumulate
  double e_ac_pj = 0.1;   // 45nm integer accumulate
};

struct EnergyReport {
  double e_mac_pj = 4.6;
  double e_ac_pj = 0.1;
  double stem_pj = 0.0;              // continuous layers at E_MAC
  double core_pj = 0.0;              // spiking layers at E_AC
  double total_pj = 0.0;             // stem + core
  double dense_equivalent_pj = 0.0;  // the same dense FLOPs all at E_MAC
  double total_flops = 0.0;
  double total_sops = 0.0;
  std::vector<LayerCost> layers;
};

inline EnergyReport estimate_energy(const std::vector<LayerCost>& costs,
                                    const EnergyConfig& cfg = {}) {
  EnergyReport r;
  r.e_mac_pj = cfg.e_mac_pj;
  r.e_ac_pj = cfg.e_ac_pj;
  r.layers = costs;
  for (const LayerCost& lc : costs) {
    r.total_flops += lc.flops_dense;
    r.dense_equivalent_pj += lc.flops_dense * cfg.e_mac_pj;
    if (lc.domain == CostDomain::kContinuousStem) {
      r.stem_pj += lc.flops_dense * cfg.e_mac_pj;
    } else {
      r.core_pj += lc.sops * cfg.e_ac_pj;
      r.total_sops += lc.sops;
    }
  }
  r.total_pj = r.stem_pj + r.core_pj;
  return r;
}

// Dynamic energy saved by exiting a T'-step stream at step `exit_step`
// (1-based): (T' - exit) / T'.
inline double energy_saved_by_exit(std::size_t total_steps, std::size_t exit_step) {
  require(exit_step >= 1 && exit_step <= total_steps,
          "energy_saved_by_exit: exit step out of range");
  return static_cast<double>(total_steps - exit_step) / static_cast<double>(total_steps);
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

inline std::string energy_report_csv(const EnergyReport& r,
                                     const std::vector<NeuronOverhead>& overhead = {}) {
  std::string out = "layer,domain,flops_dense,firing_rate,sops,energy_pj\n";
  char buf[256];
  for (const LayerCost& lc : r.layers) {
    const bool cont = lc.domain == CostDomain::kContinuousStem;
    const double pj = cont ? lc.flops_dense * r.e_mac_pj : lc.sops * r.e_ac_pj;
    std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g\n", lc.name.c_str(),
                  cont ? "continuous" : "spiking", lc.flops_dense, lc.firing_rate, lc.sops, pj);
    out += buf;
  }
  for (const NeuronOverhead& o : overhead) {
    std::snprintf(buf, sizeof buf, "%s,neuron_overhead,%.17g,,,\n", o.name.c_str(), o.adds);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "TOTAL,,%.17g,,%.17g,%.17g\n", r.total_flops, r.total_sops,
                r.total_pj);
  out += buf;
  return out;
}

inline std::string energy_report_table(const EnergyReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s %-11s %14s %8s %14s %12s\n", "layer", "domain", "FLOPs",
                "Fr", "SOPs", "pJ");
  out += buf;
  for (const LayerCost& lc : r.layers) {
    const bool cont = lc.domain == CostDomain::kContinuousStem;
    const double pj = cont ? lc.flops_dense * r.e_mac_pj : lc.sops * r.e_ac_pj;
    std::snprintf(buf, sizeof buf, "%-18s %-11s %14.0f %8.4f %14.1f %12.2f\n", lc.name.c_str(),
                  cont ? "continuous" : "spiking", lc.flops_dense, lc.firing_rate, lc.sops, pj);
    out += buf;
  }
  std::snprintf(buf, sizeof buf,
                "total %.4g uJ  (stem %.4g uJ + core %.4g uJ); dense-equivalent %.4g uJ\n",
                r.total_pj * 1e-6, r.stem_pj * 1e-6, r.core_pj * 1e-6,
                r.dense_equivalent_pj * 1e-6);
  out += buf;
  return out;
}

inline std::string firing_matrix_csv(const FiringMatrix& m) {
  std::string out = "layer,seg1,seg2,seg3,seg4,seg5,seg6,seg7,seg8,overall\n";
  char buf[320];
  for (std::size_t i = 0; i < m.layer_names.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                  m.layer_names[i].c_str(), m.rates.at2(i, 0), m.rates.at2(i, 1),
                  m.rates.at2(i, 2), m.rates.at2(i, 3), m.rates.at2(i, 4), m.rates.at2(i, 5),
                  m.rates.at2(i, 6), m.rates.at2(i, 7), m.overall[i]);
    out += buf;
  }
  return out;
}

}  // namespace pasnet
