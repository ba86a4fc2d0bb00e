#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "pasnet/data.hpp"
#include "pasnet/model.hpp"
#include "pasnet/training.hpp"

namespace pasnet {

// Versioned binary container of named tensors. Layout, all little-endian:
//   "PASNETCK" | u32 version | u32 count
//   per tensor: u32 name_len | name bytes | u32 rank | u32 dims[rank] | f32 data
using TensorMap = std::map<std::string, Tensor>;

namespace detail {

constexpr char kCheckpointMagic[9] = "PASNETCK";
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace detail

inline void save_tensor_map(const TensorMap& tensors, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("save_tensor_map: cannot open " + path.string());
  f.write(detail::kCheckpointMagic, 8);
  detail::put_u32(f, detail::kCheckpointVersion);
  detail::put_u32(f, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(f, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d)
      detail::put_u32(f, static_cast<std::uint32_t>(t.dim(d)));
    for (std::size_t i = 0; i < t.size(); ++i)
      detail::put_f32(f, static_cast<float>(t[i]));
  }
}

inline TensorMap load_tensor_map(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("load_tensor_map: cannot open " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != std::string(detail::kCheckpointMagic, 8))
    throw InputError("load_tensor_map: bad magic in " + path.string());
  const std::uint32_t version = detail::get_u32(f);
  if (version != detail::kCheckpointVersion)
    throw InputError("load_tensor_map: unsupported version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(f);
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const std::uint32_t rank = detail::get_u32(f);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = detail::get_u32(f);
    Tensor t(shape);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = detail::get_f32(f);
    if (!f) throw InputError("load_tensor_map: truncated file " + path.string());
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

namespace detail {

inline void config_to_map(const ModelConfig& c, TensorMap& m) {
  auto put = [&](const char* k, double v) { m.emplace(std::string("config.") + k, Tensor::scalar(v)); };
  put("nodes", static_cast<double>(c.nodes));
  put("in_channels", static_cast<double>(c.in_channels));
  put("classes", static_cast<double>(c.classes));
  put("embed_dim", static_cast<double>(c.embed_dim));
  put("depth", static_cast<double>(c.depth));
  put("mlp_ratio", c.mlp_ratio);
  put("stride", static_cast<double>(c.stride));
  put("tcn_kernel", static_cast<double>(c.tcn_kernel));
  put("topo_kernel", static_cast<double>(c.topo_kernel));
  put("tau", c.tau);
  put("u_base", c.u_base);
  put("surrogate", c.surrogate == SurrogateKind::kRectangular ? 0.0 : 1.0);
  put("surrogate_width", c.surrogate_width);
  put("warmup_ratio", c.warmup_ratio);
  put("exit_threshold", c.exit_threshold);
  put("seed", static_cast<double>(c.seed));
  put("stem_self_gate", c.stem_self_gate ? 1.0 : 0.0);
  put("gate_pool_channels", c.gate_pool_channels ? 1.0 : 0.0);
  put("bptt_truncation", static_cast<double>(c.bptt_truncation));
  put("bn_eps", c.bn_eps);
  put("bn_momentum", c.bn_momentum);
}

inline double map_scalar(const TensorMap& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw InputError("checkpoint missing entry: " + key);
  return it->second[0];
}

inline ModelConfig config_from_map(const TensorMap& m) {
  ModelConfig c;
  auto get = [&](const char* k) { return map_scalar(m, std::string("config.") + k); };
  c.nodes = static_cast<std::size_t>(get("nodes"));
  c.in_channels = static_cast<std::size_t>(get("in_channels"));
  c.classes = static_cast<std::size_t>(get("classes"));
  c.embed_dim = static_cast<std::size_t>(get("embed_dim"));
  c.depth = static_cast<std::size_t>(get("depth"));
  c.mlp_ratio = get("mlp_ratio");
  c.stride = static_cast<std::size_t>(get("stride"));
  c.tcn_kernel = static_cast<std::size_t>(get("tcn_kernel"));
  c.topo_kernel = static_cast<std::size_t>(get("topo_kernel"));
  c.tau = get("tau");
  c.u_base = get("u_base");
  c.surrogate = get("surrogate") == 0.0 ? SurrogateKind::kRectangular : SurrogateKind::kArctan;
  c.surrogate_width = get("surrogate_width");
  c.warmup_ratio = get("warmup_ratio");
  c.exit_threshold = get("exit_threshold");
  c.seed = static_cast<std::uint64_t>(get("seed"));
  c.stem_self_gate = get("stem_self_gate") != 0.0;
  c.gate_pool_channels = get("gate_pool_channels") != 0.0;
  c.bptt_truncation = static_cast<std::size_t>(get("bptt_truncation"));
  c.bn_eps = get("bn_eps");
  c.bn_momentum = get("bn_momentum");
  return c;
}

}  // namespace detail

// Saves model config, parameters, BN running statistics, and (optionally)
// optimizer state. Values are stored as f32; reloading truncates precision
// accordingly.
inline void save_checkpoint(PasNet& model, const std::filesystem::path& path,
                            AdamW* opt = nullptr) {
  TensorMap m;
  detail::config_to_map(model.cfg, m);
  model.for_each_state([&](const std::string& name, Tensor& t) { m.emplace(name, t); });
  if (opt) {
    std::vector<std::pair<std::string, Tensor*>> params;
    model.for_each_param([&](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });
    opt->for_each_state(params, [&](const std::string& name, Tensor& t) { m.emplace(name, t); });
  }
  save_tensor_map(m, path);
}

inline PasNet load_checkpoint(const std::filesystem::path& path, AdamW* opt = nullptr) {
  TensorMap m = load_tensor_map(path);
  PasNet model = PasNet::init(detail::config_from_map(m));
  model.for_each_state([&](const std::string& name, Tensor& t) {
    auto it = m.find(name);
    if (it == m.end()) throw InputError("checkpoint missing tensor: " + name);
    require(it->second.shape() == t.shape(), "checkpoint shape mismatch for " + name);
    t = it->second;
  });
  if (opt) {
    std::vector<std::pair<std::string, Tensor*>> params;
    model.for_each_param([&](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });
    opt->for_each_state(params, [&](const std::string& name, Tensor& t) {
      auto it = m.find(name);
      if (it == m.end()) throw InputError("checkpoint missing optimizer tensor: " + name);
      require(it->second.shape() == t.shape(), "checkpoint shape mismatch for " + name);
      t = it->second;
    });
  }
  return model;
}

}  // namespace pasnet
