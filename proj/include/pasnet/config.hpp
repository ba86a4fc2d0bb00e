#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "pasnet/model.hpp"
#include "pasnet/training.hpp"

namespace pasnet {

// Everything a CLI run needs: model hyperparameters plus training settings.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// Hyperparameter profiles of the reference sensor setups. They set only the
// architecture scaling (nodes, channels, classes, width, depth, ratio,
// tokenizer stride); no data is fetched. `window_len` is the matching raw
// window length, used as the gen-data default.
struct Profile {
  std::string name;
  std::size_t nodes, in_channels, classes, embed_dim, depth;
  double mlp_ratio;
  std::size_t stride;
  std::size_t window_len;
};

inline const std::vector<Profile>& profiles() {
  static const std::vector<Profile> p = {
      {"pamap2", 3, 6, 12, 256, 3, 2.0, 4, 200},
      {"daily_sports", 5, 3, 19, 192, 7, 4.0, 4, 125},
      {"tnda", 5, 3, 8, 128, 5, 3.0, 4, 200},
      {"hugadb", 5, 6, 12, 128, 5, 3.0, 3, 100},
      {"usc_had", 1, 6, 12, 128, 5, 3.0, 4, 200},
      {"har70", 2, 3, 7, 96, 4, 2.5, 2, 100},
      {"parkinson", 1, 3, 2, 128, 5, 3.0, 4, 128},
  };
  return p;
}

inline const Profile& find_profile(const std::string& name) {
  for (const Profile& p : profiles())
    if (p.name == name) return p;
  std::string known;
  for (const Profile& p : profiles()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown profile '" + name + "' (known: " + known + ")");
}

inline void apply_profile(const Profile& p, ModelConfig& cfg) {
  cfg.nodes = p.nodes;
  cfg.in_channels = p.in_channels;
  cfg.classes = p.classes;
  cfg.embed_dim = p.embed_dim;
  cfg.depth = p.depth;
  cfg.mlp_ratio = p.mlp_ratio;
  cfg.stride = p.stride;
}

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace detail

// Applies one dotted key. Unknown keys are errors (fail fast).
inline void apply_config_key(RunConfig& rc, const std::string& key, const std::string& value) {
  auto to_f = [&] {
    try {
      return std::stod(value);
    } catch (...) {
      throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
    }
  };
  auto to_u = [&] { return static_cast<std::size_t>(to_f()); };

  if (key == "model.nodes") rc.model.nodes = to_u();
  else if (key == "model.in_channels") rc.model.in_channels = to_u();
  else if (key == "model.classes") rc.model.classes = to_u();
  else if (key == "model.embed_dim") rc.model.embed_dim = to_u();
  else if (key == "model.depth") rc.model.depth = to_u();
  else if (key == "model.mlp_ratio") rc.model.mlp_ratio = to_f();
  else if (key == "model.stride") rc.model.stride = to_u();
  else if (key == "model.tcn_kernel") rc.model.tcn_kernel = to_u();
  else if (key == "model.topo_kernel") rc.model.topo_kernel = to_u();
  else if (key == "model.tau") rc.model.tau = to_f();
  else if (key == "model.u_base") rc.model.u_base = to_f();
  else if (key == "model.surrogate") {
    if (value == "rectangular") rc.model.surrogate = SurrogateKind::kRectangular;
    else if (value == "arctan") rc.model.surrogate = SurrogateKind::kArctan;
    else throw ConfigError("config key 'model.surrogate': expected rectangular|arctan");
  } else if (key == "model.surrogate_width") rc.model.surrogate_width = to_f();
  else if (key == "model.warmup_ratio") {
    rc.model.warmup_ratio = to_f();
    rc.train.tse.warmup_ratio = rc.model.warmup_ratio;
  }
  else if (key == "model.exit_threshold") rc.model.exit_threshold = to_f();
  else if (key == "model.seed") rc.model.seed = static_cast<std::uint64_t>(to_f());
  else if (key == "model.stem_self_gate") rc.model.stem_self_gate = detail::parse_bool(value, key);
  else if (key == "model.gate_pool_channels")
    rc.model.gate_pool_channels = detail::parse_bool(value, key);
  else if (key == "model.bptt_truncation") rc.model.bptt_truncation = to_u();
  else if (key == "model.bn_eps") rc.model.bn_eps = to_f();
  else if (key == "model.bn_momentum") rc.model.bn_momentum = to_f();
  else if (key == "train.epochs") rc.train.epochs = to_u();
  else if (key == "train.batch_size") rc.train.batch_size = to_u();
  else if (key == "train.lr") rc.train.opt.lr = to_f();
  else if (key == "train.weight_decay") rc.train.opt.weight_decay = to_f();
  else if (key == "train.beta1") rc.train.opt.beta1 = to_f();
  else if (key == "train.beta2") rc.train.opt.beta2 = to_f();
  else if (key == "train.warmup_epochs") rc.train.sched.warmup_epochs = to_u();
  else if (key == "train.min_lr") rc.train.sched.min_lr = to_f();
  else if (key == "train.label_smoothing") rc.train.tse.label_smoothing = to_f();
  else if (key == "train.tse_weighting") {
    if (value == "uniform") rc.train.tse.weighting = TseWeighting::kUniform;
    else if (value == "linear") rc.train.tse.weighting = TseWeighting::kLinear;
    else throw ConfigError("config key 'train.tse_weighting': expected uniform|linear");
  } else if (key == "train.warmup_ratio") rc.train.tse.warmup_ratio = to_f();
  else if (key == "train.seed") rc.train.seed = static_cast<std::uint64_t>(to_f());
  else throw ConfigError("unknown config key '" + key + "'");
}

// Flat key=value config file with a version header line. '#' starts a
// comment; blank lines are ignored.
inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw InputError("load_config: cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "pasnet-config v1")
    throw ConfigError("load_config: first line must be 'pasnet-config v1'");
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string key, eq, value;
    std::istringstream ss(line);
    if (!(ss >> key)) continue;
    if (!(ss >> eq) || eq != "=" || !(ss >> value))
      throw ConfigError("load_config: line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    apply_config_key(base, key, value);
  }
  // Keep the TSE warmup in sync with the model's unless set explicitly.
  return base;
}

inline std::string config_to_text(const RunConfig& rc) {
  std::ostringstream os;
  os << "pasnet-config v1\n";
  os << "model.nodes = " << rc.model.nodes << "\n";
  os << "model.in_channels = " << rc.model.in_channels << "\n";
  os << "model.classes = " << rc.model.classes << "\n";
  os << "model.embed_dim = " << rc.model.embed_dim << "\n";
  os << "model.depth = " << rc.model.depth << "\n";
  os << "model.mlp_ratio = " << rc.model.mlp_ratio << "\n";
  os << "model.stride = " << rc.model.stride << "\n";
  os << "model.tcn_kernel = " << rc.model.tcn_kernel << "\n";
  os << "model.topo_kernel = " << rc.model.topo_kernel << "\n";
  os << "model.tau = " << rc.model.tau << "\n";
  os << "model.u_base = " << rc.model.u_base << "\n";
  os << "model.surrogate = "
     << (rc.model.surrogate == SurrogateKind::kRectangular ? "rectangular" : "arctan") << "\n";
  os << "model.surrogate_width = " << rc.model.surrogate_width << "\n";
  os << "model.warmup_ratio = " << rc.model.warmup_ratio << "\n";
  os << "model.exit_threshold = " << rc.model.exit_threshold << "\n";
  os << "model.seed = " << rc.model.seed << "\n";
  os << "model.stem_self_gate = " << (rc.model.stem_self_gate ? "true" : "false") << "\n";
  os << "model.gate_pool_channels = " << (rc.model.gate_pool_channels ? "true" : "false") << "\n";
  os << "train.epochs = " << rc.train.epochs << "\n";
  os << "train.batch_size = " << rc.train.batch_size << "\n";
  os << "train.lr = " << rc.train.opt.lr << "\n";
  os << "train.weight_decay = " << rc.train.opt.weight_decay << "\n";
  os << "train.warmup_epochs = " << rc.train.sched.warmup_epochs << "\n";
  os << "train.min_lr = " << rc.train.sched.min_lr << "\n";
  os << "train.label_smoothing = " << rc.train.tse.label_smoothing << "\n";
  os << "train.tse_weighting = "
     << (rc.train.tse.weighting == TseWeighting::kUniform ? "uniform" : "linear") << "\n";
  os << "train.warmup_ratio = " << rc.train.tse.warmup_ratio << "\n";
  os << "train.seed = " << rc.train.seed << "\n";
  return os.str();
}

}  // namespace pasnet
