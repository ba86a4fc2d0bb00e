#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pasnet/frontend.hpp"
#include "pasnet/tensor.hpp"

namespace pasnet {

struct Sample {
  RawWindow window;
  int subject = 0;
};

using Dataset = std::vector<Sample>;

struct SyntheticConfig {
  std::size_t classes = 4;
  std::size_t samples_per_class = 50;
  std::size_t window_len = 128;  // T
  std::size_t channels = 6;      // C_in
  std::size_t nodes = 3;         // V
  std::uint64_t seed = 7;
  std::size_t subjects = 10;
  double base_freq_hz = 1.0;
  double freq_ratio = 2.0;       // class k oscillates at base * ratio^k
  double noise_sigma = 0.1;      // relative to unit signal amplitude
};

// Synthetic multi-node oscillation dataset. Each class has its own
// frequency, per-node phase offsets, and an active node subset (inactive
// nodes carry a faint echo), so both the temporal and the topological
// pathways have something to learn. Deterministic for a fixed seed.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  require(cfg.classes >= 2, "generate_synthetic: need at least two classes");
  require(cfg.subjects >= 1, "generate_synthetic: need at least one subject");
  require(cfg.channels % 3 == 0 && cfg.channels >= 3,
          "generate_synthetic: channels must form xyz triads");
  const double golden = 0.61803398874989484820;
  const double top_freq = cfg.base_freq_hz * std::pow(cfg.freq_ratio,
                                                      static_cast<double>(cfg.classes - 1));
  const double sample_rate = std::max(32.0, 4.0 * top_freq);

  Rng rng(cfg.seed);
  Dataset data;
  data.reserve(cfg.classes * cfg.samples_per_class);
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    const double freq = cfg.base_freq_hz * std::pow(cfg.freq_ratio, static_cast<double>(k));
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      Sample sample;
      sample.subject = static_cast<int>((k * cfg.samples_per_class + s) % cfg.subjects);
      sample.window.label = static_cast<int>(k);
      sample.window.sample_rate = sample_rate;
      sample.window.data = Tensor({cfg.window_len, cfg.channels, cfg.nodes});
      // Subject-specific amplitude and a random global phase per sample.
      const double subj_amp = 0.9 + 0.2 * (static_cast<double>(sample.subject) /
                                           static_cast<double>(std::max<std::size_t>(1, cfg.subjects - 1)));
      const double phase0 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      for (std::size_t t = 0; t < cfg.window_len; ++t) {
        const double time = static_cast<double>(t) / sample_rate;
        for (std::size_t v = 0; v < cfg.nodes; ++v) {
          // Class-specific active node subset: node v is active for class k
          // when (v + k) % nodes < ceil(nodes/2).
          const bool active = (v + k) % cfg.nodes < (cfg.nodes + 1) / 2;
          const double amp = subj_amp * (active ? 1.0 : 0.15);
          for (std::size_t c = 0; c < cfg.channels; ++c) {
            const double phase =
                phase0 + 2.0 * 3.14159265358979323846 *
                             std::fmod(golden * static_cast<double>((k + 1) * (v + 2) + c), 1.0);
            const double signal = amp * std::sin(2.0 * 3.14159265358979323846 * freq * time + phase);
            sample.window.data.at3(t, c, v) = signal + cfg.noise_sigma * rng.normal();
          }
        }
      }
      data.push_back(std::move(sample));
    }
  }
  return data;
}

struct SplitResult {
  Dataset train, val, test;
  std::vector<int> train_subjects, val_subjects, test_subjects;
};

// Subject-independent hold-out split: subjects (not windows) are shuffled
// and partitioned, so no subject's windows cross split boundaries.
// Fractions are rounded to whole subjects with at least one subject each.
inline SplitResult split_subject_independent(const Dataset& data, double train_frac,
                                             double val_frac, double test_frac,
                                             std::uint64_t seed) {
  require(train_frac > 0.0 && val_frac > 0.0 && test_frac > 0.0 &&
              std::fabs(train_frac + val_frac + test_frac - 1.0) < 1e-9,
          "split_subject_independent: fractions must be positive and sum to 1");
  std::set<int> subject_set;
  for (const Sample& s : data) subject_set.insert(s.subject);
  if (subject_set.size() < 3)
    throw ConfigError("split_subject_independent: need at least 3 distinct subjects");

  std::vector<int> subjects(subject_set.begin(), subject_set.end());
  Rng rng(seed);
  rng.shuffle(subjects);

  const std::size_t n = subjects.size();
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(val_frac * static_cast<double>(n)));
  std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(test_frac * static_cast<double>(n)));
  require(n_val + n_test < n, "split_subject_independent: not enough subjects for a train split");

  SplitResult r;
  r.val_subjects.assign(subjects.begin(), subjects.begin() + static_cast<long>(n_val));
  r.test_subjects.assign(subjects.begin() + static_cast<long>(n_val),
                         subjects.begin() + static_cast<long>(n_val + n_test));
  r.train_subjects.assign(subjects.begin() + static_cast<long>(n_val + n_test), subjects.end());

  auto contains = [](const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  for (const Sample& s : data) {
    if (contains(r.val_subjects, s.subject))
      r.val.push_back(s);
    else if (contains(r.test_subjects, s.subject))
      r.test.push_back(s);
    else
      r.train.push_back(s);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Window files
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint32_t kWindowMagic = 0x50415357;  // "PASW"

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

// Binary window container: 16-byte header (magic, T, C_in, V as u32 LE)
// followed by f32 LE samples, one time step after another, node-major within
// a step (all channels of node 0, then node 1, ...). Same value order as the
// CSV format.
inline void save_window_binary(const RawWindow& w, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("save_window_binary: cannot open " + path.string());
  const std::size_t T = w.steps(), C = w.channels(), V = w.nodes();
  detail::put_u32(f, detail::kWindowMagic);
  detail::put_u32(f, static_cast<std::uint32_t>(T));
  detail::put_u32(f, static_cast<std::uint32_t>(C));
  detail::put_u32(f, static_cast<std::uint32_t>(V));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t c = 0; c < C; ++c)
        detail::put_f32(f, static_cast<float>(w.data.at3(t, c, v)));
}

inline RawWindow load_window_binary(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("load_window_binary: cannot open " + path.string());
  if (detail::get_u32(f) != detail::kWindowMagic)
    throw InputError("load_window_binary: bad magic in " + path.string());
  const std::size_t T = detail::get_u32(f);
  const std::size_t C = detail::get_u32(f);
  const std::size_t V = detail::get_u32(f);
  RawWindow w;
  w.data = Tensor({T, C, V});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t c = 0; c < C; ++c) w.data.at3(t, c, v) = detail::get_f32(f);
  if (!f) throw InputError("load_window_binary: truncated file " + path.string());
  return w;
}

// CSV window: one row per time step, C_in*V comma-separated values in
// node-major column order.
inline void save_window_csv(const RawWindow& w, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw InputError("save_window_csv: cannot open " + path.string());
  char buf[48];
  for (std::size_t t = 0; t < w.steps(); ++t) {
    bool first = true;
    for (std::size_t v = 0; v < w.nodes(); ++v)
      for (std::size_t c = 0; c < w.channels(); ++c) {
        std::snprintf(buf, sizeof buf, "%.9g", w.data.at3(t, c, v));
        f << (first ? "" : ",") << buf;
        first = false;
      }
    f << '\n';
  }
}

inline RawWindow load_window_csv(const std::filesystem::path& path, std::size_t channels,
                                 std::size_t nodes) {
  std::ifstream f(path);
  if (!f) throw InputError("load_window_csv: cannot open " + path.string());
  std::vector<double> values;
  std::string line;
  std::size_t rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::stod(cell));
      ++cols;
    }
    if (cols != channels * nodes)
      throw InputError("load_window_csv: row " + std::to_string(rows) + " has " +
                       std::to_string(cols) + " values, expected " +
                       std::to_string(channels * nodes));
    ++rows;
  }
  if (rows == 0) throw InputError("load_window_csv: empty file " + path.string());
  RawWindow w;
  w.data = Tensor({rows, channels, nodes});
  std::size_t i = 0;
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t v = 0; v < nodes; ++v)
      for (std::size_t c = 0; c < channels; ++c) w.data.at3(t, c, v) = values[i++];
  return w;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string path;
  int label = 0;
  int subject = 0;
  std::string split;  // train | val | test | "" (unassigned)
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
};

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw InputError("save_manifest: cannot open " + path.string());
  f << "pasnet-manifest v1\n";
  f << "path,label,subject,split\n";
  for (const ManifestEntry& e : m.entries)
    f << e.path << ',' << e.label << ',' << e.subject << ',' << e.split << '\n';
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InputError("load_manifest: cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "pasnet-manifest v1")
    throw InputError("load_manifest: missing or unsupported version header");
  if (!std::getline(f, line) || line != "path,label,subject,split")
    throw InputError("load_manifest: bad column header");
  DatasetManifest m;
  std::size_t row = 2;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestEntry e;
    std::string cell;
    if (!std::getline(ss, e.path, ',')) throw InputError("load_manifest: bad row " + std::to_string(row));
    if (!std::getline(ss, cell, ',')) throw InputError("load_manifest: bad row " + std::to_string(row));
    e.label = std::stoi(cell);
    if (!std::getline(ss, cell, ',')) throw InputError("load_manifest: bad row " + std::to_string(row));
    e.subject = std::stoi(cell);
    std::getline(ss, e.split, ',');
    m.entries.push_back(std::move(e));
  }
  return m;
}

// Loads the windows referenced by a manifest (paths relative to the manifest
// location). CSV files need the channel/node shape; binary files carry it.
inline Dataset load_dataset(const DatasetManifest& m, const std::filesystem::path& manifest_dir,
                            const std::string& split = "", std::size_t csv_channels = 0,
                            std::size_t csv_nodes = 0) {
  Dataset data;
  for (const ManifestEntry& e : m.entries) {
    if (!split.empty() && e.split != split) continue;
    const std::filesystem::path p = manifest_dir / e.path;
    RawWindow w;
    if (p.extension() == ".csv") {
      require(csv_channels > 0 && csv_nodes > 0,
              "load_dataset: CSV windows need --channels/--nodes");
      w = load_window_csv(p, csv_channels, csv_nodes);
    } else {
      w = load_window_binary(p);
    }
    w.label = e.label;
    Sample s;
    s.window = std::move(w);
    s.subject = e.subject;
    data.push_back(std::move(s));
  }
  return data;
}

}  // namespace pasnet
