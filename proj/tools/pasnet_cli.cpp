// Command-line surface: synthetic data generation, training, evaluation,
// streaming early-exit inference, energy profiling, and the data exports
// (spike rasters, topology masks, exit traces).

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "pasnet/checkpoint.hpp"
#include "pasnet/config.hpp"
#include "pasnet/data.hpp"
#include "pasnet/metrics.hpp"
#include "pasnet/model.hpp"
#include "pasnet/profiler.hpp"
#include "pasnet/streaming.hpp"
#include "pasnet/topology.hpp"
#include "pasnet/training.hpp"

namespace fs = std::filesystem;
using namespace pasnet;

namespace {

struct CommonModelOpts {
  std::string profile;
  std::string config_file;
};

void add_model_opts(CLI::App* cmd, CommonModelOpts& opts) {
  cmd->add_option("--profile", opts.profile,
                  "hyperparameter profile (pamap2, daily_sports, tnda, hugadb, usc_had, "
                  "har70, parkinson)");
  cmd->add_option("--config", opts.config_file, "pasnet-config v1 file");
}

RunConfig resolve_config(const CommonModelOpts& opts) {
  RunConfig rc;
  if (!opts.profile.empty()) apply_profile(find_profile(opts.profile), rc.model);
  if (!opts.config_file.empty()) rc = load_config(opts.config_file, rc);
  return rc;
}

Dataset load_split(const fs::path& manifest_path, const std::string& split,
                   std::size_t channels, std::size_t nodes) {
  DatasetManifest m = load_manifest(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  const Dataset all = load_dataset(m, dir, split == "all" ? "" : split, channels, nodes);
  if (all.empty())
    throw InputError("no windows in split '" + split + "' of " + manifest_path.string());
  return all;
}

void write_text(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw InputError("cannot open " + path.string() + " for writing");
  f << text;
}

std::vector<ExitTraceRow> run_exit_traces(PasNet& model, const Dataset& data, double threshold) {
  const std::size_t steps = data.front().window.steps() / model.cfg.stride;
  StreamingModel sm = StreamingModel::fold(model, steps);
  ExitPolicy policy;
  policy.confidence_threshold = threshold;
  std::vector<ExitTraceRow> rows;
  for (std::size_t i = 0; i < data.size(); ++i)
    rows.push_back(stream_window_with_exit(sm, data[i].window, policy, i));
  return rows;
}

int cmd_gen_data(const std::string& out_dir, SyntheticConfig scfg, const std::string& format,
                 bool assign_splits, std::uint64_t split_seed) {
  Dataset data = generate_synthetic(scfg);
  fs::create_directories(out_dir);
  DatasetManifest manifest;
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "window_%04zu.%s", i, format.c_str());
    const fs::path p = fs::path(out_dir) / name;
    if (format == "csv")
      save_window_csv(data[i].window, p);
    else
      save_window_binary(data[i].window, p);
    manifest.entries.push_back({name, data[i].window.label, data[i].subject, ""});
  }
  if (assign_splits) {
    SplitResult split = split_subject_independent(data, 0.70, 0.15, 0.15, split_seed);
    auto tag = [&](const std::vector<int>& subjects, const std::string& name) {
      for (ManifestEntry& e : manifest.entries)
        for (int s : subjects)
          if (e.subject == s) e.split = name;
    };
    tag(split.train_subjects, "train");
    tag(split.val_subjects, "val");
    tag(split.test_subjects, "test");
  }
  save_manifest(manifest, fs::path(out_dir) / "manifest.csv");
  std::cout << "wrote " << data.size() << " windows (" << scfg.classes << " classes, "
            << scfg.subjects << " subjects) to " << out_dir << "\n";
  return 0;
}

int cmd_train(const CommonModelOpts& opts, const fs::path& manifest, const fs::path& out,
              const fs::path& metrics_path, std::size_t epochs_override,
              double lr_override, std::uint64_t seed_override, bool quiet) {
  RunConfig rc = resolve_config(opts);
  if (epochs_override) rc.train.epochs = epochs_override;
  if (lr_override > 0.0) rc.train.opt.lr = lr_override;
  if (seed_override) {
    rc.model.seed = seed_override;
    rc.train.seed = seed_override;
  }
  rc.train.verbose = !quiet;

  Dataset train_set = load_split(manifest, "train", rc.model.in_channels, rc.model.nodes);
  Dataset val_set = load_split(manifest, "val", rc.model.in_channels, rc.model.nodes);

  PasNet model = PasNet::init(rc.model);
  AdamW opt(rc.train.opt);
  TrainResult result;
  try {
    result = train(model, train_set, val_set, rc.train, &opt);
  } catch (const TrainingError& e) {
    save_checkpoint(model, out, &opt);  // last good state
    std::cerr << "error: " << e.what() << " (last good checkpoint written to " << out.string()
              << ")\n";
    return 1;
  }
  save_checkpoint(model, out, &opt);
  if (!metrics_path.empty()) write_text(metrics_path, metrics_csv(result));
  std::cout << "best validation accuracy " << result.best_val_acc << " at epoch "
            << result.best_epoch << "; checkpoint " << out.string() << "\n";
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& manifest, const std::string& split,
             const fs::path& confusion_out, const fs::path& curve_out) {
  PasNet model = load_checkpoint(ckpt);
  Dataset data = load_split(manifest, split, model.cfg.in_channels, model.cfg.nodes);
  model.set_mode(TbnParams::Mode::kFrozen);

  std::vector<int> truth, pred;
  std::vector<Tensor> logit_seqs;
  for (const Sample& s : data) {
    Tensor logits = eval_window_logits(model, s.window);
    const std::size_t T = logits.dim(0);
    std::size_t best = 0;
    for (std::size_t k = 1; k < model.cfg.classes; ++k)
      if (logits.at2(T - 1, k) > logits.at2(T - 1, best)) best = k;
    truth.push_back(s.window.label);
    pred.push_back(static_cast<int>(best));
    logit_seqs.push_back(std::move(logits));
  }
  std::cout << "samples " << data.size() << "  accuracy " << accuracy(truth, pred)
            << "  macro-F1 " << macro_f1(truth, pred, model.cfg.classes) << "\n";
  if (!confusion_out.empty())
    write_text(confusion_out, confusion_csv(confusion_matrix(truth, pred, model.cfg.classes)));
  if (!curve_out.empty()) {
    const AccuracyCurve curve = cumulative_accuracy_curve(logit_seqs, truth);
    std::string csv = "step,accuracy\n";
    char buf[64];
    for (std::size_t t = 0; t < curve.accuracy.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g\n", t + 1, curve.accuracy[t]);
      csv += buf;
    }
    write_text(curve_out, csv);
    std::cout << "99.5%-of-peak exit step " << curve.exit_step << " of "
              << curve.accuracy.size() << "  (dynamic energy saved "
              << 100.0 * energy_saved_by_exit(curve.accuracy.size(), curve.exit_step)
              << "%)\n";
  }
  return 0;
}

int cmd_infer_stream(const fs::path& ckpt, const fs::path& manifest, const std::string& split,
                     double threshold, const fs::path& trace_out) {
  PasNet model = load_checkpoint(ckpt);
  Dataset data = load_split(manifest, split, model.cfg.in_channels, model.cfg.nodes);
  const double th = threshold > 0.0 ? threshold : model.cfg.exit_threshold;
  std::vector<ExitTraceRow> rows = run_exit_traces(model, data, th);

  double mean_exit = 0.0, mean_saved = 0.0;
  std::size_t correct = 0;
  for (const ExitTraceRow& r : rows) {
    mean_exit += static_cast<double>(r.exit_step);
    mean_saved += r.energy_saved;
    correct += r.predicted == r.true_label;
  }
  const double n = static_cast<double>(rows.size());
  std::cout << "samples " << rows.size() << "  exit-accuracy " << static_cast<double>(correct) / n
            << "  mean-exit-step " << mean_exit / n << "  mean-energy-saved " << mean_saved / n
            << "  (threshold " << th << ")\n";
  if (!trace_out.empty()) write_text(trace_out, exit_trace_csv(rows));
  return 0;
}

int cmd_profile(const fs::path& ckpt, const fs::path& manifest, const std::string& split,
                std::size_t max_samples, const fs::path& energy_out, const fs::path& firing_out,
                const EnergyConfig& ecfg) {
  PasNet model = load_checkpoint(ckpt);
  Dataset data = load_split(manifest, split, model.cfg.in_channels, model.cfg.nodes);
  if (max_samples && data.size() > max_samples) data.resize(max_samples);
  model.set_mode(TbnParams::Mode::kFrozen);

  std::vector<TokenTensor> toks;
  for (const Sample& s : data) toks.push_back(tokenize(s.window, model.cfg.stride));
  Tape tp;
  ModelVars mv = bind_model(tp, model, false);
  ModelTrace trace;
  model_forward(tp, model, mv, tp.input(stack_tokens(toks)), false, SpikeMode::kHard, &trace);
  SpikeRecord rec = collect_spikes(tp, trace);

  const std::vector<LayerCost> costs = model_layer_costs(model, rec);
  const EnergyReport report = estimate_energy(costs, ecfg);
  const std::vector<NeuronOverhead> overhead = model_neuron_overhead(model, rec.steps);
  const FiringMatrix firing = measure_firing_rates(rec);

  std::cout << energy_report_table(report);
  if (!energy_out.empty()) write_text(energy_out, energy_report_csv(report, overhead));
  if (!firing_out.empty()) write_text(firing_out, firing_matrix_csv(firing));
  return 0;
}

int cmd_export_raster(const fs::path& ckpt, const fs::path& manifest, const std::string& split,
                      std::size_t sample_index, const fs::path& out) {
  PasNet model = load_checkpoint(ckpt);
  Dataset data = load_split(manifest, split, model.cfg.in_channels, model.cfg.nodes);
  if (sample_index >= data.size())
    throw InputError("sample index " + std::to_string(sample_index) + " out of range (" +
                     std::to_string(data.size()) + " samples)");
  model.set_mode(TbnParams::Mode::kFrozen);

  Tape tp;
  ModelVars mv = bind_model(tp, model, false);
  ModelTrace trace;
  Var tokens = tp.input(stack_tokens({tokenize(data[sample_index].window, model.cfg.stride)}));
  model_forward(tp, model, mv, tokens, false, SpikeMode::kHard, &trace);
  SpikeRecord rec = collect_spikes(tp, trace);

  std::string csv = "layer,t,channel,node,value\n";
  char buf[128];
  for (const auto& [name, s] : rec.layers) {
    const std::size_t T = s.dim(1), C = s.dim(2), V = s.dim(3);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t v = 0; v < V; ++v) {
          std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%d\n", name.c_str(), t, c, v,
                        static_cast<int>(s.at4(0, t, c, v)));
          csv += buf;
        }
  }
  write_text(out, csv);
  std::cout << "wrote raster of sample " << sample_index << " to " << out.string() << "\n";
  return 0;
}

int cmd_export_topology(const fs::path& ckpt, const fs::path& out_dir) {
  PasNet model = load_checkpoint(ckpt);
  std::vector<Tensor> masks;
  for (const BlockParams& b : model.blocks) masks.push_back(symmetrize_mask(b.topo.logits));
  export_mask_heatmaps(masks, out_dir);
  std::cout << "wrote " << masks.size() << " mask files to " << out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PAS-Net: multiplier-free spiking network engine for IMU activity recognition"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
  std::string gen_out = "data";
  std::string gen_format = "bin";
  SyntheticConfig scfg;
  bool gen_no_split = false;
  std::uint64_t gen_split_seed = 17;
  CommonModelOpts gen_opts;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--classes", scfg.classes);
  gen->add_option("--samples-per-class", scfg.samples_per_class);
  gen->add_option("--window", scfg.window_len, "window length T");
  gen->add_option("--channels", scfg.channels);
  gen->add_option("--nodes", scfg.nodes);
  gen->add_option("--subjects", scfg.subjects);
  gen->add_option("--seed", scfg.seed);
  gen->add_option("--noise", scfg.noise_sigma);
  gen->add_option("--base-freq", scfg.base_freq_hz);
  gen->add_option("--freq-ratio", scfg.freq_ratio);
  gen->add_option("--format", gen_format)->check(CLI::IsMember({"bin", "csv"}));
  gen->add_flag("--no-split", gen_no_split, "skip subject-independent split assignment");
  gen->add_option("--split-seed", gen_split_seed);
  gen->add_option("--profile", gen_opts.profile, "take window/channel/node shape from a profile");

  // train
  auto* tr = app.add_subcommand("train", "train a model on a manifest dataset");
  CommonModelOpts tr_opts;
  std::string tr_manifest, tr_out = "model.ckpt", tr_metrics;
  std::size_t tr_epochs = 0;
  double tr_lr = 0.0;
  std::uint64_t tr_seed = 0;
  bool tr_quiet = false;
  add_model_opts(tr, tr_opts);
  tr->add_option("--data", tr_manifest, "manifest file")->required();
  tr->add_option("--out", tr_out, "checkpoint output path");
  tr->add_option("--metrics", tr_metrics, "metrics CSV output path");
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--lr", tr_lr);
  tr->add_option("--seed", tr_seed);
  tr->add_flag("--quiet", tr_quiet);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate accuracy and macro-F1");
  std::string ev_ckpt, ev_manifest, ev_split = "test", ev_confusion;
  ev->add_option("--model", ev_ckpt)->required();
  ev->add_option("--data", ev_manifest)->required();
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  ev->add_option("--confusion", ev_confusion, "confusion matrix CSV output");
  std::string ev_curve;
  ev->add_option("--curve", ev_curve, "per-step cumulative accuracy CSV output");

  // infer-stream
  auto* is = app.add_subcommand("infer-stream", "streaming inference with early exit");
  std::string is_ckpt, is_manifest, is_split = "test", is_trace;
  double is_threshold = 0.0;
  is->add_option("--model", is_ckpt)->required();
  is->add_option("--data", is_manifest)->required();
  is->add_option("--split", is_split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  is->add_option("--threshold", is_threshold, "confidence threshold (default: model config)");
  is->add_option("--trace", is_trace, "exit trace CSV output");

  // profile
  auto* pr = app.add_subcommand("profile", "energy and firing-rate profile");
  std::string pr_ckpt, pr_manifest, pr_split = "test", pr_energy, pr_firing;
  std::size_t pr_samples = 16;
  pr->add_option("--model", pr_ckpt)->required();
  pr->add_option("--data", pr_manifest)->required();
  pr->add_option("--split", pr_split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  pr->add_option("--samples", pr_samples, "max samples to profile");
  pr->add_option("--out-energy", pr_energy, "energy report CSV output");
  pr->add_option("--out-firing", pr_firing, "firing matrix CSV output");
  EnergyConfig pr_ecfg;
  pr->add_option("--e-mac", pr_ecfg.e_mac_pj, "pJ per MAC (default 4.6, 45nm FP32)");
  pr->add_option("--e-ac", pr_ecfg.e_ac_pj, "pJ per AC (default 0.1, 45nm integer)");

  // export-raster
  auto* er = app.add_subcommand("export-raster", "per-layer binary spike trains as CSV");
  std::string er_ckpt, er_manifest, er_split = "test", er_out;
  std::size_t er_sample = 0;
  er->add_option("--model", er_ckpt)->required();
  er->add_option("--data", er_manifest)->required();
  er->add_option("--split", er_split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  er->add_option("--sample", er_sample, "sample index within the split");
  er->add_option("--out", er_out)->required();

  // export-topology
  auto* et = app.add_subcommand("export-topology", "layer-wise symmetric mask matrices");
  std::string et_ckpt, et_out = "topology";
  et->add_option("--model", et_ckpt)->required();
  et->add_option("--out", et_out, "output directory");

  // export-exit-trace
  auto* ee = app.add_subcommand("export-exit-trace", "early-exit trace CSV");
  std::string ee_ckpt, ee_manifest, ee_split = "test", ee_out;
  double ee_threshold = 0.0;
  ee->add_option("--model", ee_ckpt)->required();
  ee->add_option("--data", ee_manifest)->required();
  ee->add_option("--split", ee_split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  ee->add_option("--threshold", ee_threshold);
  ee->add_option("--out", ee_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (!gen_opts.profile.empty()) {
        const Profile& p = find_profile(gen_opts.profile);
        scfg.window_len = p.window_len;
        scfg.channels = p.in_channels;
        scfg.nodes = p.nodes;
        scfg.classes = p.classes;
      }
      return cmd_gen_data(gen_out, scfg, gen_format, !gen_no_split, gen_split_seed);
    }
    if (tr->parsed())
      return cmd_train(tr_opts, tr_manifest, tr_out, tr_metrics, tr_epochs, tr_lr, tr_seed,
                       tr_quiet);
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_manifest, ev_split, ev_confusion, ev_curve);
    if (is->parsed())
      return cmd_infer_stream(is_ckpt, is_manifest, is_split, is_threshold, is_trace);
    if (pr->parsed())
      return cmd_profile(pr_ckpt, pr_manifest, pr_split, pr_samples, pr_energy,
                         pr_firing, pr_ecfg);
    if (er->parsed()) return cmd_export_raster(er_ckpt, er_manifest, er_split, er_sample, er_out);
    if (et->parsed()) return cmd_export_topology(et_ckpt, et_out);
    if (ee->parsed()) {
      PasNet model = load_checkpoint(ee_ckpt);
      Dataset data = load_split(ee_manifest, ee_split, model.cfg.in_channels, model.cfg.nodes);
      const double th = ee_threshold > 0.0 ? ee_threshold : model.cfg.exit_threshold;
      write_text(ee_out, exit_trace_csv(run_exit_traces(model, data, th)));
      std::cout << "wrote exit trace to " << ee_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
