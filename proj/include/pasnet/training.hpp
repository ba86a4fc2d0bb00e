#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "pasnet/data.hpp"
#include "pasnet/model.hpp"

namespace pasnet {

struct OptimizerConfig {
  double lr = 5e-4;
  double weight_decay = 0.01;  // decoupled
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    require(lr >= 0.0, "OptimizerConfig: lr must be nonnegative");
    require(weight_decay >= 0.0, "OptimizerConfig: weight_decay must be nonnegative");
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0,
            "OptimizerConfig: betas must be in (0,1)");
    require(eps > 0.0, "OptimizerConfig: eps must be positive");
  }
};

// AdamW with decoupled weight decay and bias-corrected moments. Moment
// buffers are keyed by the parameter's position in the update list, which
// must stay stable across steps.
class AdamW {
 public:
  explicit AdamW(OptimizerConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::size_t step_count() const { return step_; }
  const OptimizerConfig& config() const { return cfg_; }

  void step(const std::vector<std::pair<std::string, Tensor*>>& params,
            const std::vector<const Tensor*>& grads) {
    require(params.size() == grads.size(), "AdamW: parameter/gradient count mismatch");
    if (m1_.empty()) {
      for (auto& [name, p] : params) {
        m1_.push_back(Tensor::zeros(p->shape()));
        m2_.push_back(Tensor::zeros(p->shape()));
      }
    }
    require(m1_.size() == params.size(), "AdamW: parameter list changed size");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i].second;
      const Tensor& g = *grads[i];
      require(p.same_shape(g), "AdamW: gradient shape mismatch for " + params[i].first);
      Tensor& m = m1_[i];
      Tensor& v = m2_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j];
        if (!std::isfinite(gj))
          throw TrainingError("non-finite gradient in parameter " + params[i].first);
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        p[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[j]);
      }
    }
  }

  // Optimizer state traversal for checkpointing, names keyed by parameter.
  template <typename F>
  void for_each_state(const std::vector<std::pair<std::string, Tensor*>>& params, F&& f) {
    if (m1_.empty())
      for (auto& [name, p] : params) {
        m1_.push_back(Tensor::zeros(p->shape()));
        m2_.push_back(Tensor::zeros(p->shape()));
      }
    step_scalar_ = Tensor::scalar(static_cast<double>(step_));
    f(std::string("opt.step"), step_scalar_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      f("opt.m1." + params[i].first, m1_[i]);
      f("opt.m2." + params[i].first, m2_[i]);
    }
    step_ = static_cast<std::size_t>(step_scalar_[0]);
  }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> m1_, m2_;
  std::size_t step_ = 0;
  Tensor step_scalar_;
};

struct ScheduleConfig {
  std::size_t warmup_epochs = 12;
  std::size_t total_epochs = 30;
  double min_lr = 1e-7;

  void validate() const {
    require(min_lr > 0.0, "ScheduleConfig: min_lr must be positive");
    require(warmup_epochs < total_epochs, "ScheduleConfig: warmup must end before total");
  }
};

// Linear warmup 0 -> base over warmup_epochs, then cosine annealing down to
// min_lr at total_epochs. Callers pass 1-based epochs so the first epoch
// already gets base/warmup rather than zero.
inline double lr_at(std::size_t epoch, double base_lr, const ScheduleConfig& cfg) {
  cfg.validate();
  require(epoch <= cfg.total_epochs, "lr_at: epoch beyond schedule");
  if (epoch < cfg.warmup_epochs)
    return base_lr * static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
  const double progress = static_cast<double>(epoch - cfg.warmup_epochs) /
                          static_cast<double>(cfg.total_epochs - cfg.warmup_epochs);
  return cfg.min_lr + (base_lr - cfg.min_lr) * (1.0 + std::cos(3.14159265358979323846 * progress)) / 2.0;
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  OptimizerConfig opt;
  ScheduleConfig sched;
  TseConfig tse;
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
};

namespace detail {

using Snapshot = std::vector<Tensor>;

inline Snapshot snapshot_state(PasNet& m) {
  Snapshot s;
  m.for_each_state([&](const std::string&, Tensor& t) { s.push_back(t); });
  return s;
}

inline void restore_state(PasNet& m, const Snapshot& s) {
  std::size_t i = 0;
  m.for_each_state([&](const std::string&, Tensor& t) { t = s[i++]; });
}

}  // namespace detail

// Frozen-model evaluation over a dataset: mean TSE loss and accuracy of the
// final-step prediction.
inline std::pair<double, double> evaluate(PasNet& model, const Dataset& data,
                                          const TseConfig& tse, std::size_t batch_size = 32) {
  if (data.empty()) throw InputError("evaluate: empty dataset");
  model.set_mode(TbnParams::Mode::kFrozen);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, data.size());
    std::vector<TokenTensor> toks;
    std::vector<int> labels;
    for (std::size_t i = begin; i < end; ++i) {
      toks.push_back(tokenize(data[i].window, model.cfg.stride));
      labels.push_back(data[i].window.label);
    }
    Tape tp;
    ModelVars mv = bind_model(tp, model, /*trainable=*/false);
    Var logits = model_forward(tp, model, mv, tp.input(stack_tokens(toks)), /*training=*/false);
    const Tensor& L = tp.val(logits);
    const std::size_t T = L.dim(1), K = L.dim(2);
    const std::size_t t_warm = warmup_steps(tse.warmup_ratio, T);
    for (std::size_t b = 0; b < labels.size(); ++b) {
      LogitSequence seq;
      seq.logits = Tensor({T, K});
      for (std::size_t i = 0; i < T * K; ++i) seq.logits[i] = L[b * T * K + i];
      seq.t_warm = t_warm;
      loss += tse_loss(seq, labels[b], tse);
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (seq.logits.at2(T - 1, k) > seq.logits.at2(T - 1, best)) best = k;
      if (static_cast<int>(best) == labels[b]) ++correct;
    }
  }
  return {loss / static_cast<double>(data.size()),
          static_cast<double>(correct) / static_cast<double>(data.size())};
}

// Full training loop: shuffled mini-batches, TSE loss over the unrolled
// forward, AdamW with the warmup+cosine schedule, model selection by peak
// validation accuracy. Deterministic for a fixed seed. On divergence the
// model is restored to the end of the last finite epoch and a TrainingError
// is thrown.
inline TrainResult train(PasNet& model, const Dataset& train_set, const Dataset& val_set,
                         const TrainConfig& cfg, AdamW* opt_out = nullptr) {
  if (train_set.empty() || val_set.empty()) throw InputError("train: empty dataset");
  cfg.opt.validate();
  cfg.tse.validate();
  ScheduleConfig sched = cfg.sched;
  sched.total_epochs = std::max(cfg.epochs, sched.warmup_epochs + 1);
  sched.validate();

  AdamW local_opt(cfg.opt);
  AdamW& opt = opt_out ? *opt_out : local_opt;

  std::vector<std::pair<std::string, Tensor*>> params;
  model.for_each_param([&](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });

  // Tokens are static; compute them once.
  std::vector<TokenTensor> tokens;
  tokens.reserve(train_set.size());
  for (const Sample& s : train_set) tokens.push_back(tokenize(s.window, model.cfg.stride));
  const std::size_t T = tokens.front().steps();
  const std::size_t t_warm = warmup_steps(cfg.tse.warmup_ratio, T);

  Rng shuffle_rng(cfg.seed);
  TrainResult result;
  double best_val_loss_ = 0.0;
  detail::Snapshot best = detail::snapshot_state(model);
  detail::Snapshot last_good = best;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // A zero base rate means "frozen" and bypasses the min_lr floor.
    const double lr = cfg.opt.lr == 0.0 ? 0.0 : lr_at(epoch, cfg.opt.lr, sched);
    opt.set_lr(lr);
    shuffle_rng.shuffle(order);
    model.set_mode(TbnParams::Mode::kTraining);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      std::vector<TokenTensor> batch_tokens;
      std::vector<int> labels;
      for (std::size_t i = begin; i < end; ++i) {
        batch_tokens.push_back(tokens[order[i]]);
        labels.push_back(train_set[order[i]].window.label);
      }
      Tape tp;
      ModelVars mv = bind_model(tp, model, /*trainable=*/true);
      Var logits = model_forward(tp, model, mv, tp.input(stack_tokens(batch_tokens)),
                                 /*training=*/true);
      Var loss = tse_loss(tp, logits, labels, cfg.tse, t_warm);
      const double loss_val = tp.val(loss)[0];
      if (!std::isfinite(loss_val)) {
        detail::restore_state(model, last_good);
        throw TrainingError("training diverged (non-finite loss) at epoch " +
                            std::to_string(epoch));
      }
      epoch_loss += loss_val;
      ++batches;
      tp.backward(loss);
      std::vector<const Tensor*> grads;
      grads.reserve(mv.named.size());
      for (auto& [name, var] : mv.named) grads.push_back(&tp.grad(var));
      opt.step(params, grads);
    }

    auto [val_loss, val_acc] = evaluate(model, val_set, cfg.tse, cfg.batch_size);
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    em.train_loss = epoch_loss / static_cast<double>(batches);
    em.val_loss = val_loss;
    em.val_acc = val_acc;
    result.history.push_back(em);
    last_good = detail::snapshot_state(model);
    // Peak validation accuracy; ties broken by validation loss.
    const bool better = result.best_epoch == 0 || val_acc > result.best_val_acc ||
                        (val_acc == result.best_val_acc && val_loss < best_val_loss_);
    if (better) {
      result.best_val_acc = val_acc;
      result.best_epoch = epoch;
      best_val_loss_ = val_loss;
      best = last_good;
    }
    if (cfg.verbose)
      std::printf("epoch %3zu  lr %.3e  train %.4f  val %.4f  acc %.4f\n", epoch, lr,
                  em.train_loss, val_loss, val_acc);
  }

  detail::restore_state(model, best);
  return result;
}

// Metrics log lines: "epoch,lr,train_loss,val_loss,val_acc" with full
// precision, so identical runs produce identical bytes.
inline std::string metrics_csv(const TrainResult& r) {
  std::string out = "epoch,lr,train_loss,val_loss,val_acc\n";
  char buf[160];
  for (const EpochMetrics& m : r.history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.lr, m.train_loss,
                  m.val_loss, m.val_acc);
    out += buf;
  }
  return out;
}

}  // namespace pasnet
