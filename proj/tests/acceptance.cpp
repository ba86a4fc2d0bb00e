// Acceptance suite: one test per criterion, each printing its own pass/fail
// line through the test runner.

#include <gtest/gtest.h>

#include <cmath>

#include "pasnet/checkpoint.hpp"
#include "pasnet/config.hpp"
#include "pasnet/data.hpp"
#include "pasnet/model.hpp"
#include "pasnet/profiler.hpp"
#include "pasnet/streaming.hpp"
#include "pasnet/training.hpp"
#include "testutil.hpp"

using namespace pasnet;
using testutil::grad_check;

namespace {

ModelConfig random_small_config(Rng& rng) {
  ModelConfig mc;
  mc.nodes = 1 + rng.index(3);
  mc.in_channels = 3 * (1 + rng.index(2));
  mc.classes = 2 + rng.index(4);
  mc.embed_dim = 4 + rng.index(8);
  mc.depth = 1 + rng.index(3);
  mc.mlp_ratio = 1.0 + rng.uniform();
  mc.stride = 2 + rng.index(3);
  mc.tcn_kernel = 2 + rng.index(2);
  mc.topo_kernel = 2 + rng.index(4);
  mc.seed = rng.next_u64();
  mc.gate_pool_channels = rng.uniform() < 0.25;
  return mc;
}

PasNet random_frozen_model(Rng& rng, const ModelConfig& mc) {
  PasNet model = PasNet::init(mc);
  // Drift the BN statistics with one training-mode forward pass.
  model.set_mode(TbnParams::Mode::kTraining);
  Rng data_rng(rng.next_u64());
  Tensor tokens = data_rng.uniform_tensor({2, 12, mc.token_dim(), mc.nodes}, -1.5, 1.5);
  Tape tp;
  ModelVars mv = bind_model(tp, model, false);
  model_forward(tp, model, mv, tp.input(tokens), /*training=*/true);
  model.set_mode(TbnParams::Mode::kFrozen);
  return model;
}

}  // namespace

// Criterion 1: every inter-block tensor is exactly binary, 100 random
// models and inputs.
TEST(Acceptance, C01_BinaritySuite) {
  Rng rng(1001);
  for (int rep = 0; rep < 100; ++rep) {
    ModelConfig mc = random_small_config(rng);
    PasNet model = PasNet::init(mc);
    model.set_mode(rep % 2 ? TbnParams::Mode::kTraining : TbnParams::Mode::kFrozen);
    Rng data_rng(rng.next_u64());
    const std::size_t T = 6 + rng.index(8);
    Tensor tokens = data_rng.uniform_tensor({1 + rng.index(2), T, mc.token_dim(), mc.nodes},
                                            -2.0, 2.0);
    Tape tp;
    ModelVars mv = bind_model(tp, model, false);
    ModelTrace trace;
    model_forward(tp, model, mv, tp.input(tokens), rep % 2 == 0, SpikeMode::kHard, &trace);
    ASSERT_TRUE(tp.val(trace.stem).is_binary()) << "rep " << rep;
    for (const BlockTrace& bt : trace.blocks) {
      ASSERT_TRUE(tp.val(bt.s_topo).is_binary()) << "rep " << rep;
      ASSERT_TRUE(tp.val(bt.s_mid).is_binary()) << "rep " << rep;
      ASSERT_TRUE(tp.val(bt.s_mlp1).is_binary()) << "rep " << rep;
      ASSERT_TRUE(tp.val(bt.s_mlp2).is_binary()) << "rep " << rep;
      ASSERT_TRUE(tp.val(bt.s_out).is_binary()) << "rep " << rep;
    }
  }
}

// Criterion 2: causality — perturbing inputs after t0 never changes outputs
// up to t0, bit-exact, 3 random t0 x 10 random models.
TEST(Acceptance, C02_CausalitySuite) {
  Rng rng(2002);
  for (int rep = 0; rep < 10; ++rep) {
    ModelConfig mc = random_small_config(rng);
    PasNet model = random_frozen_model(rng, mc);
    Rng data_rng(rng.next_u64());
    const std::size_t T = 12 + rng.index(6);
    Tensor tokens = data_rng.uniform_tensor({1, T, mc.token_dim(), mc.nodes}, -2.0, 2.0);

    for (int probe = 0; probe < 3; ++probe) {
      const std::size_t t0 = 1 + rng.index(T - 2);
      Tensor perturbed = tokens;
      for (std::size_t t = t0 + 1; t < T; ++t)
        for (std::size_t i = 0; i < mc.token_dim() * mc.nodes; ++i)
          perturbed[(t * mc.token_dim() * mc.nodes) + i] = data_rng.uniform(-2.0, 2.0);

      Tape tp1, tp2;
      ModelVars v1 = bind_model(tp1, model, false);
      ModelVars v2 = bind_model(tp2, model, false);
      Var l1 = model_forward(tp1, model, v1, tp1.input(tokens), false);
      Var l2 = model_forward(tp2, model, v2, tp2.input(perturbed), false);
      for (std::size_t t = 0; t <= t0; ++t)
        for (std::size_t k = 0; k < mc.classes; ++k)
          ASSERT_EQ(tp1.val(l1).at3(0, t, k), tp2.val(l2).at3(0, t, k))
              << "rep " << rep << " t0 " << t0;
    }
  }
}

// Criterion 3: dynamic threshold in [u_base, 2u_base] and gate in [0,1]
// over 10^4-step randomized sequences.
TEST(Acceptance, C03_ThresholdBounds) {
  Rng rng(3003);
  for (int rep = 0; rep < 3; ++rep) {
    LifConfig cfg;
    cfg.u_base = 0.5 + rng.uniform();
    cfg.tau = 0.1 + 0.8 * rng.uniform();
    cfg.gated = true;
    cfg.gate_alpha = 0.05 + 0.9 * rng.uniform();
    LifState state = LifState::zeros({8}, true);
    const double burst = rng.uniform();
    for (int t = 0; t < 10'000; ++t) {
      Tensor spikes = rng.bernoulli_tensor({8}, burst);
      Tensor current = rng.uniform_tensor({8}, -1.0, 2.5);
      dynamic_lif_step(state, current, spikes, cfg);
      for (std::size_t i = 0; i < 8; ++i) {
        ASSERT_GE(state.gate[i], 0.0);
        ASSERT_LE(state.gate[i], 1.0);
        const double th = cfg.u_base * (2.0 - state.gate[i]);
        ASSERT_GE(th, cfg.u_base);
        ASSERT_LE(th, 2.0 * cfg.u_base);
      }
    }
  }
}

// Criterion 4: smoothed-surrogate toy network (9 parameters, 3 steps),
// analytic vs central finite differences within 1e-4 on every parameter,
// including the EMA decay and the topology logits.
TEST(Acceptance, C04_GradientCheck) {
  Rng rng(4004);
  Tensor topo_logits = rng.uniform_tensor({2, 2}, -1.0, 1.0);
  Tensor topo_kernel = rng.uniform_tensor({2, 2, 1}, 0.4, 1.2);
  Tensor alpha_raw = Tensor::scalar(0.3);
  Tensor in_spikes({1, 3, 1, 2}, {1.0, 0.0, 1.0, 1.0, 0.0, 1.0});

  LifConfig cfg;
  cfg.gated = true;
  cfg.surrogate_width = 1.0;

  auto res = grad_check(
      {{"topo.logits", &topo_logits}, {"topo.kernel", &topo_kernel}, {"alpha_raw", &alpha_raw}},
      [&](Tape& tp, const std::vector<Var>& v) {
        Var spikes = tp.input(in_spikes);
        Var alpha = sigmoid(tp, v[2]);
        Var gate = ema_gate_scan(tp, spikes, alpha);
        Var mask = symmetrize_mask(tp, v[0]);
        Var current = masked_st_conv(tp, spikes, v[1], mask);
        Var out = lif_scan(tp, current, gate, cfg, SpikeMode::kSmoothed);
        return sum(tp, mul(tp, out, out));
      });
  EXPECT_LE(res.max_rel_err, 1e-4) << "worst: " << res.worst;
}

// Criterion 5: the effective mask stays exactly symmetric before and after
// 10 optimizer steps on random losses.
TEST(Acceptance, C05_MaskSymmetry) {
  Rng rng(5005);
  Tensor logits = rng.uniform_tensor({4, 4}, -1.0, 1.0);
  AdamW opt;
  std::vector<std::pair<std::string, Tensor*>> params{{"topo.logits", &logits}};

  auto assert_symmetric = [&]() {
    Tensor m = symmetrize_mask(logits);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) ASSERT_EQ(m.at2(i, j), m.at2(j, i));
  };
  assert_symmetric();
  for (int step = 0; step < 10; ++step) {
    Tape tp;
    Var lv = tp.param(logits);
    Var mask = symmetrize_mask(tp, lv);
    Var w = tp.input(rng.uniform_tensor({4, 4}, -1.0, 1.0));
    Var loss = sum(tp, mul(tp, mask, w));
    tp.backward(loss);
    const Tensor g = tp.grad(lv);
    opt.step(params, {&g});
    assert_symmetric();
  }
}

// Criterion 6: energy arithmetic against the reported numbers.
TEST(Acceptance, C06_EnergyArithmetic) {
  // (a) all eight (T', exit) -> saved% rows, one decimal.
  const struct {
    std::size_t total, exit;
    double saved_pct;
  } rows[] = {{50, 1, 98.0}, {50, 1, 98.0}, {32, 1, 96.9}, {32, 1, 96.9},
              {50, 3, 94.0}, {31, 4, 87.1}, {15, 4, 73.3}, {50, 49, 2.0}};
  for (const auto& r : rows) {
    const double pct = std::round(energy_saved_by_exit(r.total, r.exit) * 1000.0) / 10.0;
    EXPECT_DOUBLE_EQ(pct, r.saved_pct) << r.total << "/" << r.exit;
  }

  // (b) back-solved stem FLOPs against the reported total.
  const double sops = 4.53e6;
  const double stem_flops = (2.57e6 - sops * 0.1) / 4.6;
  EXPECT_NEAR(stem_flops, 0.460e6, 0.001e6);
  std::vector<LayerCost> costs(2);
  costs[0].name = "stem";
  costs[0].domain = CostDomain::kContinuousStem;
  costs[0].flops_dense = stem_flops;
  costs[1].name = "core";
  costs[1].domain = CostDomain::kSpikingCore;
  costs[1].flops_dense = 40.28e6;
  costs[1].sops = sops;
  costs[1].firing_rate = sops / costs[1].flops_dense;
  EXPECT_NEAR(estimate_energy(costs).total_pj, 2.57e6, 0.01e6);

  // (c) one million dense FLOPs cost exactly 4.6 uJ.
  std::vector<LayerCost> dense(1);
  dense[0].name = "dnn";
  dense[0].domain = CostDomain::kContinuousStem;
  dense[0].flops_dense = 1e6;
  EXPECT_DOUBLE_EQ(estimate_energy(dense).total_pj, 4.6e6);
}

// Criterion 7: profiler SOP totals equal instrumented accumulate counts on
// 10 random models, exactly.
TEST(Acceptance, C07_SopOracle) {
  Rng rng(7007);
  for (int rep = 0; rep < 10; ++rep) {
    ModelConfig mc = random_small_config(rng);
    PasNet model = random_frozen_model(rng, mc);
    Rng data_rng(rng.next_u64());
    const std::size_t T = 8 + rng.index(8);
    Tensor tokens = data_rng.uniform_tensor({1, T, mc.token_dim(), mc.nodes}, -1.5, 1.5);
    Tape tp;
    ModelVars mv = bind_model(tp, model, false);
    ModelTrace trace;
    model_forward(tp, model, mv, tp.input(tokens), false, SpikeMode::kHard, &trace);
    SpikeRecord rec = collect_spikes(tp, trace);

    double profiled = 0.0;
    for (const LayerCost& lc : model_layer_costs(model, rec))
      if (lc.domain == CostDomain::kSpikingCore) profiled += lc.sops;

    // Literal gather realization: count one accumulation per weight fetched
    // for an input spike.
    std::size_t counted = 0;
    for (std::size_t l = 1; l <= mc.depth; ++l) {
      const BlockConfig bc = mc.block(l);
      const Tensor& s_in =
          l == 1 ? rec.find("Stem") : rec.find("Block" + std::to_string(l - 1) + "_Out");
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < mc.embed_dim; ++c)
          for (std::size_t u = 0; u < mc.nodes; ++u)
            if (s_in.at4(0, t, c, u) == 1.0)
              for (std::size_t j = 0; j < mc.topo_kernel && t + j < T; ++j)
                counted += mc.nodes;
      const Tensor& mid = rec.find("Block" + std::to_string(l) + "_Mid");
      const std::size_t d = bc.effective_dilation(T);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < mc.embed_dim; ++c)
          for (std::size_t v = 0; v < mc.nodes; ++v)
            if (mid.at4(0, t, c, v) == 1.0)
              for (std::size_t kk = 0; kk < mc.tcn_kernel && t + kk * d < T; ++kk)
                counted += bc.hidden_dim();
      const Tensor& mlp1 = rec.find("Block" + std::to_string(l) + "_MLP1");
      for (std::size_t i = 0; i < mlp1.size(); ++i)
        if (mlp1[i] == 1.0) counted += mc.embed_dim;
    }
    ASSERT_EQ(profiled, static_cast<double>(counted)) << "rep " << rep;
  }
}

// Criterion 8: BN-folded streaming inference equals batch inference within
// 1e-5 at every step, 20 random models.
TEST(Acceptance, C08_FoldingAndStreaming) {
  Rng rng(8008);
  for (int rep = 0; rep < 20; ++rep) {
    ModelConfig mc = random_small_config(rng);
    PasNet model = random_frozen_model(rng, mc);
    Rng data_rng(rng.next_u64());
    const std::size_t steps = 8 + rng.index(8);
    RawWindow w;
    w.data = data_rng.uniform_tensor({steps * mc.stride, mc.in_channels, mc.nodes}, -2.0, 2.0);

    Tensor batch = eval_window_logits(model, w);
    StreamingModel sm = StreamingModel::fold(model, steps);
    Tensor streamed = stream_window_logits(sm, w);
    ASSERT_EQ(batch.shape(), streamed.shape());
    for (std::size_t i = 0; i < batch.size(); ++i)
      ASSERT_NEAR(batch[i], streamed[i], 1e-5) << "rep " << rep;
  }
}

// Criterion 9: end-to-end learning on the synthetic four-class task:
// validation accuracy >= 0.95 after 30 epochs and a nontrivial early-exit
// profile (mean exit step < T') at threshold 0.9.
TEST(Acceptance, C09_EndToEndLearning) {
  SyntheticConfig sc;
  sc.classes = 4;
  sc.samples_per_class = 150;
  sc.window_len = 128;  // stride 4 -> T' = 32
  sc.channels = 6;
  sc.nodes = 3;
  sc.seed = 9;
  Dataset data = generate_synthetic(sc);
  SplitResult split = split_subject_independent(data, 0.70, 0.15, 0.15, 17);

  ModelConfig mc;
  mc.nodes = 3;
  mc.in_channels = 6;
  mc.classes = 4;
  mc.embed_dim = 32;
  mc.depth = 2;
  mc.stride = 4;
  mc.seed = 7;
  PasNet model = PasNet::init(mc);

  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 32;
  tc.opt.lr = 1e-3;
  tc.seed = 7;
  TrainResult result = train(model, split.train, split.val, tc);
  EXPECT_GE(result.best_val_acc, 0.95);

  // Median validation loss over the last five epochs beats the first five.
  auto median5 = [&](std::size_t from) {
    std::vector<double> v;
    for (std::size_t i = from; i < from + 5; ++i) v.push_back(result.history[i].val_loss);
    std::sort(v.begin(), v.end());
    return v[2];
  };
  EXPECT_LT(median5(result.history.size() - 5), median5(0));

  StreamingModel sm = StreamingModel::fold(model, 32);
  ExitPolicy policy;
  policy.confidence_threshold = 0.9;
  double mean_exit = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.val.size(); ++i) {
    ExitTraceRow row = stream_window_with_exit(sm, split.val[i].window, policy, i);
    mean_exit += static_cast<double>(row.exit_step);
    correct += row.predicted == row.true_label;
  }
  mean_exit /= static_cast<double>(split.val.size());
  EXPECT_LT(mean_exit, 32.0);
  RecordProperty("mean_exit_step", static_cast<int>(mean_exit * 100));
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(split.val.size()), 0.95);
}

// Criterion 10: the pamap2 profile reproduces the reference tensor flow:
// [200,6,3] -> [50,24,3] -> [50,256,3] -> ... -> [50,12] logits.
TEST(Acceptance, C10_ShapeConformance) {
  RunConfig rc;
  apply_profile(find_profile("pamap2"), rc.model);
  ASSERT_EQ(rc.model.nodes, 3u);
  ASSERT_EQ(rc.model.in_channels, 6u);
  ASSERT_EQ(rc.model.classes, 12u);
  ASSERT_EQ(rc.model.embed_dim, 256u);
  ASSERT_EQ(rc.model.depth, 3u);
  ASSERT_EQ(rc.model.stride, 4u);

  Rng rng(1010);
  RawWindow w;
  w.data = rng.uniform_tensor({200, 6, 3}, -2.0, 2.0);

  TokenTensor tok = tokenize(w, rc.model.stride);
  EXPECT_EQ(tok.steps(), 50u);
  EXPECT_EQ(tok.channels(), 24u);
  EXPECT_EQ(tok.nodes(), 3u);

  PasNet model = PasNet::init(rc.model);
  model.set_mode(TbnParams::Mode::kFrozen);
  Tape tp;
  ModelVars mv = bind_model(tp, model, false);
  ModelTrace trace;
  Var logits = model_forward(tp, model, mv, tp.input(stack_tokens({tok})), false,
                             SpikeMode::kHard, &trace);

  const std::vector<std::size_t> spike_shape{1, 50, 256, 3};
  EXPECT_EQ(tp.val(trace.stem).shape(), spike_shape);
  for (const BlockTrace& bt : trace.blocks) EXPECT_EQ(tp.val(bt.s_out).shape(), spike_shape);
  EXPECT_EQ(tp.val(trace.pooled).shape(), (std::vector<std::size_t>{1, 50, 256}));
  EXPECT_EQ(tp.val(logits).shape(), (std::vector<std::size_t>{1, 50, 12}));

  // Topology export: depth 3 -> three symmetric 3x3 matrices.
  std::vector<Tensor> masks;
  for (const BlockParams& b : model.blocks) masks.push_back(symmetrize_mask(b.topo.logits));
  EXPECT_EQ(masks.size(), 3u);
  for (const Tensor& m : masks) {
    EXPECT_EQ(m.shape(), (std::vector<std::size_t>{3, 3}));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(m.at2(i, j), m.at2(j, i));
  }
}

// Criterion 11: TSE loss unit points — warmup masking, weight-rescaling
// invariance, perfect-prediction zero.
TEST(Acceptance, C11_TseLossSuite) {
  TseConfig plain;
  plain.label_smoothing = 0.0;

  // Perfect prediction -> zero loss.
  LogitSequence perfect;
  perfect.logits = Tensor::zeros({5, 3});
  for (std::size_t t = 0; t < 5; ++t) perfect.logits.at2(t, 2) = 60.0;
  perfect.t_warm = 1;
  EXPECT_NEAR(tse_loss(perfect, 2, plain), 0.0, 1e-12);

  // Warmup masking: CE [10,1,1,1] with one warmup step averages to 1.
  LogitSequence masked;
  masked.logits = Tensor::zeros({4, 2});
  const double ce_vals[4] = {10.0, 1.0, 1.0, 1.0};
  for (std::size_t t = 0; t < 4; ++t) {
    const double p = std::exp(-ce_vals[t]);
    masked.logits.at2(t, 0) = std::log(p / (1.0 - p));
  }
  masked.t_warm = 1;
  EXPECT_NEAR(tse_loss(masked, 0, plain), 1.0, 1e-9);

  // Weighted mean of a constant CE is that constant under any weighting.
  LogitSequence constant;
  constant.logits = Tensor::zeros({3, 2});
  for (std::size_t t = 0; t < 3; ++t) {
    const double p = std::exp(-3.0);
    constant.logits.at2(t, 0) = std::log(p / (1.0 - p));
  }
  constant.t_warm = 0;
  TseConfig lin = plain;
  lin.weighting = TseWeighting::kLinear;
  EXPECT_NEAR(tse_loss(constant, 0, plain), 3.0, 1e-9);
  EXPECT_NEAR(tse_loss(constant, 0, lin), 3.0, 1e-9);

  // Final-step warmup reduces to plain CE at the last step.
  Rng rng(1111);
  LogitSequence last;
  last.logits = rng.uniform_tensor({6, 4}, -2.0, 2.0);
  last.t_warm = 5;
  Tensor row({4});
  for (std::size_t k = 0; k < 4; ++k) row[k] = last.logits.at2(5, k);
  EXPECT_NEAR(tse_loss(last, 1, plain), -std::log(softmax(row)[1]), 1e-12);

  // Warmup must leave at least one supervised step.
  LogitSequence bad;
  bad.logits = Tensor::zeros({3, 2});
  bad.t_warm = 3;
  EXPECT_THROW(tse_loss(bad, 0, plain), ConfigError);
}
