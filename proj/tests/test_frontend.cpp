#include <gtest/gtest.h>

#include <cmath>

#include "pasnet/frontend.hpp"
#include "testutil.hpp"

using namespace pasnet;
using testutil::grad_check;

namespace {

RawWindow random_window(Rng& rng, std::size_t T, std::size_t C, std::size_t V) {
  RawWindow w;
  w.data = rng.uniform_tensor({T, C, V}, -2.0, 2.0);
  w.label = 0;
  return w;
}

// Plain channel projection, evaluated through an input-only tape.
Tensor apply_channel_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tape tp;
  Var y = channel_conv(tp, tp.input(x), tp.input(w), tp.input(b));
  return tp.val(y);
}

}  // namespace

TEST(Tokenize, Pamap2ShapeFlow) {
  Rng rng(1);
  RawWindow w = random_window(rng, 200, 6, 3);
  TokenTensor tok = tokenize(w, 4);
  ASSERT_EQ(tok.data.rank(), 3u);
  EXPECT_EQ(tok.steps(), 50u);
  EXPECT_EQ(tok.channels(), 24u);
  EXPECT_EQ(tok.nodes(), 3u);
}

TEST(Tokenize, ZeroWindowGivesZeroTokens) {
  RawWindow w;
  w.data = Tensor::zeros({16, 3, 2});
  TokenTensor tok = tokenize(w, 4);
  EXPECT_EQ(tok.data.max_abs(), 0.0);
}

TEST(Tokenize, PythagoreanMagnitude) {
  // One sample (3,4,0) in the single triad: magnitude 5 feeds the patch stats.
  RawWindow w;
  w.data = Tensor::zeros({1, 3, 1});
  w.data.at3(0, 0, 0) = 3.0;
  w.data.at3(0, 1, 0) = 4.0;
  TokenTensor tok = tokenize(w, 1);
  // Layout: ch means [3], ch maxes [3], ch vars [3], mag mean, mag max, mag var.
  EXPECT_DOUBLE_EQ(tok.data.at3(0, 9, 0), 5.0);   // magnitude mean
  EXPECT_DOUBLE_EQ(tok.data.at3(0, 10, 0), 5.0);  // magnitude max
  EXPECT_DOUBLE_EQ(tok.data.at3(0, 11, 0), 0.0);  // single-sample variance
}

TEST(Tokenize, OutputLengthIsFloorForAllStrides) {
  Rng rng(2);
  for (std::size_t T : {1u, 2u, 5u, 17u, 64u}) {
    RawWindow w = random_window(rng, T, 3, 1);
    for (std::size_t s = 1; s <= T; ++s) {
      TokenTensor tok = tokenize(w, s);
      EXPECT_EQ(tok.steps(), T / s);
    }
  }
}

TEST(Tokenize, MagnitudeBlockIsRotationInvariant) {
  Rng rng(3);
  const std::size_t T = 24, C = 6, V = 2;
  RawWindow w = random_window(rng, T, C, V);

  // Rotate each xyz triad jointly by a fixed random rotation.
  RawWindow rotated = w;
  for (std::size_t g = 0; g < C / 3; ++g) {
    const double a = rng.uniform(0.0, 6.28), b = rng.uniform(0.0, 6.28);
    const double R[3][3] = {
        {std::cos(a), -std::sin(a) * std::cos(b), std::sin(a) * std::sin(b)},
        {std::sin(a), std::cos(a) * std::cos(b), -std::cos(a) * std::sin(b)},
        {0.0, std::sin(b), std::cos(b)}};
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t v = 0; v < V; ++v) {
        double in[3] = {w.data.at3(t, 3 * g, v), w.data.at3(t, 3 * g + 1, v),
                        w.data.at3(t, 3 * g + 2, v)};
        for (int r = 0; r < 3; ++r)
          rotated.data.at3(t, 3 * g + static_cast<std::size_t>(r), v) =
              R[r][0] * in[0] + R[r][1] * in[1] + R[r][2] * in[2];
      }
  }

  TokenTensor t1 = tokenize(w, 4);
  TokenTensor t2 = tokenize(rotated, 4);
  const std::size_t mag_begin = 3 * C;
  for (std::size_t p = 0; p < t1.steps(); ++p)
    for (std::size_t c = mag_begin; c < t1.channels(); ++c)
      for (std::size_t v = 0; v < V; ++v)
        EXPECT_NEAR(t1.data.at3(p, c, v), t2.data.at3(p, c, v), 1e-9);
}

TEST(Tokenize, RejectsBadInput) {
  Rng rng(4);
  RawWindow w4 = random_window(rng, 8, 4, 1);
  EXPECT_THROW(tokenize(w4, 2), ConfigError);  // channels not in triads

  RawWindow nan_w = random_window(rng, 8, 3, 1);
  nan_w.data.at3(2, 1, 0) = std::nan("");
  EXPECT_THROW(tokenize(nan_w, 2), InputError);

  RawWindow short_w = random_window(rng, 3, 3, 1);
  EXPECT_THROW(tokenize(short_w, 4), ConfigError);  // window shorter than stride
}

TEST(Tbn, ConstantInputCollapsesToBeta) {
  TbnParams p = TbnParams::init(2);
  p.beta[0] = 0.4;
  p.beta[1] = -1.2;
  Tensor x({1, 5, 2, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i % 6 < 3) ? 7.5 : -2.0;
  Tensor y = tbn_forward(x, p);
  for (std::size_t bt = 0; bt < 5; ++bt)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t v = 0; v < 3; ++v)
        EXPECT_DOUBLE_EQ(y.at4(0, bt, c, v), p.beta[c]);
}

TEST(Tbn, BalancedPlusMinusOneIsPreserved) {
  TbnParams p = TbnParams::init(1, 1e-12);
  Tensor x({1, 4, 1, 2}, {1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0});
  Tensor y = tbn_forward(x, p);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-9);
}

TEST(Tbn, ScaleInvariance) {
  Rng rng(6);
  TbnParams p = TbnParams::init(3, 1e-12);
  Tensor x = rng.uniform_tensor({2, 6, 3, 2}, -1.0, 1.0);
  Tensor scaled = x;
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 37.5;
  Tensor y1 = tbn_forward(x, p);
  TbnParams p2 = TbnParams::init(3, 1e-12);
  Tensor y2 = tbn_forward(scaled, p2);
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y1[i], y2[i], 1e-6);
}

TEST(Tbn, TrainingModeNormalizesPerChannel) {
  Rng rng(7);
  TbnParams p = TbnParams::init(4, 1e-9);
  Tensor x = rng.uniform_tensor({3, 10, 4, 2}, -3.0, 5.0);
  Tensor y = tbn_forward(x, p);
  const std::size_t N = 3 * 10 * 2;
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = 0; t < 10; ++t)
        for (std::size_t v = 0; v < 2; ++v) mean += y.at4(b, t, c, v);
    mean /= static_cast<double>(N);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = 0; t < 10; ++t)
        for (std::size_t v = 0; v < 2; ++v) {
          const double d = y.at4(b, t, c, v) - mean;
          var += d * d;
        }
    var /= static_cast<double>(N);
    EXPECT_LE(std::fabs(mean), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Tbn, RunningStatisticsAdvanceByMomentum) {
  TbnParams p = TbnParams::init(1);
  p.momentum = 0.1;
  Tensor x = Tensor::full({1, 4, 1, 1}, 2.0);
  tbn_forward(x, p);
  // batch mean 2, var 0: running = 0.9*init + 0.1*batch
  EXPECT_NEAR(p.running_mean[0], 0.2, 1e-12);
  EXPECT_NEAR(p.running_var[0], 0.9, 1e-12);
}

TEST(Tbn, TapeOpMatchesFiniteDifferences) {
  // The loss projects onto a fixed random direction: sum(y*y) is nearly
  // invariant under batch normalization and would only probe FD noise.
  Rng rng(8);
  Tensor x = rng.uniform_tensor({2, 3, 2, 2}, -1.0, 1.0);
  Tensor gamma = rng.uniform_tensor({2}, 0.5, 1.5);
  Tensor beta = rng.uniform_tensor({2}, -0.5, 0.5);
  Tensor w = rng.uniform_tensor({2, 3, 2, 2}, -1.0, 1.0);
  for (bool training : {true, false}) {
    TbnParams p = TbnParams::init(2);
    p.running_mean[0] = 0.3;
    p.running_var[1] = 2.0;
    auto res = grad_check({{"x", &x}, {"gamma", &gamma}, {"beta", &beta}},
                          [&](Tape& tp, const std::vector<Var>& v) {
                            Var y = tbn(tp, v[0], v[1], v[2], p, training);
                            return sum(tp, mul(tp, y, tp.input(w)));
                          });
    EXPECT_LT(res.max_rel_err, 1e-5) << "training=" << training << " " << res.worst;
  }
}

TEST(FoldTbn, IdentityFold) {
  const double eps = 1e-5;
  TbnParams p = TbnParams::init(2, eps);
  p.mode = TbnParams::Mode::kFrozen;
  for (std::size_t c = 0; c < 2; ++c) p.running_var[c] = 1.0 - eps;
  Rng rng(9);
  Tensor w = rng.uniform_tensor({2, 3}, -1.0, 1.0);
  Tensor b = rng.uniform_tensor({2}, -1.0, 1.0);
  auto [fw, fb] = fold_tbn_into_conv(w, b, p);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(fw[i], w[i], 1e-12);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(fb[i], b[i], 1e-12);
}

TEST(FoldTbn, ZeroWeightFoldIsPureShift) {
  TbnParams p = TbnParams::init(1);
  p.mode = TbnParams::Mode::kFrozen;
  p.beta[0] = 0.3;
  p.gamma[0] = 1.7;
  p.running_mean[0] = 0.5;
  p.running_var[0] = 4.0;
  Tensor w = Tensor::zeros({1, 3});
  Tensor b = Tensor::zeros({1});
  auto [fw, fb] = fold_tbn_into_conv(w, b, p);
  EXPECT_EQ(fw.max_abs(), 0.0);
  const double scale = 1.7 / std::sqrt(4.0 + p.eps);
  EXPECT_NEAR(fb[0], 0.3 - scale * 0.5, 1e-12);
}

TEST(FoldTbn, NumericalEquivalenceOnRandomModels) {
  Rng rng(10);
  const std::size_t Ci = 5, Co = 4;
  Tensor w = rng.uniform_tensor({Co, Ci}, -1.0, 1.0);
  Tensor b = rng.uniform_tensor({Co}, -0.5, 0.5);
  TbnParams p = TbnParams::init(Co);
  p.mode = TbnParams::Mode::kFrozen;
  for (std::size_t c = 0; c < Co; ++c) {
    p.gamma[c] = rng.uniform(0.5, 2.0);
    p.beta[c] = rng.uniform(-1.0, 1.0);
    p.running_mean[c] = rng.uniform(-1.0, 1.0);
    p.running_var[c] = rng.uniform(0.1, 3.0);
  }
  auto [fw, fb] = fold_tbn_into_conv(w, b, p);
  for (int rep = 0; rep < 100; ++rep) {
    Tensor x = rng.uniform_tensor({1, 4, Ci, 2}, -2.0, 2.0);
    Tensor two_stage = tbn_forward(apply_channel_conv(x, w, b), p);
    Tensor folded = apply_channel_conv(x, fw, fb);
    double scale = std::max(1.0, two_stage.max_abs());
    for (std::size_t i = 0; i < folded.size(); ++i)
      EXPECT_LE(std::fabs(folded[i] - two_stage[i]) / scale, 1e-5);
  }
}

TEST(FoldTbn, RequiresFrozenMode) {
  TbnParams p = TbnParams::init(1);
  EXPECT_THROW(fold_tbn_into_conv(Tensor::zeros({1, 2}), Tensor::zeros({1}), p), StateError);
}

TEST(SpikingEmbed, ZeroTokensStaySilent) {
  TbnParams bn = TbnParams::init(4);
  LifConfig lif;
  Rng rng(11);
  Tensor w = rng.uniform_tensor({4, 12}, -0.4, 0.4);
  Tensor b = Tensor::zeros({4});

  Tape tp;
  Var tokens = tp.input(Tensor::zeros({1, 6, 12, 2}));
  Var out = spiking_embed(tp, tokens, tp.input(w), tp.input(b), tp.input(bn.gamma),
                          tp.input(bn.beta), bn, lif, /*training=*/false);
  EXPECT_EQ(tp.val(out).max_abs(), 0.0);
}

TEST(SpikingEmbed, BinaryOutputAndShape) {
  Rng rng(12);
  TbnParams bn = TbnParams::init(8);
  LifConfig lif;
  Tensor w = rng.uniform_tensor({8, 12}, -0.4, 0.4);
  Tensor b = rng.uniform_tensor({8}, -0.1, 0.1);
  Tensor tokens = rng.uniform_tensor({2, 10, 12, 3}, -1.0, 1.0);

  Tape tp;
  Var out = spiking_embed(tp, tp.input(tokens), tp.input(w), tp.input(b), tp.input(bn.gamma),
                          tp.input(bn.beta), bn, lif, /*training=*/true);
  const Tensor& s = tp.val(out);
  EXPECT_TRUE(s.is_binary());
  EXPECT_EQ(s.dim(0), 2u);
  EXPECT_EQ(s.dim(1), 10u);
  EXPECT_EQ(s.dim(2), 8u);
  EXPECT_EQ(s.dim(3), 3u);
}
