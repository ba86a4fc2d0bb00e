#include <gtest/gtest.h>

#include "pasnet/ops.hpp"
#include "pasnet/tape.hpp"
#include "testutil.hpp"

using namespace pasnet;
using testutil::grad_check;

TEST(Tape, LinearLossGradientEqualsInput) {
  // loss = sum(W x + b) over a fixed input: dL/dW[k,c] = sum_t x[t,c].
  Tensor x({1, 2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  Tensor w({2, 3}, {0.1, -0.2, 0.3, 0.4, 0.5, -0.6});
  Tensor b({2}, {0.0, 0.0});

  Tape tp;
  Var xv = tp.input(x);
  Var wv = tp.param(w);
  Var bv = tp.param(b);
  Var loss = sum(tp, linear(tp, xv, wv, bv));
  tp.backward(loss);

  const Tensor& gw = tp.grad(wv);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_DOUBLE_EQ(gw.at2(k, c), x.at3(0, 0, c) + x.at3(0, 1, c));
  const Tensor& gb = tp.grad(bv);
  EXPECT_DOUBLE_EQ(gb[0], 2.0);
  EXPECT_DOUBLE_EQ(gb[1], 2.0);
}

TEST(Tape, BackwardRequiresScalar) {
  Tape tp;
  Var v = tp.param(Tensor({2}, {1.0, 2.0}));
  EXPECT_THROW(tp.backward(v), StateError);
}

TEST(Tape, BackwardTwiceRejected) {
  Tape tp;
  Var v = tp.param(Tensor::scalar(2.0));
  Var loss = sum(tp, v);
  tp.backward(loss);
  EXPECT_THROW(tp.backward(loss), StateError);
}

TEST(Tape, UnreachedNodesKeepZeroGradient) {
  Tape tp;
  Var a = tp.param(Tensor::scalar(1.0));
  Var b = tp.param(Tensor::scalar(5.0));
  Var loss = sum(tp, sigmoid(tp, a));
  tp.backward(loss);
  EXPECT_EQ(tp.grad(b)[0], 0.0);
  EXPECT_NE(tp.grad(a)[0], 0.0);
}

TEST(Tape, ElementwiseOpsMatchFiniteDifferences) {
  Rng rng(7);
  Tensor a = rng.uniform_tensor({2, 3, 2, 2}, -1.0, 1.0);
  Tensor b = rng.uniform_tensor({2, 3, 2, 2}, -1.0, 1.0);
  auto res = grad_check({{"a", &a}, {"b", &b}}, [](Tape& tp, const std::vector<Var>& v) {
    return sum(tp, mul(tp, sigmoid(tp, add(tp, v[0], v[1])), v[1]));
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, ChannelConvMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor x = rng.uniform_tensor({2, 3, 4, 2}, -1.0, 1.0);
  Tensor w = rng.uniform_tensor({3, 4}, -0.5, 0.5);
  Tensor b = rng.uniform_tensor({3}, -0.1, 0.1);
  auto res = grad_check({{"x", &x}, {"w", &w}, {"b", &b}},
                        [](Tape& tp, const std::vector<Var>& v) {
                          Var y = channel_conv(tp, v[0], v[1], v[2]);
                          return sum(tp, mul(tp, y, y));
                        });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, LinearMatchesFiniteDifferences) {
  Rng rng(13);
  Tensor x = rng.uniform_tensor({2, 4, 3}, -1.0, 1.0);
  Tensor w = rng.uniform_tensor({5, 3}, -0.5, 0.5);
  Tensor b = rng.uniform_tensor({5}, -0.1, 0.1);
  auto res = grad_check({{"x", &x}, {"w", &w}, {"b", &b}},
                        [](Tape& tp, const std::vector<Var>& v) {
                          Var y = linear(tp, v[0], v[1], v[2]);
                          return sum(tp, mul(tp, y, y));
                        });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, ChannelMeanBroadcastRoundTrip) {
  Rng rng(17);
  Tensor x = rng.uniform_tensor({1, 2, 3, 2}, -1.0, 1.0);
  auto res = grad_check({{"x", &x}}, [](Tape& tp, const std::vector<Var>& v) {
    Var pooled = channel_mean(tp, v[0]);
    Var back = channel_broadcast(tp, pooled, 3);
    return sum(tp, mul(tp, back, back));
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, ScaleOp) {
  Tape tp;
  Var a = tp.param(Tensor({2}, {3.0, -1.0}));
  Var loss = sum(tp, scale(tp, a, 2.5));
  EXPECT_DOUBLE_EQ(tp.val(loss)[0], 5.0);
  tp.backward(loss);
  EXPECT_DOUBLE_EQ(tp.grad(a)[0], 2.5);
  EXPECT_DOUBLE_EQ(tp.grad(a)[1], 2.5);
}
