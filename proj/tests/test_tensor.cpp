#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "advxfer/gemm.hpp"
#include "advxfer/gradcheck.hpp"
#include "advxfer/model.hpp"
#include "advxfer/nn_ops.hpp"
#include "advxfer/tensor.hpp"

using namespace advxfer;

namespace {

// Independent direct convolution: six nested loops, no im2col, no gemm.
template <typename S>
std::vector<S> conv_oracle(const std::vector<S>& x, int B, int C, int H, int W,
                           const std::vector<S>& w, int O, int K, int stride, int pad) {
  int Hout = (H + 2 * pad - K) / stride + 1;
  int Wout = (W + 2 * pad - K) / stride + 1;
  std::vector<S> y(static_cast<size_t>(B) * O * Hout * Wout, S(0));
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < Hout; ++oy)
        for (int ox = 0; ox < Wout; ++ox) {
          S acc = S(0);
          for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < K; ++ki)
              for (int kj = 0; kj < K; ++kj) {
                int iy = oy * stride - pad + ki;
                int ix = ox * stride - pad + kj;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((static_cast<size_t>(b) * C + c) * H + iy) * W + ix] *
                       w[((static_cast<size_t>(o) * C + c) * K + ki) * K + kj];
              }
          y[((static_cast<size_t>(b) * O + o) * Hout + oy) * Wout + ox] = acc;
        }
  return y;
}

template <typename S>
void gemm_oracle_nn(int M, int N, int K, const S* A, const S* B, S* C) {
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) {
      S acc = S(0);
      for (int k = 0; k < K; ++k) acc += A[m * K + k] * B[k * N + n];
      C[m * N + n] = acc;
    }
}

}  // namespace

TEST(Gemm, MatchesNaiveTripleLoop) {
  Rng rng(7);
  const int M = 13, N = 27, K = 19;
  std::vector<double> A(M * K), B(K * N), Bt(N * K), At(K * M);
  for (auto& v : A) v = rng.normal();
  for (auto& v : B) v = rng.normal();
  for (int k = 0; k < K; ++k)
    for (int n = 0; n < N; ++n) Bt[n * K + k] = B[k * N + n];
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) At[k * M + m] = A[m * K + k];

  std::vector<double> want(M * N), got(M * N);
  gemm_oracle_nn(M, N, K, A.data(), B.data(), want.data());

  gemm_nn(M, N, K, A.data(), B.data(), got.data());
  for (int i = 0; i < M * N; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);

  gemm_tn(M, N, K, At.data(), B.data(), got.data());
  for (int i = 0; i < M * N; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);

  gemm_nt(M, N, K, A.data(), Bt.data(), got.data());
  for (int i = 0; i < M * N; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);

  // accumulate doubles the result
  gemm_nn(M, N, K, A.data(), B.data(), got.data());
  gemm_nn(M, N, K, A.data(), B.data(), got.data(), /*accumulate=*/true);
  for (int i = 0; i < M * N; ++i) EXPECT_NEAR(got[i], 2 * want[i], 1e-12);
}

TEST(Conv2d, AllOnesKernelSumsWindow) {
  auto x = Tensor<double>::full({1, 1, 4, 4}, 1.0);
  auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, w, 1, 0);
  EXPECT_EQ(y.dims(), (std::vector<int>{1, 1, 2, 2}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 9.0);
}

TEST(Conv2d, OutputShapeFormula) {
  Rng rng(1);
  auto x = Tensor<double>::randn({1, 3, 8, 8}, rng);
  auto w = Tensor<double>::randn({4, 3, 3, 3}, rng);
  auto y = conv2d(x, w, 2, 1);
  EXPECT_EQ(y.dims(), (std::vector<int>{1, 4, 4, 4}));
}

TEST(Conv2d, MatchesNaiveLoopOracle) {
  Rng rng(42);
  for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
    auto x = Tensor<double>::randn({1, 2, 5, 5}, rng);
    auto w = Tensor<double>::randn({3, 2, 3, 3}, rng);
    auto y = conv2d(x, w, stride, pad);
    auto want = conv_oracle(x.values(), 1, 2, 5, 5, w.values(), 3, 3, stride, pad);
    ASSERT_EQ(y.values().size(), want.size());
    for (size_t i = 0; i < want.size(); ++i) {
      double denom = std::max({std::abs(want[i]), std::abs(y.values()[i]), 1e-9});
      EXPECT_LT(std::abs(y.values()[i] - want[i]) / denom, 1e-6);
    }
  }
}

TEST(Conv2d, ChannelMismatchNamesAxes) {
  auto x = Tensor<double>::zeros({1, 3, 4, 4});
  auto w = Tensor<double>::zeros({2, 4, 3, 3});
  try {
    conv2d(x, w, 1, 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("C=3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("I=4"), std::string::npos);
  }
}

TEST(BatchNorm, TrainModeNormalizes) {
  // channel 0: values {3,3,7,7} -> mean 5, biased std 2; channel 1 constant
  auto x = Tensor<double>::from({1, 2, 2, 2}, {3, 3, 7, 7, 4, 4, 4, 4});
  auto gamma = Tensor<double>::full({2}, 1.0);
  auto beta = Tensor<double>::zeros({2});
  auto rm = Tensor<double>::zeros({2});
  auto rv = Tensor<double>::full({2}, 1.0);
  auto y = batchnorm2d(x, gamma, beta, rm, rv, /*train=*/true);
  double mean0 = (y.values()[0] + y.values()[1] + y.values()[2] + y.values()[3]) / 4;
  EXPECT_NEAR(mean0, 0.0, 1e-12);
  double var0 = 0;
  for (int i = 0; i < 4; ++i) var0 += y.values()[i] * y.values()[i];
  EXPECT_NEAR(std::sqrt(var0 / 4), 1.0, 1e-5);  // epsilon shifts it slightly
  // running stats moved toward batch stats with momentum 0.1
  EXPECT_NEAR(rm.values()[0], 0.5, 1e-12);
  EXPECT_NEAR(rv.values()[0], 0.9 * 1.0 + 0.1 * 4.0, 1e-12);
  // batch of constant values: variance zero, epsilon keeps it finite
  for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(BatchNorm, EvalModeIsPure) {
  Rng rng(3);
  auto x = Tensor<double>::randn({2, 3, 4, 4}, rng);
  auto gamma = Tensor<double>::full({3}, 1.5);
  auto beta = Tensor<double>::full({3}, 0.25);
  auto rm = Tensor<double>::from({3}, {0.1, -0.2, 0.3});
  auto rv = Tensor<double>::from({3}, {1.1, 0.9, 1.3});
  auto rm_before = rm.values();
  auto rv_before = rv.values();
  auto y1 = batchnorm2d(x, gamma, beta, rm, rv, /*train=*/false);
  auto y2 = batchnorm2d(x, gamma, beta, rm, rv, /*train=*/false);
  EXPECT_EQ(rm.values(), rm_before);
  EXPECT_EQ(rv.values(), rv_before);
  EXPECT_EQ(0, std::memcmp(y1.values().data(), y2.values().data(),
                           y1.values().size() * sizeof(double)));
}

TEST(SimpleOps, TrivialCases) {
  auto x = Tensor<double>::from({3}, {-1, 0, 2});
  auto y = relu(x);
  EXPECT_EQ(y.values(), (std::vector<double>{0, 0, 2}));

  auto fm = Tensor<double>::full({2, 3, 4, 4}, 7.0);
  auto pooled = global_avg_pool(fm);
  EXPECT_EQ(pooled.dims(), (std::vector<int>{2, 3}));
  for (double v : pooled.values()) EXPECT_DOUBLE_EQ(v, 7.0);

  // identity weight, zero bias leaves the input unchanged
  auto in = Tensor<double>::from({1, 3}, {0.5, -1.5, 2.0});
  auto w = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto b = Tensor<double>::zeros({3});
  auto out = linear(in, w, b);
  EXPECT_EQ(out.values(), in.values());

  auto bad = Tensor<double>::zeros({2, 2});
  EXPECT_THROW(residual_add(x, bad), ShapeError);
}

TEST(CrossEntropy, FrozenOracleValues) {
  // uniform logits, K=4 -> ln 4
  auto z1 = Tensor<double>::zeros({1, 4});
  EXPECT_NEAR(softmax_cross_entropy(z1, {0}).item(), 1.3862943611198906, 1e-12);

  // logits (10,0,0,0), label 0
  auto z2 = Tensor<double>::from({1, 4}, {10, 0, 0, 0});
  EXPECT_NEAR(softmax_cross_entropy(z2, {0}).item(), 1.3619051493825363e-4, 1e-15);

  // logits (2,1,0,-1), label 1
  auto z3 = Tensor<double>::from({1, 4}, {2, 1, 0, -1});
  EXPECT_NEAR(softmax_cross_entropy(z3, {1}).item(), 1.4401896985611953, 1e-12);

  // loss is nonnegative and K<2 is rejected
  EXPECT_GE(softmax_cross_entropy(z3, {0}).item(), 0.0);
  auto z4 = Tensor<double>::zeros({1, 1});
  EXPECT_THROW(softmax_cross_entropy(z4, {0}), ConfigError);
  EXPECT_THROW(softmax_cross_entropy(z3, {7}), DataError);
}

TEST(CrossEntropy, ShiftInvarianceAndDecay) {
  Rng rng(5);
  auto z = Tensor<double>::randn({3, 5}, rng);
  std::vector<int> labels = {0, 3, 2};
  double base = softmax_cross_entropy(z, labels).item();
  auto shifted = z.clone_detached();
  for (auto& v : shifted.values()) v += 123.25;
  EXPECT_NEAR(softmax_cross_entropy(shifted, labels).item(), base, 1e-10);

  // one-hot-correct prediction tends to zero loss as the logit grows
  double prev = 1e9;
  for (double m : {5.0, 10.0, 20.0, 40.0}) {
    auto zz = Tensor<double>::zeros({1, 4});
    zz.values()[0] = m;
    double l = softmax_cross_entropy(zz, {0}).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-15);
}

TEST(Backward, TrivialGradients) {
  auto x = Tensor<double>::from({4}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  sum(x).backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{1, 1, 1, 1}));

  // loss = <w, x>  ->  dloss/dx = w exactly
  auto x2 = Tensor<double>::from({3}, {0.5, -1.0, 2.0});
  x2.set_requires_grad(true);
  auto w = Tensor<double>::from({3}, {3, -2, 0.25});
  sum(mul(x2, w)).backward();
  EXPECT_EQ(x2.grad(), w.values());

  auto nonscalar = Tensor<double>::zeros({2});
  nonscalar.set_requires_grad(true);
  EXPECT_THROW(relu(nonscalar).backward(), ShapeError);
}

TEST(Backward, AccumulatesAcrossCalls) {
  auto x = Tensor<double>::from({2}, {1, 1});
  x.set_requires_grad(true);
  sum(x).backward();
  sum(x).backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{2, 2}));
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(GradCheck, QuadraticIsExact) {
  auto x = Tensor<double>::from({2}, {1, 2});
  x.set_requires_grad(true);
  auto fn = [&]() { return sum(mul(x, x)); };
  // analytic gradient (2,4); central differences are exact for quadratics
  double err = finite_diff_check<double>(fn, x, 1e-5);
  EXPECT_LT(err, 1e-9);
  EXPECT_NEAR(x.grad()[0], 2.0, 1e-12);
  EXPECT_NEAR(x.grad()[1], 4.0, 1e-12);
}

TEST(GradCheck, ReluAwayFromKink) {
  auto x = Tensor<double>::from({4}, {-1.5, 0.7, 2.0, -0.3});
  x.set_requires_grad(true);
  auto w = Tensor<double>::from({4}, {1.0, 2.0, -1.0, 0.5});
  auto fn = [&]() { return sum(mul(relu(x), w)); };
  EXPECT_LT(finite_diff_check<double>(fn, x, 1e-5), 1e-6);
}

TEST(GradCheck, PerOperatorGradients) {
  Rng rng(11);
  // conv2d w.r.t. input and weight
  auto x = Tensor<double>::randn({2, 2, 5, 5}, rng);
  x.set_requires_grad(true);
  auto w = Tensor<double>::randn({3, 2, 3, 3}, rng, 0.5);
  w.set_requires_grad(true);
  auto conv_fn = [&]() { return sum(mul(conv2d(x, w, 2, 1), conv2d(x, w, 2, 1))); };
  EXPECT_LT(finite_diff_check<double>(conv_fn, x, 1e-5), 1e-6);
  EXPECT_LT(finite_diff_check<double>(conv_fn, w, 1e-5), 1e-6);

  // batchnorm (train and eval) w.r.t. input, gamma, beta
  auto bx = Tensor<double>::randn({3, 2, 3, 3}, rng);
  bx.set_requires_grad(true);
  auto gamma = Tensor<double>::from({2}, {1.2, 0.8});
  gamma.set_requires_grad(true);
  auto beta = Tensor<double>::from({2}, {0.1, -0.2});
  beta.set_requires_grad(true);
  auto rm = Tensor<double>::from({2}, {0.05, -0.1});
  auto rv = Tensor<double>::from({2}, {1.2, 0.7});
  for (bool train : {true, false}) {
    auto bn_fn = [&, train]() {
      auto rm_copy = rm.clone_detached();
      auto rv_copy = rv.clone_detached();
      auto h = batchnorm2d(bx, gamma, beta, rm_copy, rv_copy, train);
      return sum(mul(h, h));
    };
    EXPECT_LT(finite_diff_check<double>(bn_fn, bx, 1e-5), 1e-6) << "train=" << train;
    EXPECT_LT(finite_diff_check<double>(bn_fn, gamma, 1e-5), 1e-6) << "train=" << train;
    EXPECT_LT(finite_diff_check<double>(bn_fn, beta, 1e-5), 1e-6) << "train=" << train;
  }

  // linear w.r.t. input, weight, bias through a softmax cross-entropy head
  auto lx = Tensor<double>::randn({4, 6}, rng);
  lx.set_requires_grad(true);
  auto lw = Tensor<double>::randn({3, 6}, rng, 0.5);
  lw.set_requires_grad(true);
  auto lb = Tensor<double>::randn({3}, rng, 0.1);
  lb.set_requires_grad(true);
  std::vector<int> labels = {0, 2, 1, 2};
  auto lin_fn = [&]() { return softmax_cross_entropy(linear(lx, lw, lb), labels); };
  EXPECT_LT(finite_diff_check<double>(lin_fn, lx, 1e-5), 1e-6);
  EXPECT_LT(finite_diff_check<double>(lin_fn, lw, 1e-5), 1e-6);
  EXPECT_LT(finite_diff_check<double>(lin_fn, lb, 1e-5), 1e-6);

  // global_avg_pool and residual_add
  auto px = Tensor<double>::randn({2, 3, 4, 4}, rng);
  px.set_requires_grad(true);
  auto pool_fn = [&]() {
    auto p = global_avg_pool(residual_add(px, px));
    return sum(mul(p, p));
  };
  EXPECT_LT(finite_diff_check<double>(pool_fn, px, 1e-5), 1e-6);
}

TEST(GradCheck, ComposedMicroModel) {
  // conv-bn-relu-pool-linear composite, double precision
  Rng rng(23);
  auto x = Tensor<double>::randn({2, 3, 8, 8}, rng, 0.5);
  for (auto& v : x.values()) v = 0.5 + 0.2 * v;
  x.set_requires_grad(true);
  auto w = Tensor<double>::randn({4, 3, 3, 3}, rng, 0.3);
  w.set_requires_grad(true);
  auto gamma = Tensor<double>::full({4}, 1.0);
  gamma.set_requires_grad(true);
  auto beta = Tensor<double>::zeros({4});
  beta.set_requires_grad(true);
  auto rm = Tensor<double>::zeros({4});
  auto rv = Tensor<double>::full({4}, 1.0);
  auto hw = Tensor<double>::randn({3, 4}, rng, 0.5);
  hw.set_requires_grad(true);
  auto hb = Tensor<double>::zeros({3});
  hb.set_requires_grad(true);
  std::vector<int> labels = {1, 0};

  auto fn = [&]() {
    auto rmc = rm.clone_detached();
    auto rvc = rv.clone_detached();
    auto h = relu(batchnorm2d(conv2d(x, w, 2, 1), gamma, beta, rmc, rvc, true));
    return softmax_cross_entropy(linear(global_avg_pool(h), hw, hb), labels);
  };
  EXPECT_LT(finite_diff_check<double>(fn, x, 1e-5), 1e-6);
  EXPECT_LT(finite_diff_check<double>(fn, w, 1e-5), 1e-6);
  EXPECT_LT(finite_diff_check<double>(fn, hw, 1e-5), 1e-6);
}

TEST(GradCheck, FullModelLossGradient) {
  MicroResNet<double> model = MicroResNet<double>::build({4, 6, 8, 8}, 3, 99);
  Rng rng(31);
  auto x = Tensor<double>::rand_uniform({2, 3, 8, 8}, rng, 0.0, 1.0);
  x.set_requires_grad(true);
  std::vector<int> labels = {0, 2};
  auto fn = [&]() { return softmax_cross_entropy(model.forward(x, true), labels); };
  EXPECT_LT(finite_diff_check<double>(fn, x, 1e-5, /*max_coords=*/60, /*coord_seed=*/1), 1e-6);

  auto params = model.parameters();
  Tensor<double>* conv_w = params.front().second;
  EXPECT_LT(finite_diff_check<double>(fn, *conv_w, 1e-5, 60, 2), 1e-6);
}

TEST(GradCheck, SinglePrecisionLooserBound) {
  MicroResNet<float> model = MicroResNet<float>::build({4, 6, 8, 8}, 3, 99);
  Rng rng(31);
  auto x = Tensor<float>::rand_uniform({2, 3, 8, 8}, rng, 0.0, 1.0);
  x.set_requires_grad(true);
  std::vector<int> labels = {0, 2};
  auto fn = [&]() { return softmax_cross_entropy(model.forward(x, true), labels); };
  EXPECT_LT(finite_diff_check<float>(fn, x, 5e-3, 60, 3), 1e-2);
}

TEST(Determinism, BitIdenticalForward) {
  MicroResNet<float> model = MicroResNet<float>::build({8, 12, 16, 16}, 4, 7);
  Rng rng(2);
  auto x = Tensor<float>::rand_uniform({4, 3, 16, 16}, rng, 0.0, 1.0);
  auto y1 = model.forward(x, false);
  auto y2 = model.forward(x, false);
  EXPECT_EQ(0, std::memcmp(y1.values().data(), y2.values().data(),
                           y1.values().size() * sizeof(float)));
  // and through a train-mode pass on fresh clones of the stats
  auto m2 = model.clone();
  auto z1 = model.forward(x, true);
  auto z2 = m2.forward(x, true);
  EXPECT_EQ(0, std::memcmp(z1.values().data(), z2.values().data(),
                           z1.values().size() * sizeof(float)));
}
