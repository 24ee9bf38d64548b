#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lpr/ops.hpp"

namespace lpr {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Direct-summation oracle over (W, H, C) samples with zero padding.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b,
                   std::size_t stride, std::size_t pad) {
  const std::size_t W = x.dim(0), H = x.dim(1), C = x.dim(2);
  const std::size_t O = w.dim(0), KW = w.dim(2), KH = w.dim(3);
  const std::size_t OW = (W + 2 * pad - KW) / stride + 1;
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1;
  Tensor y({OW, OH, O});
  for (std::size_t ox = 0; ox < OW; ++ox)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t o = 0; o < O; ++o) {
        double s = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < KW; ++i)
            for (std::size_t j = 0; j < KH; ++j) {
              const long ix = long(ox * stride + i) - long(pad);
              const long iy = long(oy * stride + j) - long(pad);
              if (ix < 0 || iy < 0 || ix >= long(W) || iy >= long(H)) continue;
              s += w.at({o, c, i, j}) * x.at({std::size_t(ix), std::size_t(iy), c});
            }
        y.at({ox, oy, o}) = s;
      }
  return y;
}

Tensor depthwise_oracle(const Tensor& x, const Tensor& w, const Tensor& b,
                        std::size_t stride, std::size_t pad) {
  const std::size_t W = x.dim(0), H = x.dim(1), C = x.dim(2);
  const std::size_t KW = w.dim(1), KH = w.dim(2);
  const std::size_t OW = (W + 2 * pad - KW) / stride + 1;
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1;
  Tensor y({OW, OH, C});
  for (std::size_t ox = 0; ox < OW; ++ox)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t c = 0; c < C; ++c) {
        double s = b[c];
        for (std::size_t i = 0; i < KW; ++i)
          for (std::size_t j = 0; j < KH; ++j) {
            const long ix = long(ox * stride + i) - long(pad);
            const long iy = long(oy * stride + j) - long(pad);
            if (ix < 0 || iy < 0 || ix >= long(W) || iy >= long(H)) continue;
            s += w.at({c, i, j}) * x.at({std::size_t(ix), std::size_t(iy), c});
          }
        y.at({ox, oy, c}) = s;
      }
  return y;
}

TEST(TensorTest, ShapeInvariants) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  EXPECT_THROW(Tensor({1, 1, 1, 1, 1}), ShapeError);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.grad().size(), t.size());
  EXPECT_TRUE(t.has_grad());
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
}

TEST(Conv2dTest, TableOneStemShape) {
  std::mt19937_64 rng(1);
  ConvParams p = ConvParams::zeros(2, 32, 3, 3, Stride{2, 2});
  Tensor x = random_tensor({128, 32, 2}, rng);
  EXPECT_EQ(conv2d(x, p).shape(), (Shape{64, 16, 32}));
}

TEST(Conv2dTest, OneByOneIdentity) {
  std::mt19937_64 rng(2);
  ConvParams p = ConvParams::zeros(3, 3, 1, 1);
  for (std::size_t c = 0; c < 3; ++c) p.weight.at({c, c, 0, 0}) = 1.0;
  Tensor x = random_tensor({5, 4, 3}, rng);
  EXPECT_EQ(conv2d(x, p), x);
}

TEST(Conv2dTest, TwoByTwoOnesSum) {
  ConvParams p = ConvParams::zeros(1, 1, 2, 2, {}, Padding::Pixels(0, 0));
  p.weight.fill(1.0);
  Tensor x({2, 2, 1}, {1, 2, 3, 4});
  Tensor y = conv2d(x, p);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 10.0);
}

TEST(Conv2dTest, MatchesDirectSummation) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t stride = 1 + trial % 2;
    ConvParams p = ConvParams::zeros(3, 4, 3, 3, Stride{stride, stride});
    p.weight = random_tensor(p.weight.shape(), rng);
    p.bias = random_tensor(p.bias.shape(), rng);
    Tensor x = random_tensor({6, 5, 3}, rng);
    EXPECT_LE(max_abs_diff(conv2d(x, p), conv_oracle(x, p.weight, p.bias, stride, 1)),
              1e-12);
  }
}

TEST(Conv2dTest, BatchedEqualsPerSample) {
  std::mt19937_64 rng(4);
  ConvParams p = ConvParams::zeros(2, 3, 3, 3);
  p.weight = random_tensor(p.weight.shape(), rng);
  Tensor xb = random_tensor({3, 4, 4, 2}, rng);
  Tensor yb = conv2d(xb, p);
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor xs({4, 4, 2}, std::vector<double>(xb.raw() + n * 32, xb.raw() + (n + 1) * 32));
    Tensor ys = conv2d(xs, p);
    for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_EQ(ys[i], yb[n * ys.size() + i]);
  }
}

TEST(Conv2dTest, RejectsChannelMismatchAndEvenSame) {
  ConvParams p = ConvParams::zeros(3, 4, 3, 3);
  EXPECT_THROW(conv2d(Tensor({4, 4, 2}), p), ShapeError);
  ConvParams even = ConvParams::zeros(1, 1, 2, 2);
  EXPECT_THROW(conv2d(Tensor({4, 4, 1}), even), ShapeError);
}

TEST(DepthwiseTest, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(5);
  DepthwiseParams p = DepthwiseParams::zeros(3, 3, 3);
  for (std::size_t c = 0; c < 3; ++c) p.weight.at({c, 1, 1}) = 1.0;
  Tensor x = random_tensor({6, 4, 3}, rng);
  EXPECT_EQ(depthwise_conv2d(x, p), x);
}

TEST(DepthwiseTest, AveragingConstantImage) {
  DepthwiseParams p = DepthwiseParams::zeros(2, 3, 3);
  p.weight.fill(1.0 / 9.0);
  Tensor x({6, 6, 2}, 0.7);
  Tensor y = depthwise_conv2d(x, p);
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 1; j < 5; ++j)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(y.at({i, j, c}), 0.7, 1e-15);
}

TEST(DepthwiseTest, MatchesLoopNest) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t stride = 1 + trial % 2;
    DepthwiseParams p = DepthwiseParams::zeros(2, 3, 3, Stride{stride, stride});
    p.weight = random_tensor(p.weight.shape(), rng);
    p.bias = random_tensor(p.bias.shape(), rng);
    Tensor x = random_tensor({4, 4, 2}, rng);
    EXPECT_LE(max_abs_diff(depthwise_conv2d(x, p),
                           depthwise_oracle(x, p.weight, p.bias, stride, 1)),
              1e-12);
  }
  EXPECT_THROW(depthwise_conv2d(Tensor({4, 4, 3}), DepthwiseParams::zeros(2, 3, 3)),
               ShapeError);
}

TEST(SeparableTest, ParameterEconomy) {
  DepthwiseParams dw = DepthwiseParams::zeros(64, 3, 3);
  ConvParams pw = ConvParams::zeros(64, 64, 1, 1);
  ConvParams dense = ConvParams::zeros(64, 64, 3, 3);
  EXPECT_EQ(dw.weight.size() + pw.weight.size(), 4672u);
  EXPECT_EQ(dense.weight.size(), 36864u);
  EXPECT_EQ(separable_params(64, 64, 3).param_count(), 4736u);
  EXPECT_EQ(dense.param_count(), 36928u);
  // Oracle: depthwise taps, pointwise matrix, and one bias per output channel.
  EXPECT_EQ(separable_params(64, 64, 3).param_count(), 64u * 9 + 64u * 64 + 64);
  EXPECT_EQ(separable_params(64, 64, 3, {}, false).param_count(), 4672u);
}

TEST(SeparableTest, ComposedIdentitiesAndComposition) {
  std::mt19937_64 rng(7);
  DepthwiseParams dw = DepthwiseParams::zeros(3, 3, 3);
  ConvParams pw = ConvParams::zeros(3, 3, 1, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    dw.weight.at({c, 1, 1}) = 1.0;
    pw.weight.at({c, c, 0, 0}) = 1.0;
  }
  Tensor x = random_tensor({5, 5, 3}, rng);
  EXPECT_EQ(separable_conv2d(x, dw, pw), x);

  dw.weight = random_tensor(dw.weight.shape(), rng);
  pw = ConvParams::zeros(3, 5, 1, 1);
  pw.weight = random_tensor(pw.weight.shape(), rng);
  EXPECT_EQ(separable_conv2d(x, dw, pw), conv2d(depthwise_conv2d(x, dw), pw));
  EXPECT_THROW(separable_conv2d(x, dw, ConvParams::zeros(3, 3, 3, 3)), ShapeError);
}

TEST(BatchNormTest, InferWithExactStatsStandardizes) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({10, 2}, rng);
  BNParams p = BNParams::identity(2);
  p.epsilon = 1e-12;
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t r = 0; r < 10; ++r) m += x[r * 2 + c] / 10;
    for (std::size_t r = 0; r < 10; ++r) v += (x[r * 2 + c] - m) * (x[r * 2 + c] - m) / 10;
    p.running_mean[c] = m;
    p.running_var[c] = v;
  }
  Tensor y = batchnorm(x, p, Mode::Infer);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t r = 0; r < 10; ++r) m += y[r * 2 + c] / 10;
    for (std::size_t r = 0; r < 10; ++r) v += y[r * 2 + c] * y[r * 2 + c] / 10;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-9);
  }
}

TEST(BatchNormTest, ZeroGammaGivesBeta) {
  std::mt19937_64 rng(9);
  BNParams p = BNParams::identity(3);
  p.gamma.fill(0.0);
  p.beta = Tensor({3}, {0.5, -1.0, 2.0});
  Tensor y = batchnorm(random_tensor({4, 3}, rng), p, Mode::Train);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y[r * 3 + c], p.beta[c]);
}

TEST(BatchNormTest, TrainModeTwoSamplesByHand) {
  // One channel, samples 1 and 3: mean 2, biased var 1.
  BNParams p = BNParams::identity(1);
  p.gamma[0] = 2.0;
  p.beta[0] = 0.5;
  Tensor y = batchnorm(Tensor({2, 1}, {1.0, 3.0}), p, Mode::Train);
  const double inv = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y[0], 0.5 - 2.0 * inv, 1e-15);
  EXPECT_NEAR(y[1], 0.5 + 2.0 * inv, 1e-15);
  EXPECT_NEAR(p.running_mean[0], 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(p.running_var[0], 0.9 * 1.0 + 0.1 * 1.0, 1e-15);
}

TEST(LeakyReluTest, Definition) {
  Tensor y = leaky_relu(Tensor({3}, {2.0, -1.0, 0.0}), 0.1);
  EXPECT_EQ(y[0], 2.0);
  EXPECT_DOUBLE_EQ(y[1], -0.1);
  EXPECT_EQ(y[2], 0.0);
}

TEST(MaxPoolTest, Cases) {
  Tensor c({4, 4, 1}, 0.3);
  Tensor pc = maxpool2d(c, 2, 2);
  for (double v : pc.data()) EXPECT_EQ(v, 0.3);
  Tensor y = maxpool2d(Tensor({2, 2, 1}, {1, 2, 3, 4}), 2, 2);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 4.0);
  EXPECT_THROW(maxpool2d(Tensor({2, 2, 1}), 3, 1), ShapeError);
}

TEST(MaxPoolTest, MatchesWindowScan) {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({6, 6, 2}, rng);
  Tensor y = maxpool2d(x, 3, 3);
  ASSERT_EQ(y.shape(), (Shape{2, 2, 2}));
  for (std::size_t ox = 0; ox < 2; ++ox)
    for (std::size_t oy = 0; oy < 2; ++oy)
      for (std::size_t c = 0; c < 2; ++c) {
        double m = -1e300;
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j)
            m = std::max(m, x.at({ox * 3 + i, oy * 3 + j, c}));
        EXPECT_EQ(y.at({ox, oy, c}), m);
      }
}

TEST(ReshapeOpsTest, PermuteConcatPool) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({32, 8, 128}, rng);
  Tensor p = permute(x, {1, 0, 2});
  EXPECT_EQ(p.shape(), (Shape{8, 32, 128}));
  EXPECT_EQ(p.at({3, 17, 5}), x.at({17, 3, 5}));
  EXPECT_EQ(global_avg_pool_axis(p, 0).shape(), (Shape{32, 128}));
  EXPECT_THROW(permute(x, {0, 0, 1}), ShapeError);
  EXPECT_THROW(global_avg_pool_axis(x, 3), ShapeError);

  Tensor gray = random_tensor({128, 32, 1}, rng), edge = random_tensor({128, 32, 1}, rng);
  Tensor both = concat_channels(gray, edge);
  EXPECT_EQ(both.shape(), (Shape{128, 32, 2}));
  EXPECT_EQ(both.at({7, 9, 1}), edge.at({7, 9, 0}));
  EXPECT_THROW(concat_channels(gray, random_tensor({64, 32, 1}, rng)), ShapeError);

  Tensor constant({4, 5, 3}, 2.5);
  const Tensor pooled = global_avg_pool_axis(constant, 1);
  for (double v : pooled.data()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(ReshapeOpsTest, PermuteInverseRoundTrip) {
  std::mt19937_64 rng(12);
  std::vector<std::size_t> axes = {0, 1, 2, 3};
  for (int trial = 0; trial < 24; ++trial) {
    std::shuffle(axes.begin(), axes.end(), rng);
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    EXPECT_EQ(permute(permute(x, axes), inverse_permutation(axes)), x);
  }
}

TEST(DropoutTest, IdentitiesAndDeterminism) {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({50}, rng);
  std::mt19937_64 a(99), b(99);
  EXPECT_EQ(dropout(x, 0.4, a, Mode::Infer), x);
  EXPECT_EQ(dropout(x, 0.0, a, Mode::Train), x);
  EXPECT_EQ(dropout(x, 0.4, a, Mode::Train), dropout(x, 0.4, b, Mode::Train));
  std::mt19937_64 c(5);
  Tensor y = dropout(x, 0.5, c, Mode::Train);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_TRUE(y[i] == 0.0 || y[i] == 2.0 * x[i]);
  EXPECT_THROW(dropout(x, 1.0, c, Mode::Train), std::invalid_argument);
}

TEST(SoftmaxTest, ClosedForms) {
  Tensor a = softmax_rows(Tensor({1, 2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  Tensor b = softmax_rows(Tensor({1, 2}, {1000.0, 1000.0}));
  EXPECT_DOUBLE_EQ(b[0], 0.5);
  EXPECT_DOUBLE_EQ(b[1], 0.5);
  Tensor c = softmax_rows(Tensor({1, 2}, {0.0, std::log(3.0)}));
  EXPECT_NEAR(c[0], 0.25, 1e-15);
  EXPECT_NEAR(c[1], 0.75, 1e-15);
}

TEST(SoftmaxTest, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, -20, 20);
    Tensor s = softmax_rows(x);
    Tensor shifted = x;
    for (std::size_t k = 0; k < 7; ++k) shifted[7 + k] += 123.0;
    Tensor s2 = softmax_rows(shifted);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0;
      for (std::size_t k = 0; k < 7; ++k) {
        EXPECT_GE(s[r * 7 + k], 0.0);
        sum += s[r * 7 + k];
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    EXPECT_LE(max_abs_diff(s, s2), 1e-12);
    Tensor ls = log_softmax_rows(x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(std::exp(ls[i]), s[i], 1e-12);
  }
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

TEST(BiLstmTest, ZeroWeightsGiveZeros) {
  std::mt19937_64 rng(15);
  LstmParams p = LstmParams::zeros(3, 4);
  Tensor y = bilstm(random_tensor({5, 3}, rng), p);
  EXPECT_EQ(y.shape(), (Shape{5, 8}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(BiLstmTest, SingleStepDirectionsAgree) {
  std::mt19937_64 rng(16);
  LstmParams p = LstmParams::zeros(3, 2);
  p.forward.weight = random_tensor(p.forward.weight.shape(), rng);
  p.forward.bias = random_tensor(p.forward.bias.shape(), rng);
  p.backward = p.forward;
  Tensor y = bilstm(random_tensor({1, 3}, rng), p);
  EXPECT_EQ(y[0], y[2]);
  EXPECT_EQ(y[1], y[3]);
}

TEST(BiLstmTest, TwoStepsByHand) {
  // F = 1, H = 1; gates in order i, f, g, o over [x, h].
  LstmParams p = LstmParams::zeros(1, 1);
  p.forward.weight = Tensor({4, 2}, {0.5, -0.3, 0.2, 0.4, -0.7, 0.9, 0.1, 0.6});
  p.forward.bias = Tensor({4}, {0.1, -0.2, 0.05, 0.3});
  p.backward.weight = Tensor({4, 2}, {-0.4, 0.2, 0.3, -0.5, 0.8, 0.1, -0.2, 0.7});
  p.backward.bias = Tensor({4}, {0.0, 0.2, -0.1, 0.1});
  const double xs[2] = {0.8, -1.2};
  auto step = [](const LstmDirection& d, double x, double h, double c,
                 double* h_out, double* c_out) {
    auto z = [&](int g) { return d.weight[g * 2] * x + d.weight[g * 2 + 1] * h + d.bias[g]; };
    const double i = sigmoid(z(0)), f = sigmoid(z(1)), g = std::tanh(z(2)), o = sigmoid(z(3));
    *c_out = f * c + i * g;
    *h_out = o * std::tanh(*c_out);
  };
  double hf[2], cf[2], hb[2], cb[2];
  step(p.forward, xs[0], 0, 0, &hf[0], &cf[0]);
  step(p.forward, xs[1], hf[0], cf[0], &hf[1], &cf[1]);
  step(p.backward, xs[1], 0, 0, &hb[1], &cb[1]);
  step(p.backward, xs[0], hb[1], cb[1], &hb[0], &cb[0]);
  Tensor y = bilstm(Tensor({2, 1}, {xs[0], xs[1]}), p);
  EXPECT_NEAR(y.at({0, 0}), hf[0], 1e-12);
  EXPECT_NEAR(y.at({1, 0}), hf[1], 1e-12);
  EXPECT_NEAR(y.at({0, 1}), hb[0], 1e-12);
  EXPECT_NEAR(y.at({1, 1}), hb[1], 1e-12);
  EXPECT_THROW(bilstm(Tensor({2, 3}), p), ShapeError);
}

TEST(DenseTest, Cases) {
  std::mt19937_64 rng(17);
  DenseParams id = DenseParams::zeros(4, 4);
  for (std::size_t i = 0; i < 4; ++i) id.weight.at({i, i}) = 1.0;
  Tensor x = random_tensor({3, 4}, rng);
  EXPECT_EQ(dense(x, id), x);

  DenseParams head = DenseParams::zeros(128, 38);
  EXPECT_EQ(dense(random_tensor({32, 128}, rng), head).shape(), (Shape{32, 38}));

  DenseParams p = DenseParams::zeros(5, 3);
  p.weight = random_tensor(p.weight.shape(), rng);
  p.bias = random_tensor(p.bias.shape(), rng);
  Tensor in = random_tensor({2, 5}, rng);
  Tensor y = dense(in, p);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t o = 0; o < 3; ++o) {
      double s = p.bias[o];
      for (std::size_t i = 0; i < 5; ++i) s += p.weight.at({o, i}) * in.at({r, i});
      EXPECT_NEAR(y.at({r, o}), s, 1e-12);
    }
  EXPECT_THROW(dense(Tensor({2, 4}), p), ShapeError);
}

}  // namespace
}  // namespace lpr
