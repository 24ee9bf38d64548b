#include <gtest/gtest.h>

#include <random>

#include "lpr/autograd.hpp"
#include "lpr/gradcheck.hpp"

namespace lpr {
namespace {

constexpr double kTol = 1e-4;
constexpr int kTrials = 20;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

void randomize(ConvParams& p, std::mt19937_64& rng) {
  p.weight = random_tensor(p.weight.shape(), rng);
  p.bias = random_tensor(p.bias.shape(), rng);
}
void randomize(DepthwiseParams& p, std::mt19937_64& rng) {
  p.weight = random_tensor(p.weight.shape(), rng);
  p.bias = random_tensor(p.bias.shape(), rng);
}

TEST(BackpropTest, SumGivesOnes) {
  std::mt19937_64 rng(1);
  Tape tape;
  Var x = tape.input(random_tensor({3, 4}, rng));
  tape.backward(ag::sum(tape, x));
  for (double g : tape.grad(x).data()) EXPECT_EQ(g, 1.0);
}

TEST(BackpropTest, LeakyReluNegativeSlope) {
  Tape tape;
  Var x = tape.input(Tensor({3}, {-1.0, -0.5, 2.0}));
  tape.backward(ag::sum(tape, ag::leaky_relu(tape, x, 0.1)));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 0.1);
  EXPECT_DOUBLE_EQ(tape.grad(x)[1], 0.1);
  EXPECT_DOUBLE_EQ(tape.grad(x)[2], 1.0);
}

TEST(BackpropTest, ErrorsBeforeForward) {
  Tape empty;
  EXPECT_THROW(empty.backward(Var{0}), BackpropError);
  Tape tape;
  Var x = tape.input(Tensor({2}, 1.0));
  EXPECT_THROW(tape.backward(x), BackpropError);
  Tape silent(false);
  Var y = silent.input(Tensor({1}, 1.0));
  EXPECT_THROW(silent.backward(y), BackpropError);
}

TEST(GradcheckTest, Conv) {
  for (int seed = 0; seed < kTrials; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t s = 1 + seed % 2;
    ConvParams p = ConvParams::zeros(2, 3, 3, 3, Stride{s, s});
    randomize(p, rng);
    Tensor x = random_tensor({2, 5, 4, 2}, rng);
    const Tensor w = random_tensor(conv2d(x, p).shape(), rng);
    auto r = gradcheck(
        [&](Tape& t, std::span<const Var> in) {
          return ag::weighted_sum(t, ag::conv2d(t, in[0], p), w);
        },
        {&x}, {&p.weight, &p.bias});
    EXPECT_LE(r.max_relative_error, kTol) << "seed " << seed;
  }
}

TEST(GradcheckTest, Depthwise) {
  for (int seed = 0; seed < kTrials; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const std::size_t s = 1 + seed % 2;
    DepthwiseParams p = DepthwiseParams::zeros(3, 3, 3, Stride{s, s});
    randomize(p, rng);
    Tensor x = random_tensor({2, 4, 5, 3}, rng);
    const Tensor w = random_tensor(depthwise_conv2d(x, p).shape(), rng);
    auto r = gradcheck(
        [&](Tape& t, std::span<const Var> in) {
          return ag::weighted_sum(t, ag::depthwise_conv2d(t, in[0], p), w);
        },
        {&x}, {&p.weight, &p.bias});
    EXPECT_LE(r.max_relative_error, kTol) << "seed " << seed;
  }
}

TEST(GradcheckTest, Separable) {
  for (int seed = 0; seed < kTrials; ++seed) {
    std::mt19937_64 rng(200 + seed);
    DepthwiseParams dw = DepthwiseParams::zeros(3, 3, 3);
    ConvParams pw = ConvParams::zeros(3, 4, 1, 1);
    randomize(dw, rng);
    randomize(pw, rng);
    Tensor x = random_tensor({2, 4, 4, 3}, rng);
    const Tensor w = random_tensor(separable_conv2d(x, dw, pw).shape(), rng);
    auto r = gradcheck(
        [&](Tape& t, std::span<const Var> in) {
          return ag::weighted_sum(t, ag::separable_conv2d(t, in[0], dw, pw), w);
        },
        {&x}, {&dw.weight, &dw.bias, &pw.weight, &pw.bias});
    EXPECT_LE(r.max_relative_error, kTol) << "seed " << seed;
  }
}

TEST(GradcheckTest, BatchNormBothModes) {
  for (Mode mode : {Mode::Train, Mode::Infer}) {
    for (int seed = 0; seed < kTrials; ++seed) {
      std::mt19937_64 rng(300 + seed);
      BNParams p = BNParams::identity(3);
      p.gamma = random_tensor({3}, rng, 0.5, 1.5);
      p.beta = random_tensor({3}, rng);
      p.running_mean = random_tensor({3}, rng);
      p.running_var = random_tensor({3}, rng, 0.5, 2.0);
      Tensor x = random_tensor({2, 3, 2, 3}, rng);
      const Tensor w = random_tensor(x.shape(), rng);
      auto r = gradcheck(
          [&](Tape& t, std::span<const Var> in) {
            return ag::weighted_sum(t, ag::batchnorm(t, in[0], p, mode), w);
          },
          {&x}, {&p.gamma, &p.beta});
      EXPECT_LE(r.max_relative_error, kTol) << "seed " << seed;
    }
  }
}

TEST(GradcheckTest, BiLstm) {
  for (int seed = 0; seed < kTrials; ++seed) {
    std::mt19937_64 rng(400 + seed);
    LstmParams p = LstmParams::zeros(3, 2);
    for (LstmDirection* d : {&p.forward, &p.backward}) {
      d->weight = random_tensor(d->weight.shape(), rng);
      d->bias = random_tensor(d->bias.shape(), rng);
    }
    Tensor x = random_tensor({2, 4, 3}, rng);
    const Tensor w = random_tensor({2, 4, 4}, rng);
    auto r = gradcheck(
        [&](Tape& t, std::span<const Var> in) {
          return ag::weighted_sum(t, ag::bilstm(t, in[0], p), w);
        },
        {&x},
        {&p.forward.weight, &p.forward.bias, &p.backward.weight, &p.backward.bias});
    EXPECT_LE(r.max_relative_error, kTol) << "seed " << seed;
  }
}

TEST(GradcheckTest, Dense) {
  for (int seed = 0; seed < kTrials; ++seed) {
    std::mt19937_64 rng(500 + seed);
    DenseParams p = DenseParams::zeros(4, 3);
    p.weight = random_tensor(p.weight.shape(), rng);
    p.bias = random_tensor(p.bias.shape(), rng);
    Tensor x = random_tensor({2, 5, 4}, rng);
    const Tensor w = random_tensor({2, 5, 3}, rng);
    auto r = gradcheck(
        [&](Tape& t, std::span<const Var> in) {
          return ag::weighted_sum(t, ag::dense(t, in[0], p), w);
        },
        {&x}, {&p.weight, &p.bias});
    EXPECT_LE(r.max_relative_error, kTol) << "seed " << seed;
  }
}

TEST(GradcheckTest, ZeroInputDenseIsExact) {
  DenseParams p = DenseParams::zeros(3, 2);
  Tensor x({3}, 0.0);
  auto r = gradcheck(
      [&](Tape& t, std::span<const Var> in) { return ag::sum(t, ag::dense(t, in[0], p)); },
      {&x}, {&p.weight, &p.bias});
  EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(GradcheckTest, ShapeAndPoolingOps) {
  for (int seed = 0; seed < kTrials; ++seed) {
    std::mt19937_64 rng(600 + seed);
    Tensor a = random_tensor({2, 4, 4, 2}, rng);
    Tensor b = random_tensor({2, 4, 4, 1}, rng);
    const Tensor w = random_tensor({2, 4, 3}, rng);
    auto r = gradcheck(
        [&](Tape& t, std::span<const Var> in) {
          Var h = ag::concat_channels(t, in[0], in[1]);
          h = ag::leaky_relu(t, h, 0.1);
          h = ag::maxpool2d(t, h, 3, 2, 1);
          h = ag::upsample2x(t, h);
          h = ag::permute(t, h, {0, 2, 1, 3});
          h = ag::global_avg_pool_axis(t, h, 1);
          h = ag::sigmoid(t, h);
          h = ag::scale(t, ag::add(t, h, h), 0.7);
          return ag::weighted_sum(t, ag::log_softmax_rows(t, h), w);
        },
        {&a, &b}, {});
    EXPECT_LE(r.max_relative_error, kTol) << "seed " << seed;
  }
}

TEST(GradcheckTest, ComposedConvBnDense) {
  std::mt19937_64 rng(700);
  // No conv bias: ahead of a train-mode BN its gradient is exactly zero and
  // the relative error would only measure finite-difference noise.
  ConvParams conv = ConvParams::zeros(2, 3, 3, 3, {}, Padding::Same(), false);
  randomize(conv, rng);
  BNParams bn = BNParams::identity(3);
  DenseParams head = DenseParams::zeros(3, 2);
  head.weight = random_tensor(head.weight.shape(), rng);
  Tensor x = random_tensor({2, 4, 3, 2}, rng);
  Tensor target = random_tensor({2, 4, 3, 2}, rng);
  auto r = gradcheck(
      [&](Tape& t, std::span<const Var> in) {
        Var h = ag::conv2d(t, in[0], conv);
        h = ag::batchnorm(t, h, bn, Mode::Train);
        h = ag::leaky_relu(t, h, 0.1);
        return ag::mse(t, ag::dense(t, h, head), target);
      },
      {&x}, {&conv.weight, &bn.gamma, &bn.beta, &head.weight, &head.bias});
  EXPECT_LE(r.max_relative_error, kTol);
}

TEST(GradcheckTest, SoftmaxAndDropout) {
  std::mt19937_64 rng(800);
  Tensor x = random_tensor({3, 5}, rng);
  const Tensor w = random_tensor({3, 5}, rng);
  auto r = gradcheck(
      [&](Tape& t, std::span<const Var> in) {
        std::mt19937_64 drop(42);  // same mask every evaluation
        Var h = ag::dropout(t, in[0], 0.3, drop, Mode::Train);
        return ag::weighted_sum(t, ag::softmax_rows(t, h), w);
      },
      {&x}, {});
  EXPECT_LE(r.max_relative_error, kTol);
}

}  // namespace
}  // namespace lpr
