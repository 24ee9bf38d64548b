#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lpr/blocks.hpp"
#include "lpr/ctc.hpp"
#include "lpr/gradcheck.hpp"
#include "lpr/models.hpp"

namespace lpr {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

template <typename Block>
Tensor run(Block& b, const Tensor& x, Mode mode) {
  Tape tape(false);
  return tape.value(b.forward(tape, tape.input(x), mode));
}

void zero_weights(TensorList tensors) {
  for (auto& t : tensors)
    if (t.name.find("weight") != std::string::npos) t.tensor->fill(0.0);
}

TEST(XceptionBlockTest, ZeroPathIsIdentity) {
  std::mt19937_64 rng(1);
  XceptionBlock b = XceptionBlock::make(4);
  b.init(rng);
  TensorList list;
  b.collect(list, "x");
  zero_weights(list);
  Tensor x = random_tensor({2, 6, 4, 4}, rng);
  EXPECT_EQ(run(b, x, Mode::Train), x);
  EXPECT_EQ(run(b, x, Mode::Infer), x);
}

TEST(XceptionBlockTest, TableShape) {
  std::mt19937_64 rng(2);
  XceptionBlock b = XceptionBlock::make(64);
  b.init(rng);
  EXPECT_EQ(run(b, random_tensor({64, 16, 64}, rng), Mode::Infer).shape(),
            (Shape{64, 16, 64}));
  EXPECT_THROW(run(b, random_tensor({8, 4, 32}, rng), Mode::Infer), ShapeError);
}

TEST(XceptionBlockTest, EqualsComposedPrimitives) {
  std::mt19937_64 rng(3);
  XceptionBlock b = XceptionBlock::make(8);
  b.init(rng);
  b.bn1.running_mean = random_tensor({8}, rng);
  b.bn2.running_var = random_tensor({8}, rng, 0.5, 2);
  Tensor x = random_tensor({4, 4, 8}, rng);
  Tensor h = leaky_relu(x, 0.1);
  h = separable_conv2d(h, b.dw1, b.pw1);
  h = batchnorm(h, b.bn1, Mode::Infer);
  h = leaky_relu(h, 0.1);
  h = separable_conv2d(h, b.dw2, b.pw2);
  h = batchnorm(h, b.bn2, Mode::Infer);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] += x[i];
  EXPECT_LE(max_abs_diff(run(b, x, Mode::Infer), h), 1e-12);
}

TEST(InceptionBTest, ZeroBranchesAreIdentity) {
  std::mt19937_64 rng(4);
  InceptionBBlock b = InceptionBBlock::make(8);
  b.init(rng);
  TensorList list;
  b.collect(list, "i");
  zero_weights(list);
  Tensor x = random_tensor({2, 8, 4, 8}, rng);
  EXPECT_EQ(run(b, x, Mode::Train), x);
}

TEST(InceptionBTest, TableShape) {
  std::mt19937_64 rng(5);
  InceptionBBlock b = InceptionBBlock::make(128);
  b.init(rng);
  EXPECT_EQ(run(b, random_tensor({32, 8, 128}, rng), Mode::Infer).shape(),
            (Shape{32, 8, 128}));
  EXPECT_DOUBLE_EQ(b.residual_scale, 0.2);
}

TEST(InceptionBTest, FactorizedPairEqualsRankOneSevenBySeven) {
  std::mt19937_64 rng(6);
  ConvParams along_h = ConvParams::zeros(1, 1, 1, 7);
  ConvParams along_w = ConvParams::zeros(1, 1, 7, 1);
  along_h.weight = random_tensor(along_h.weight.shape(), rng);
  along_w.weight = random_tensor(along_w.weight.shape(), rng);
  ConvParams full = ConvParams::zeros(1, 1, 7, 7);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j)
      full.weight.at({0, 0, i, j}) = along_w.weight[i] * along_h.weight[j];
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({12, 9, 1}, rng);
    EXPECT_LE(max_abs_diff(conv2d(conv2d(x, along_h), along_w), conv2d(x, full)), 1e-12);
  }
}

TEST(ReduceBlockTest, HalvesAndDoubles) {
  std::mt19937_64 rng(7);
  XceptionReduceBlock b = XceptionReduceBlock::make(64);
  b.init(rng);
  EXPECT_EQ(run(b, random_tensor({64, 16, 64}, rng), Mode::Infer).shape(),
            (Shape{32, 8, 128}));
  XceptionReduceBlock small = XceptionReduceBlock::make(2);
  EXPECT_THROW(run(small, random_tensor({5, 4, 2}, rng), Mode::Infer), ShapeError);
}

TEST(ReduceBlockTest, ConstantPassesThroughPoolBranch) {
  std::mt19937_64 rng(8);
  XceptionReduceBlock b = XceptionReduceBlock::make(3);
  b.init(rng);
  TensorList list;
  b.collect(list, "r");
  zero_weights(list);
  Tensor y = run(b, Tensor({6, 4, 3}, 0.6), Mode::Infer);
  for (std::size_t p = 0; p < 3 * 2; ++p)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(y[p * 6 + c], c < 3 ? 0.0 : 0.6);
}

TEST(ReduceBlockTest, EqualsComposedPrimitives) {
  std::mt19937_64 rng(9);
  XceptionReduceBlock b = XceptionReduceBlock::make(4);
  b.init(rng);
  b.skip.bias = random_tensor({8}, rng);
  Tensor x = random_tensor({8, 4, 4}, rng);
  Tensor conv = batchnorm(separable_conv2d(leaky_relu(x, 0.1), b.dw, b.pw), b.bn, Mode::Infer);
  Tensor joined = concat_channels(conv, maxpool2d(x, 3, 2, 1));
  Tensor skip = conv2d(x, b.skip);
  for (std::size_t i = 0; i < joined.size(); ++i) joined[i] += skip[i];
  EXPECT_LE(max_abs_diff(run(b, x, Mode::Infer), joined), 1e-12);
}

TEST(ParamCountTest, Formulas) {
  EXPECT_EQ(ConvParams::zeros(64, 64, 3, 3).param_count(), 36928u);
  EXPECT_EQ(separable_params(64, 64, 3).param_count(), 4736u);
  EXPECT_EQ(ConvUnit::make(64, 64, 3, 3, {}).param_count(), 64u * 64 * 9 + 2 * 64);
  EXPECT_EQ(param_count(TensorList{}), 0u);
  RecognizerModel m;
  EXPECT_EQ(m.param_count(), 0u);
}

TEST(RecognizerTest, ReproducesTableShapes) {
  RecognizerModel model(RecognizerConfig{});
  std::mt19937_64 rng(10);
  Tape tape(false);
  ShapeTrace trace;
  Var out = model.forward(tape, tape.input(random_tensor({128, 32, 2}, rng, 0, 1)),
                          Mode::Infer, nullptr, &trace);
  const ShapeTrace expected = {
      {"Concat", {128, 32, 2}},
      {"Conv + BN + LeakyReLU", {64, 16, 32}},
      {"Conv + BN + LeakyReLU", {64, 16, 64}},
      {"Xception Module", {64, 16, 64}},
      {"Xception Module", {64, 16, 64}},
      {"Inception Module B", {64, 16, 64}},
      {"Inception Module B", {64, 16, 64}},
      {"Xception Reduce Module", {32, 8, 128}},
      {"Xception Module", {32, 8, 128}},
      {"Xception Module", {32, 8, 128}},
      {"Inception Module B", {32, 8, 128}},
      {"Inception Module B", {32, 8, 128}},
      {"Xception Module", {32, 8, 128}},
      {"Xception Module", {32, 8, 128}},
      {"Permute", {8, 32, 128}},
      {"GlobalAvgPool1D", {32, 128}},
      {"Dropout", {32, 128}},
      {"LSTM", {32, 38}},
      {"BatchNorm", {32, 38}},
      {"Softmax", {32, 38}},
  };
  EXPECT_EQ(trace, expected);
  const Tensor& lp = tape.value(out);
  ASSERT_EQ(lp.shape(), (Shape{32, 38}));
  for (std::size_t t = 0; t < 32; ++t) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 38; ++k) sum += std::exp(lp.at({t, k}));
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  EXPECT_LT(model.param_count(), model.dense_equivalent_param_count());
  EXPECT_THROW(model.log_probs(Tensor({64, 32, 2})), ShapeError);
}

TEST(RecognizerTest, FreshModelNearUniformAndDeterministic) {
  RecognizerModel model(RecognizerConfig{.width = 0.25});
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({128, 32, 2}, rng, 0, 1);
  Tensor a = model.log_probs(x);
  EXPECT_EQ(a, model.log_probs(x));
  for (double v : a.data()) EXPECT_LT(std::abs(std::exp(v) - 1.0 / 38.0), 0.15);
}

TEST(RecognizerTest, BatchMatchesSingleInInferMode) {
  RecognizerModel model(RecognizerConfig{.num_classes = 13, .width = 0.25});
  std::mt19937_64 rng(12);
  Tensor batch = random_tensor({3, 128, 32, 2}, rng, 0, 1);
  Tensor out = model.log_probs_batch(batch);
  ASSERT_EQ(out.shape(), (Shape{3, 32, 13}));
  const std::size_t plane = 128 * 32 * 2;
  Tensor one({128, 32, 2}, std::vector<double>(batch.raw() + plane, batch.raw() + 2 * plane));
  Tensor single = model.log_probs(one);
  for (std::size_t i = 0; i < single.size(); ++i)
    EXPECT_NEAR(single[i], out[32 * 13 + i], 1e-12);
}

TEST(CornerModelTest, RangeAndZeroWeightMidpoint) {
  CornerModel model(3);
  std::mt19937_64 rng(13);
  auto c = model.predict(random_tensor({128, 32, 2}, rng, 0, 1));
  for (double v : c) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  zero_weights(model.tensors());
  for (double v : model.predict(random_tensor({128, 32, 2}, rng, 0, 1))) EXPECT_EQ(v, 0.5);
  EXPECT_THROW(model.predict(Tensor({128, 16, 2})), ShapeError);
}

TEST(MiniRecognizerTest, EndToEndGradcheck) {
  std::mt19937_64 rng(14);
  ConvUnit stem = ConvUnit::make(2, 4, 3, 3);
  XceptionBlock xb = XceptionBlock::make(4);
  InceptionBBlock ib = InceptionBBlock::make(4);
  XceptionReduceBlock rb = XceptionReduceBlock::make(4);
  LstmParams lstm = LstmParams::zeros(8, 3);
  DenseParams head = DenseParams::zeros(6, 4);
  stem.init(rng);
  xb.init(rng);
  ib.init(rng);
  rb.init(rng);
  init(lstm, rng);
  init(head, rng);
  TensorList list;
  stem.collect(list, "s");
  xb.collect(list, "x");
  ib.collect(list, "i");
  rb.collect(list, "r");
  collect(list, "l", lstm);
  collect(list, "h", head);
  std::vector<Tensor*> params;
  for (auto& t : list) {
    if (!t.trainable) continue;
    // Break the zero-bias symmetry so every parameter sees a generic point.
    for (double& v : t.tensor->data()) v += 0.05 * std::uniform_real_distribution<>(-1, 1)(rng);
    params.push_back(t.tensor);
  }
  Tensor x = random_tensor({2, 12, 4, 2}, rng, 0, 1);
  const std::vector<LabelSeq> targets{{0, 1}, {2}};
  auto r = gradcheck(
      [&](Tape& t, std::span<const Var> in) {
        Var h = stem.forward(t, in[0], Mode::Train);
        h = xb.forward(t, h, Mode::Train);
        h = ib.forward(t, h, Mode::Train);
        h = rb.forward(t, h, Mode::Train);
        h = ag::permute(t, h, {0, 2, 1, 3});
        h = ag::global_avg_pool_axis(t, h, 1);
        h = ag::dense(t, ag::bilstm(t, h, lstm), head);
        return ag::ctc_loss(t, ag::log_softmax_rows(t, h), targets);
      },
      {&x}, params);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

}  // namespace
}  // namespace lpr
