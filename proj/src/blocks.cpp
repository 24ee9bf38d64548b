#include "lpr/blocks.hpp"

#include <cmath>

namespace lpr {

namespace {
void uniform_fill(Tensor& t, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(u(rng)));
}
}  // namespace

void collect(TensorList& out, const std::string& prefix, ConvParams& p) {
  out.push_back({prefix + ".weight", &p.weight, true});
  if (!p.bias.empty()) out.push_back({prefix + ".bias", &p.bias, true});
}

void collect(TensorList& out, const std::string& prefix, DepthwiseParams& p) {
  out.push_back({prefix + ".weight", &p.weight, true});
  if (!p.bias.empty()) out.push_back({prefix + ".bias", &p.bias, true});
}

void collect(TensorList& out, const std::string& prefix, BNParams& p) {
  out.push_back({prefix + ".gamma", &p.gamma, true});
  out.push_back({prefix + ".beta", &p.beta, true});
  out.push_back({prefix + ".running_mean", &p.running_mean, false});
  out.push_back({prefix + ".running_var", &p.running_var, false});
}

void collect(TensorList& out, const std::string& prefix, LstmParams& p) {
  out.push_back({prefix + ".fwd.weight", &p.forward.weight, true});
  out.push_back({prefix + ".fwd.bias", &p.forward.bias, true});
  out.push_back({prefix + ".bwd.weight", &p.backward.weight, true});
  out.push_back({prefix + ".bwd.bias", &p.backward.bias, true});
}

void collect(TensorList& out, const std::string& prefix, DenseParams& p) {
  out.push_back({prefix + ".weight", &p.weight, true});
  if (!p.bias.empty()) out.push_back({prefix + ".bias", &p.bias, true});
}

void init(ConvParams& p, std::mt19937_64& rng) {
  const double fan_in =
      static_cast<double>(p.in_channels() * p.kernel_w() * p.kernel_h());
  uniform_fill(p.weight, std::sqrt(6.0 / fan_in), rng);
  p.bias.fill(0.0);
}

void init(DepthwiseParams& p, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(p.weight.dim(1) * p.weight.dim(2));
  uniform_fill(p.weight, std::sqrt(6.0 / fan_in), rng);
  p.bias.fill(0.0);
}

void init(LstmParams& p, std::mt19937_64& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(p.hidden_size));
  for (LstmDirection* d : {&p.forward, &p.backward}) {
    uniform_fill(d->weight, limit, rng);
    d->bias.fill(0.0);
    // Forget-gate bias 1 keeps early gradients flowing through the cell.
    for (std::size_t k = 0; k < p.hidden_size; ++k) d->bias[p.hidden_size + k] = 1.0;
  }
}

void init(DenseParams& p, std::mt19937_64& rng) {
  const double fan = static_cast<double>(p.weight.dim(0) + p.weight.dim(1));
  uniform_fill(p.weight, std::sqrt(6.0 / fan), rng);
  p.bias.fill(0.0);
}

// --- ConvUnit -------------------------------------------------------------

ConvUnit ConvUnit::make(std::size_t in_ch, std::size_t out_ch, std::size_t kw,
                        std::size_t kh, Stride stride) {
  // BN's shift makes a conv bias redundant (its gradient is identically zero).
  return {ConvParams::zeros(in_ch, out_ch, kw, kh, stride, Padding::Same(), false),
          BNParams::identity(out_ch)};
}

Var ConvUnit::forward(Tape& tape, Var x, Mode mode) {
  Var h = ag::conv2d(tape, x, conv);
  h = ag::batchnorm(tape, h, bn, mode);
  return ag::leaky_relu(tape, h, kLeakyAlpha);
}

void ConvUnit::collect(TensorList& out, const std::string& prefix) {
  lpr::collect(out, prefix + ".conv", conv);
  lpr::collect(out, prefix + ".bn", bn);
}

// --- Xception -------------------------------------------------------------

namespace {
void check_channels(const Tensor& x, std::size_t channels, const char* what) {
  if (x.rank() < 3 || x.shape().back() != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) +
                     " channels, got " + to_string(x.shape()));
  }
}
}  // namespace

XceptionBlock XceptionBlock::make(std::size_t channels) {
  // Both separable stages feed a BN, so neither carries a bias.
  SeparableParams a = separable_params(channels, channels, 3, {}, false);
  SeparableParams b = separable_params(channels, channels, 3, {}, false);
  return {std::move(a.depthwise), std::move(a.pointwise), BNParams::identity(channels),
          std::move(b.depthwise), std::move(b.pointwise), BNParams::identity(channels)};
}

Var XceptionBlock::forward(Tape& tape, Var x, Mode mode) {
  check_channels(tape.value(x), channels(), "xception_block");
  Var h = ag::leaky_relu(tape, x, kLeakyAlpha);
  h = ag::separable_conv2d(tape, h, dw1, pw1);
  h = ag::batchnorm(tape, h, bn1, mode);
  h = ag::leaky_relu(tape, h, kLeakyAlpha);
  h = ag::separable_conv2d(tape, h, dw2, pw2);
  h = ag::batchnorm(tape, h, bn2, mode);
  return ag::add(tape, x, h);
}

void XceptionBlock::init(std::mt19937_64& rng) {
  lpr::init(dw1, rng);
  lpr::init(pw1, rng);
  lpr::init(dw2, rng);
  lpr::init(pw2, rng);
}

void XceptionBlock::collect(TensorList& out, const std::string& prefix) {
  lpr::collect(out, prefix + ".dw1", dw1);
  lpr::collect(out, prefix + ".pw1", pw1);
  lpr::collect(out, prefix + ".bn1", bn1);
  lpr::collect(out, prefix + ".dw2", dw2);
  lpr::collect(out, prefix + ".pw2", pw2);
  lpr::collect(out, prefix + ".bn2", bn2);
}

std::size_t XceptionBlock::param_count() const {
  return dw1.param_count() + pw1.param_count() + bn1.param_count() +
         dw2.param_count() + pw2.param_count() + bn2.param_count();
}

std::size_t XceptionBlock::dense_equivalent_param_count() const {
  const std::size_t c = channels();
  const std::size_t dense = c * c * 9;
  return 2 * dense + bn1.param_count() + bn2.param_count();
}

// --- Inception-B ----------------------------------------------------------

InceptionBBlock InceptionBBlock::make(std::size_t channels) {
  if (channels < 2 || channels % 2) {
    throw ShapeError("inception_b_block: channel count must be even, got " +
                     std::to_string(channels));
  }
  const std::size_t half = channels / 2;
  return {ConvUnit::make(channels, half, 1, 1),
          ConvUnit::make(channels, half, 1, 1),
          ConvUnit::make(half, half, 1, 7),
          ConvUnit::make(half, half, 7, 1),
          ConvParams::zeros(channels, channels, 1, 1),
          0.2};
}

Var InceptionBBlock::forward(Tape& tape, Var x, Mode mode) {
  check_channels(tape.value(x), channels(), "inception_b_block");
  Var a = branch_a.forward(tape, x, mode);
  Var b = branch_b1.forward(tape, x, mode);
  b = branch_b2.forward(tape, b, mode);
  b = branch_b3.forward(tape, b, mode);
  Var merged = ag::conv2d(tape, ag::concat_channels(tape, a, b), project);
  return ag::add(tape, x, ag::scale(tape, merged, residual_scale));
}

void InceptionBBlock::init(std::mt19937_64& rng) {
  branch_a.init(rng);
  branch_b1.init(rng);
  branch_b2.init(rng);
  branch_b3.init(rng);
  lpr::init(project, rng);
}

void InceptionBBlock::collect(TensorList& out, const std::string& prefix) {
  branch_a.collect(out, prefix + ".a");
  branch_b1.collect(out, prefix + ".b1");
  branch_b2.collect(out, prefix + ".b2");
  branch_b3.collect(out, prefix + ".b3");
  lpr::collect(out, prefix + ".project", project);
}

std::size_t InceptionBBlock::param_count() const {
  return branch_a.param_count() + branch_b1.param_count() +
         branch_b2.param_count() + branch_b3.param_count() +
         project.param_count();
}

// --- Xception reduce ------------------------------------------------------

XceptionReduceBlock XceptionReduceBlock::make(std::size_t channels) {
  SeparableParams sep = separable_params(channels, channels, 3, Stride{2, 2}, false);
  return {std::move(sep.depthwise), std::move(sep.pointwise),
          BNParams::identity(channels),
          ConvParams::zeros(channels, 2 * channels, 1, 1, Stride{2, 2},
                            Padding::Pixels(0, 0))};
}

Var XceptionReduceBlock::forward(Tape& tape, Var x, Mode mode) {
  const Tensor& in = tape.value(x);
  check_channels(in, channels(), "xception_reduce_block");
  const std::size_t w = in.dim(in.rank() - 3), h = in.dim(in.rank() - 2);
  if (w % 2 || h % 2) {
    throw ShapeError("xception_reduce_block: spatial dims must be even, got " +
                     to_string(in.shape()));
  }
  Var conv = ag::leaky_relu(tape, x, kLeakyAlpha);
  conv = ag::separable_conv2d(tape, conv, dw, pw);
  conv = ag::batchnorm(tape, conv, bn, mode);
  Var pool = ag::maxpool2d(tape, x, 3, 2, 1);
  Var joined = ag::concat_channels(tape, conv, pool);
  return ag::add(tape, joined, ag::conv2d(tape, x, skip));
}

void XceptionReduceBlock::init(std::mt19937_64& rng) {
  lpr::init(dw, rng);
  lpr::init(pw, rng);
  lpr::init(skip, rng);
}

void XceptionReduceBlock::collect(TensorList& out, const std::string& prefix) {
  lpr::collect(out, prefix + ".dw", dw);
  lpr::collect(out, prefix + ".pw", pw);
  lpr::collect(out, prefix + ".bn", bn);
  lpr::collect(out, prefix + ".skip", skip);
}

std::size_t XceptionReduceBlock::param_count() const {
  return dw.param_count() + pw.param_count() + bn.param_count() +
         skip.param_count();
}

std::size_t XceptionReduceBlock::dense_equivalent_param_count() const {
  const std::size_t c = channels();
  return c * c * 9 + bn.param_count() + skip.param_count();
}

}  // namespace lpr
