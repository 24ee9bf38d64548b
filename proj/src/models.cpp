#include "lpr/models.hpp"

#include <algorithm>
#include <cmath>

namespace lpr {

namespace {
std::size_t scaled(std::size_t base, double width) {
  const auto v = static_cast<std::size_t>(std::lround(static_cast<double>(base) * width));
  return std::max<std::size_t>(2, v + (v % 2));
}

Shape sample_shape(const Tensor& t) {
  Shape s = t.shape();
  s.erase(s.begin());
  return s;
}

void record(ShapeTrace* trace, const char* name, Tape& tape, Var v) {
  if (trace) trace->emplace_back(name, sample_shape(tape.value(v)));
}

// Lifts a single sample to a batch of one.
Var as_batch(Tape& tape, Var x, std::size_t rank) {
  const Tensor& v = tape.value(x);
  if (v.rank() == rank) return x;
  Shape s = v.shape();
  s.insert(s.begin(), 1);
  return ag::reshape(tape, x, s);
}

void expect_plate_input(const Tensor& x, const char* what) {
  const bool single = x.shape() == Shape{kPlateWidth, kPlateHeight, kInputChannels};
  const bool batch = x.rank() == 4 && x.dim(0) > 0 && x.dim(1) == kPlateWidth &&
                     x.dim(2) == kPlateHeight && x.dim(3) == kInputChannels;
  if (!single && !batch) {
    throw ShapeError(std::string(what) + ": expected (128, 32, 2) or (N, 128, 32, 2), got " +
                     to_string(x.shape()));
  }
}
}  // namespace

std::size_t RecognizerConfig::stem_channels() const { return scaled(32, width); }
std::size_t RecognizerConfig::block_channels() const { return scaled(64, width); }
std::size_t RecognizerConfig::lstm_hidden() const { return scaled(64, width); }

RecognizerModel::RecognizerModel(RecognizerConfig config) : config_(config) {
  if (config_.num_classes < 2) throw std::invalid_argument("recognizer needs >= 2 classes");
  const std::size_t c1 = config_.stem_channels();
  const std::size_t c2 = config_.block_channels();
  const std::size_t c3 = 2 * c2;
  stem1_ = ConvUnit::make(kInputChannels, c1, 3, 3, Stride{2, 2});
  stem2_ = ConvUnit::make(c1, c2, 3, 3);
  for (auto& b : xception_a_) b = XceptionBlock::make(c2);
  for (auto& b : inception_a_) b = InceptionBBlock::make(c2);
  reduce_ = XceptionReduceBlock::make(c2);
  for (auto& b : xception_b_) b = XceptionBlock::make(c3);
  for (auto& b : inception_b_) b = InceptionBBlock::make(c3);
  for (auto& b : xception_c_) b = XceptionBlock::make(c3);
  lstm_ = LstmParams::zeros(c3, config_.lstm_hidden());
  head_ = DenseParams::zeros(2 * config_.lstm_hidden(), config_.num_classes,
                             /*with_bias=*/false);  // head_bn_ supplies the shift
  head_bn_ = BNParams::identity(config_.num_classes);

  std::mt19937_64 rng(config_.seed);
  stem1_.init(rng);
  stem2_.init(rng);
  for (auto& b : xception_a_) b.init(rng);
  for (auto& b : inception_a_) b.init(rng);
  reduce_.init(rng);
  for (auto& b : xception_b_) b.init(rng);
  for (auto& b : inception_b_) b.init(rng);
  for (auto& b : xception_c_) b.init(rng);
  init(lstm_, rng);
  init(head_, rng);
}

Var RecognizerModel::encode(Tape& tape, Var x, Mode mode, ShapeTrace* trace) {
  expect_plate_input(tape.value(x), "recognizer");
  Var h = as_batch(tape, x, 4);
  record(trace, "Concat", tape, h);
  h = stem1_.forward(tape, h, mode);
  record(trace, "Conv + BN + LeakyReLU", tape, h);
  h = stem2_.forward(tape, h, mode);
  record(trace, "Conv + BN + LeakyReLU", tape, h);
  for (auto& b : xception_a_) {
    h = b.forward(tape, h, mode);
    record(trace, "Xception Module", tape, h);
  }
  for (auto& b : inception_a_) {
    h = b.forward(tape, h, mode);
    record(trace, "Inception Module B", tape, h);
  }
  h = reduce_.forward(tape, h, mode);
  record(trace, "Xception Reduce Module", tape, h);
  return h;
}

Var RecognizerModel::forward(Tape& tape, Var x, Mode mode, std::mt19937_64* rng,
                             ShapeTrace* trace) {
  const bool single = tape.value(x).rank() == 3;
  Var h = encode(tape, x, mode, trace);
  for (auto& b : xception_b_) {
    h = b.forward(tape, h, mode);
    record(trace, "Xception Module", tape, h);
  }
  for (auto& b : inception_b_) {
    h = b.forward(tape, h, mode);
    record(trace, "Inception Module B", tape, h);
  }
  for (auto& b : xception_c_) {
    h = b.forward(tape, h, mode);
    record(trace, "Xception Module", tape, h);
  }
  // (N, W, H, C) -> (N, H, W, C), then average the height away so each
  // width column becomes one time step.
  h = ag::permute(tape, h, {0, 2, 1, 3});
  record(trace, "Permute", tape, h);
  h = ag::global_avg_pool_axis(tape, h, 1);
  record(trace, "GlobalAvgPool1D", tape, h);
  if (mode == Mode::Train && config_.dropout > 0.0) {
    if (!rng) throw std::invalid_argument("recognizer: train mode needs a dropout rng");
    h = ag::dropout(tape, h, config_.dropout, *rng, mode);
  }
  record(trace, "Dropout", tape, h);
  h = ag::bilstm(tape, h, lstm_);
  h = ag::dense(tape, h, head_);
  record(trace, "LSTM", tape, h);
  h = ag::batchnorm(tape, h, head_bn_, mode);
  record(trace, "BatchNorm", tape, h);
  h = ag::log_softmax_rows(tape, h);
  record(trace, "Softmax", tape, h);
  if (single) h = ag::reshape(tape, h, sample_shape(tape.value(h)));
  return h;
}

Tensor RecognizerModel::log_probs(const Tensor& image) {
  Tape tape(false);
  return tape.value(forward(tape, tape.input(image), Mode::Infer));
}

Tensor RecognizerModel::log_probs_batch(const Tensor& images) {
  Tape tape(false);
  return tape.value(forward(tape, tape.input(images), Mode::Infer));
}

TensorList RecognizerModel::tensors() {
  TensorList out;
  stem1_.collect(out, "stem1");
  stem2_.collect(out, "stem2");
  for (std::size_t i = 0; i < 2; ++i) xception_a_[i].collect(out, "xception_a" + std::to_string(i));
  for (std::size_t i = 0; i < 2; ++i) inception_a_[i].collect(out, "inception_a" + std::to_string(i));
  reduce_.collect(out, "reduce");
  for (std::size_t i = 0; i < 2; ++i) xception_b_[i].collect(out, "xception_b" + std::to_string(i));
  for (std::size_t i = 0; i < 2; ++i) inception_b_[i].collect(out, "inception_b" + std::to_string(i));
  for (std::size_t i = 0; i < 2; ++i) xception_c_[i].collect(out, "xception_c" + std::to_string(i));
  collect(out, "lstm", lstm_);
  collect(out, "head", head_);
  collect(out, "head_bn", head_bn_);
  return out;
}

std::size_t RecognizerModel::param_count() const {
  std::size_t n = stem1_.param_count() + stem2_.param_count() +
                  reduce_.param_count() + lstm_.param_count() +
                  head_.param_count() + head_bn_.param_count();
  for (const auto& b : xception_a_) n += b.param_count();
  for (const auto& b : inception_a_) n += b.param_count();
  for (const auto& b : xception_b_) n += b.param_count();
  for (const auto& b : inception_b_) n += b.param_count();
  for (const auto& b : xception_c_) n += b.param_count();
  return n;
}

std::size_t RecognizerModel::dense_equivalent_param_count() const {
  std::size_t n = stem1_.param_count() + stem2_.param_count() +
                  reduce_.dense_equivalent_param_count() + lstm_.param_count() +
                  head_.param_count() + head_bn_.param_count();
  for (const auto& b : xception_a_) n += b.dense_equivalent_param_count();
  for (const auto& b : inception_a_) n += b.param_count();
  for (const auto& b : xception_b_) n += b.dense_equivalent_param_count();
  for (const auto& b : inception_b_) n += b.param_count();
  for (const auto& b : xception_c_) n += b.dense_equivalent_param_count();
  return n;
}

// --- corner model ---------------------------------------------------------

CornerModel::CornerModel(std::uint64_t seed) {
  const std::size_t widths[5] = {kInputChannels, 16, 32, 64, 64};
  for (std::size_t i = 0; i < 4; ++i)
    stages_[i] = ConvUnit::make(widths[i], widths[i + 1], 3, 3, Stride{2, 2});
  head_ = DenseParams::zeros((kPlateWidth / 16) * (kPlateHeight / 16) * 64, 8);
  std::mt19937_64 rng(seed);
  for (auto& s : stages_) s.init(rng);
  init(head_, rng);
}

Var CornerModel::forward(Tape& tape, Var x, Mode mode) {
  expect_plate_input(tape.value(x), "corner model");
  const bool single = tape.value(x).rank() == 3;
  Var h = as_batch(tape, x, 4);
  for (auto& s : stages_) h = s.forward(tape, h, mode);
  const std::size_t n = tape.value(h).dim(0);
  h = ag::reshape(tape, h, {n, tape.value(h).size() / n});
  h = ag::sigmoid(tape, ag::dense(tape, h, head_));
  if (single) h = ag::reshape(tape, h, {8});
  return h;
}

std::array<double, 8> CornerModel::predict(const Tensor& image) {
  Tape tape(false);
  const Tensor& out = tape.value(forward(tape, tape.input(image), Mode::Infer));
  std::array<double, 8> corners{};
  for (std::size_t i = 0; i < 8; ++i) corners[i] = std::clamp(out[i], 0.0, 1.0);
  return corners;
}

TensorList CornerModel::tensors() {
  TensorList out;
  for (std::size_t i = 0; i < stages_.size(); ++i)
    stages_[i].collect(out, "corner.stage" + std::to_string(i));
  collect(out, "corner.head", head_);
  return out;
}

std::size_t CornerModel::param_count() const {
  std::size_t n = head_.param_count();
  for (const auto& s : stages_) n += s.param_count();
  return n;
}

// --- autoencoder decoder --------------------------------------------------

AutoencoderDecoder::AutoencoderDecoder(const RecognizerConfig& config,
                                       std::uint64_t seed) {
  const std::size_t code = 2 * config.block_channels();
  const std::size_t mid = config.stem_channels();
  const std::size_t last = std::max<std::size_t>(4, mid / 2);
  up1_ = ConvUnit::make(code, mid, 3, 3);
  up2_ = ConvUnit::make(mid, last, 3, 3);
  out_ = ConvParams::zeros(last, kInputChannels, 3, 3);
  std::mt19937_64 rng(seed);
  up1_.init(rng);
  up2_.init(rng);
  init(out_, rng);
}

Var AutoencoderDecoder::forward(Tape& tape, Var code, Mode mode) {
  Var h = up1_.forward(tape, ag::upsample2x(tape, code), mode);
  h = up2_.forward(tape, ag::upsample2x(tape, h), mode);
  return ag::sigmoid(tape, ag::conv2d(tape, h, out_));
}

TensorList AutoencoderDecoder::tensors() {
  TensorList out;
  up1_.collect(out, "decoder.up1");
  up2_.collect(out, "decoder.up2");
  collect(out, "decoder.out", out_);
  return out;
}

std::size_t param_count(const TensorList& tensors) {
  std::size_t n = 0;
  for (const auto& t : tensors)
    if (t.trainable) n += t.tensor->size();
  return n;
}

}  // namespace lpr
