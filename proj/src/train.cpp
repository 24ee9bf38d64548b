#include "lpr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "lpr/checkpoint.hpp"

namespace lpr {

Adam::Adam(AdamConfig config) : config_(config) {}

void Adam::step(const TensorList& tensors) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  const double lr = config_.learning_rate;
  for (const NamedTensor& nt : tensors) {
    if (!nt.trainable || !nt.tensor->has_grad()) continue;
    Moments& s = state_[nt.name];
    const std::size_t n = nt.tensor->size();
    if (s.m.size() != n) {
      s.m.assign(n, 0.0);
      s.v.assign(n, 0.0);
    }
    double* w = nt.tensor->raw();
    std::span<const double> g = std::as_const(*nt.tensor).grad();
    for (std::size_t i = 0; i < n; ++i) {
      s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * g[i];
      s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double update = (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + config_.epsilon);
      // An exact zero rate must leave the weights untouched, even -0.0.
      if (lr != 0.0) w[i] -= lr * update;
    }
  }
}

void TrainConfig::check() const {
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (!(adam.learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw std::invalid_argument("train: moment coefficients must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw std::invalid_argument("train: epsilon must be positive");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0))
    throw std::invalid_argument("train: final learning-rate fraction must lie in [0, 1]");
  if (time_budget_seconds < 0.0) throw std::invalid_argument("train: negative time budget");
  if (augment) augment->check();
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Stacks (128, 32, 2) samples into (N, 128, 32, 2).
Tensor stack(const std::vector<const Tensor*>& items) {
  const Shape& s = items.front()->shape();
  Tensor out({items.size(), s[0], s[1], s[2]});
  double* dst = out.raw();
  for (const Tensor* t : items) dst = std::copy(t->raw(), t->raw() + t->size(), dst);
  return out;
}

/// Row `i` of an (N, T, C) tensor as (T, C).
Tensor row(const Tensor& batch, std::size_t i) {
  const std::size_t stride = batch.dim(1) * batch.dim(2);
  return Tensor({batch.dim(1), batch.dim(2)},
                std::vector<double>(batch.raw() + i * stride, batch.raw() + (i + 1) * stride));
}

void zero_grads(const TensorList& tensors) {
  for (const NamedTensor& nt : tensors)
    if (nt.trainable) nt.tensor->zero_grad();
}

void drop_grads(const TensorList& tensors) {
  for (const NamedTensor& nt : tensors) nt.tensor->drop_grad();
}

AugmentConfig photometric_only(AugmentConfig a) {
  a.rotation_deg = {0.0, 0.0};
  a.shear_deg = {0.0, 0.0};
  return a;
}

// Shared epoch loop. `batch_loss` builds the loss of one mini-batch on the
// tape and returns it; the loop handles ordering, updates and bookkeeping.
template <typename BatchLoss>
TrainResult run_epochs(std::size_t n, const TensorList& tensors, const TrainConfig& config,
                       std::mt19937_64& rng, BatchLoss&& batch_loss,
                       const std::function<double()>& heldout) {
  TrainResult result;
  const auto start = Clock::now();
  Adam adam(config.adam);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    if (config.epochs > 1) {
      const double progress = double(epoch - 1) / double(config.epochs - 1);
      const double f = config.final_lr_fraction;
      adam.set_learning_rate(config.adam.learning_rate *
                             (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
    }
    double total = 0.0;
    for (std::size_t b = 0; b < n; b += config.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + b,
                                         order.begin() + std::min(n, b + config.batch_size));
      Tape tape;
      zero_grads(tensors);
      const Var loss = batch_loss(tape, idx);
      total += tape.value(loss)[0] * static_cast<double>(idx.size());
      tape.backward(loss);
      adam.step(tensors);
      round_to_float32(tensors);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = total / static_cast<double>(n);
    stats.heldout_accuracy = heldout ? heldout() : std::numeric_limits<double>::quiet_NaN();
    stats.seconds = since(start);
    result.epochs.push_back(stats);
    if (config.on_epoch) config.on_epoch(stats);
    if (config.time_budget_seconds > 0.0 && stats.seconds >= config.time_budget_seconds) break;
  }
  drop_grads(tensors);
  result.seconds = since(start);
  return result;
}

bool is_encoder_tensor(const std::string& name) {
  for (const char* prefix : {"stem1.", "stem2.", "xception_a", "inception_a", "reduce."})
    if (name.starts_with(prefix)) return true;
  return false;
}

TensorList encoder_tensors(RecognizerModel& model) {
  TensorList out;
  for (const NamedTensor& nt : model.tensors())
    if (is_encoder_tensor(nt.name)) out.push_back(nt);
  return out;
}

}  // namespace

double recognizer_accuracy(RecognizerModel& model, const Alphabet& alphabet,
                           const std::vector<LabeledImage>& data) {
  if (data.empty()) return 0.0;
  constexpr std::size_t kChunk = 64;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < data.size(); b += kChunk) {
    std::vector<Tensor> inputs;
    for (std::size_t i = b; i < std::min(data.size(), b + kChunk); ++i)
      inputs.push_back(to_two_channel(data[i].image));
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : inputs) ptrs.push_back(&t);
    const Tensor lp = model.log_probs_batch(stack(ptrs));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const LabelSeq labels = ctc_greedy_decode(row(lp, i));
      if (alphabet.decode(labels) == data[b + i].text) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_recognizer(RecognizerModel& model, const Alphabet& alphabet,
                             const std::vector<LabeledImage>& train,
                             const std::vector<LabeledImage>* heldout,
                             const TrainConfig& config) {
  config.check();
  if (train.empty()) throw TrainingDataError("train_recognizer: empty training set");
  if (alphabet.num_classes() != static_cast<int>(model.config().num_classes)) {
    throw TrainingDataError("train_recognizer: alphabet has " +
                            std::to_string(alphabet.num_classes()) + " classes, model has " +
                            std::to_string(model.config().num_classes));
  }
  std::vector<LabelSeq> targets;
  targets.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const std::string& text = train[i].text;
    const std::string where = "train_recognizer: sample " + std::to_string(i) + " '" + text + "'";
    LabelSeq seq;
    try {
      seq = alphabet.encode(text);
    } catch (const std::invalid_argument& e) {
      throw TrainingDataError(where + ": " + e.what());
    }
    if (ctc_min_frames(seq) > kSequenceLength) {
      throw InfeasibleTargetError(where + " needs " + std::to_string(ctc_min_frames(seq)) +
                                  " frames, the model emits " + std::to_string(kSequenceLength));
    }
    if (!validate(text)) throw TrainingDataError(where + " matches no plate template");
    targets.push_back(std::move(seq));
  }

  std::vector<Tensor> fixed;
  if (!config.augment) {
    fixed.reserve(train.size());
    for (const LabeledImage& s : train) fixed.push_back(to_two_channel(s.image));
  }
  std::vector<Tensor> heldout_inputs;

  const double saved_dropout = model.config().dropout;
  if (!config.dropout) model.set_dropout(0.0);
  std::mt19937_64 rng(config.seed);
  const TensorList tensors = model.tensors();

  auto batch_loss = [&](Tape& tape, const std::vector<std::size_t>& idx) {
    std::vector<Tensor> augmented;
    std::vector<const Tensor*> items;
    std::vector<LabelSeq> batch_targets;
    if (config.augment) {
      augmented.reserve(idx.size());
      for (std::size_t i : idx)
        augmented.push_back(to_two_channel(augment(train[i].image, *config.augment, rng)));
      for (const Tensor& t : augmented) items.push_back(&t);
    } else {
      for (std::size_t i : idx) items.push_back(&fixed[i]);
    }
    for (std::size_t i : idx) batch_targets.push_back(targets[i]);
    const Var x = tape.input(stack(items));
    const Var lp = model.forward(tape, x, Mode::Train, &rng);
    return ag::ctc_loss(tape, lp, batch_targets);
  };
  std::function<double()> eval;
  if (heldout && !heldout->empty())
    eval = [&] { return recognizer_accuracy(model, alphabet, *heldout); };

  try {
    TrainResult r = run_epochs(train.size(), tensors, config, rng, batch_loss, eval);
    model.set_dropout(saved_dropout);
    return r;
  } catch (...) {
    model.set_dropout(saved_dropout);
    throw;
  }
}

TrainResult pretrain_autoencoder(RecognizerModel& model, AutoencoderDecoder& decoder,
                                 const std::vector<Image>& images, const TrainConfig& config) {
  config.check();
  if (images.empty()) throw TrainingDataError("pretrain_autoencoder: empty corpus");
  TensorList tensors = encoder_tensors(model);
  for (const NamedTensor& nt : decoder.tensors()) tensors.push_back(nt);

  std::vector<Tensor> fixed;
  if (!config.augment) {
    for (const Image& img : images) fixed.push_back(to_two_channel(img));
  }
  std::mt19937_64 rng(config.seed);
  auto batch_loss = [&](Tape& tape, const std::vector<std::size_t>& idx) {
    std::vector<Tensor> augmented;
    std::vector<const Tensor*> items;
    if (config.augment) {
      for (std::size_t i : idx)
        augmented.push_back(to_two_channel(augment(images[i], *config.augment, rng)));
      for (const Tensor& t : augmented) items.push_back(&t);
    } else {
      for (std::size_t i : idx) items.push_back(&fixed[i]);
    }
    Tensor batch = stack(items);
    const Var x = tape.input(batch);
    const Var code = model.encode(tape, x, Mode::Train);
    const Var recon = decoder.forward(tape, code, Mode::Train);
    return ag::mse(tape, recon, batch);
  };
  return run_epochs(images.size(), tensors, config, rng, batch_loss, {});
}

double reconstruction_error(RecognizerModel& model, AutoencoderDecoder& decoder,
                            const std::vector<Image>& images) {
  if (images.empty()) throw TrainingDataError("reconstruction_error: empty corpus");
  double total = 0.0;
  for (const Image& img : images) {
    Tape tape(false);
    const Tensor x = to_two_channel(img);
    const Var code = model.encode(tape, tape.input(x), Mode::Infer);
    const Var recon = decoder.forward(tape, code, Mode::Infer);
    total += tape.value(ag::mse(tape, recon, x))[0];
  }
  return total / static_cast<double>(images.size());
}

void transfer_encoder(RecognizerModel& from, RecognizerModel& to) {
  const TensorList src = encoder_tensors(from);
  const TensorList dst = encoder_tensors(to);
  if (src.size() != dst.size()) {
    throw CheckpointMismatchError("transfer_encoder: encoders differ in layout");
  }
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor->shape() != dst[i].tensor->shape()) {
      throw CheckpointMismatchError("transfer_encoder: tensor '" + src[i].name + "' " +
                                    to_string(src[i].tensor->shape()) + " vs '" + dst[i].name +
                                    "' " + to_string(dst[i].tensor->shape()));
    }
    std::copy(src[i].tensor->data().begin(), src[i].tensor->data().end(),
              dst[i].tensor->data().begin());
  }
}

std::array<double, 8> normalize_corners(const Quad& q, std::size_t width, std::size_t height) {
  if (width < 2 || height < 2) throw std::invalid_argument("normalize_corners: image too small");
  std::array<double, 8> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    v[2 * i] = q[i].x / static_cast<double>(width - 1);
    v[2 * i + 1] = q[i].y / static_cast<double>(height - 1);
  }
  return v;
}

Quad denormalize_corners(const std::array<double, 8>& v, std::size_t width, std::size_t height) {
  if (width < 2 || height < 2) throw std::invalid_argument("denormalize_corners: image too small");
  Quad q;
  for (std::size_t i = 0; i < 4; ++i) {
    q[i] = Point{v[2 * i] * static_cast<double>(width - 1),
                 v[2 * i + 1] * static_cast<double>(height - 1)};
  }
  return q;
}

TrainResult train_corner_model(CornerModel& model, const std::vector<CornerSample>& samples,
                               const TrainConfig& config) {
  config.check();
  if (samples.empty()) throw TrainingDataError("train_corner_model: no corner-annotated samples");
  // Aligned-corner resizing preserves normalized coordinates, so targets
  // can be computed in the source image's own frame.
  std::vector<Tensor> targets;
  std::vector<Tensor> fixed;
  for (const CornerSample& s : samples) {
    const auto v = normalize_corners(s.corners, s.image.width, s.image.height);
    targets.emplace_back(Shape{8}, std::vector<double>(v.begin(), v.end()));
    if (!config.augment) fixed.push_back(to_two_channel(s.image));
  }
  const std::optional<AugmentConfig> aug =
      config.augment ? std::optional(photometric_only(*config.augment)) : std::nullopt;
  std::mt19937_64 rng(config.seed);
  const TensorList tensors = model.tensors();
  auto batch_loss = [&](Tape& tape, const std::vector<std::size_t>& idx) {
    std::vector<Tensor> augmented;
    std::vector<const Tensor*> items;
    if (aug) {
      for (std::size_t i : idx)
        augmented.push_back(to_two_channel(augment(samples[i].image, *aug, rng)));
      for (const Tensor& t : augmented) items.push_back(&t);
    } else {
      for (std::size_t i : idx) items.push_back(&fixed[i]);
    }
    Tensor target({idx.size(), 8});
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy(targets[idx[k]].raw(), targets[idx[k]].raw() + 8, target.raw() + 8 * k);
    const Var pred = model.forward(tape, tape.input(stack(items)), Mode::Train);
    return ag::mse(tape, pred, target);
  };
  return run_epochs(samples.size(), tensors, config, rng, batch_loss, {});
}

double mean_corner_error(CornerModel& model, const std::vector<CornerSample>& samples) {
  if (samples.empty()) throw TrainingDataError("mean_corner_error: no samples");
  double total = 0.0;
  for (const CornerSample& s : samples) {
    const Quad truth = denormalize_corners(
        normalize_corners(s.corners, s.image.width, s.image.height), kPlateWidth, kPlateHeight);
    const Quad pred =
        denormalize_corners(model.predict(to_two_channel(s.image)), kPlateWidth, kPlateHeight);
    for (std::size_t i = 0; i < 4; ++i)
      total += std::hypot(pred[i].x - truth[i].x, pred[i].y - truth[i].y);
  }
  return total / (4.0 * static_cast<double>(samples.size()));
}

}  // namespace lpr
