#pragma once

// Training loops: autoencoder pretraining of the recognizer's encoder, CTC
// training of the recognizer, and corner regression. All loops run on one
// thread and are deterministic for a given seed.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lpr/blocks.hpp"
#include "lpr/ctc.hpp"
#include "lpr/image.hpp"
#include "lpr/models.hpp"
#include "lpr/platelang.hpp"
#include "lpr/rectify.hpp"

namespace lpr {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Adaptive-moment gradient descent over the trainable tensors of a list.
/// Moment state is keyed by tensor name.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});
  /// One update from the gradients currently held by the tensors.
  void step(const TensorList& tensors);
  std::size_t steps() const { return steps_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  /// Plate-exact accuracy on the held-out set; NaN when none was given.
  double heldout_accuracy = 0.0;
  double seconds = 0.0;  // wall clock since training started
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  AdamConfig adam;
  /// Cosine decay of the learning rate, per epoch, from adam.learning_rate
  /// down to this fraction of it at the last epoch. 1 keeps it constant.
  double final_lr_fraction = 1.0;
  bool dropout = true;
  /// Per-sample augmentation redrawn every epoch; nullopt trains on the
  /// images as given.
  std::optional<AugmentConfig> augment;
  std::uint64_t seed = 1;
  bool shuffle = true;
  /// Stops after the epoch during which this much wall time has elapsed.
  /// Zero means no limit.
  double time_budget_seconds = 0.0;
  std::function<void(const EpochStats&)> on_epoch;

  /// Throws std::invalid_argument for zero batch size or negative rates.
  void check() const;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  double seconds = 0.0;
};

struct LabeledImage {
  Image image;
  std::string text;
};

class TrainingDataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Minimizes mean CTC loss. Every label must validate against the plate
/// grammar, use only alphabet symbols and fit in the model's frames; the
/// first offending label is reported by index before any step is taken.
/// Parameters are kept float32-representable after every update.
TrainResult train_recognizer(RecognizerModel& model, const Alphabet& alphabet,
                             const std::vector<LabeledImage>& train,
                             const std::vector<LabeledImage>* heldout,
                             const TrainConfig& config);

/// Reconstructs the two-channel input through the encoder and `decoder`
/// under mean squared error. Only encoder and decoder tensors change.
TrainResult pretrain_autoencoder(RecognizerModel& model, AutoencoderDecoder& decoder,
                                 const std::vector<Image>& images,
                                 const TrainConfig& config);

/// Mean squared reconstruction error of the autoencoder in inference mode.
double reconstruction_error(RecognizerModel& model, AutoencoderDecoder& decoder,
                            const std::vector<Image>& images);

/// Copies every encoder tensor (stem through reduce block) from `from`.
void transfer_encoder(RecognizerModel& from, RecognizerModel& to);

struct CornerSample {
  Image image;
  Quad corners;  // pixel coordinates in `image`
};

/// Corners as 8 values: x / (width - 1), y / (height - 1), TL TR BR BL.
std::array<double, 8> normalize_corners(const Quad& q, std::size_t width, std::size_t height);
Quad denormalize_corners(const std::array<double, 8>& v, std::size_t width, std::size_t height);

/// Minimizes mean squared corner error in normalized coordinates. Images
/// are resized to the model input, so corners are rescaled accordingly.
TrainResult train_corner_model(CornerModel& model, const std::vector<CornerSample>& samples,
                               const TrainConfig& config);

/// Mean Euclidean corner error in pixels of the 128-pixel-wide model input.
double mean_corner_error(CornerModel& model, const std::vector<CornerSample>& samples);

/// Plate-exact accuracy of greedy decoding.
double recognizer_accuracy(RecognizerModel& model, const Alphabet& alphabet,
                           const std::vector<LabeledImage>& data);

}  // namespace lpr
