#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lpr/blocks.hpp"

namespace lpr {

/// Per-sample (batch axis dropped) output shape of each layer.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

inline constexpr std::size_t kPlateWidth = 128;
inline constexpr std::size_t kPlateHeight = 32;
inline constexpr std::size_t kInputChannels = 2;
inline constexpr std::size_t kSequenceLength = 32;

struct RecognizerConfig {
  std::size_t num_classes = 38;
  /// Channel multiplier on the 32 / 64 / 128 widths and the 64-unit LSTM.
  /// 1.0 is the full network.
  double width = 1.0;
  double dropout = 0.4;
  std::uint64_t seed = 1;

  std::size_t stem_channels() const;   // 32 at width 1
  std::size_t block_channels() const;  // 64 at width 1
  std::size_t lstm_hidden() const;     // 64 at width 1
};

/// The segmentation-free recognizer: 128x32x2 plate image in, 32 frames of
/// class log-probabilities out.
///
///   Conv+BN+LReLU (s2) -> Conv+BN+LReLU -> 2x Xception -> 2x Inception-B
///   -> Xception reduce -> 2x Xception -> 2x Inception-B -> 2x Xception
///   -> Permute -> GlobalAvgPool over height -> Dropout -> BiLSTM + Dense
///   -> BatchNorm -> (log-)Softmax
class RecognizerModel {
 public:
  RecognizerModel() = default;
  explicit RecognizerModel(RecognizerConfig config);

  const RecognizerConfig& config() const { return config_; }
  /// Dropout ratio used in train mode; 0 disables it.
  void set_dropout(double ratio) { config_.dropout = ratio; }

  /// `x` is (128, 32, 2) or (N, 128, 32, 2) with values in [0, 1]. Returns
  /// (32, C) or (N, 32, C) log-probabilities. `rng` drives dropout and is
  /// only required in train mode.
  Var forward(Tape& tape, Var x, Mode mode, std::mt19937_64* rng = nullptr,
              ShapeTrace* trace = nullptr);

  /// Everything up to and including the reduce block; the autoencoder's
  /// encoder.
  Var encode(Tape& tape, Var x, Mode mode, ShapeTrace* trace = nullptr);

  /// Inference convenience: (32, C) log-probabilities for one image.
  Tensor log_probs(const Tensor& image);
  /// Inference on a batch (N, 128, 32, 2) -> (N, 32, C).
  Tensor log_probs_batch(const Tensor& images);

  TensorList tensors();
  std::size_t param_count() const;
  /// Parameters of the same network with every separable convolution
  /// replaced by a dense convolution of the same kernel size.
  std::size_t dense_equivalent_param_count() const;

 private:
  RecognizerConfig config_;
  ConvUnit stem1_;
  ConvUnit stem2_;
  std::array<XceptionBlock, 2> xception_a_;
  std::array<InceptionBBlock, 2> inception_a_;
  XceptionReduceBlock reduce_;
  std::array<XceptionBlock, 2> xception_b_;
  std::array<InceptionBBlock, 2> inception_b_;
  std::array<XceptionBlock, 2> xception_c_;
  LstmParams lstm_;
  DenseParams head_;
  BNParams head_bn_;
};

/// Regresses the four plate corners (TL, TR, BR, BL) as 8 values in [0, 1],
/// normalized by image width and height.
class CornerModel {
 public:
  CornerModel() = default;
  explicit CornerModel(std::uint64_t seed);

  /// (128, 32, 2) or (N, 128, 32, 2) -> (8) or (N, 8).
  Var forward(Tape& tape, Var x, Mode mode);
  std::array<double, 8> predict(const Tensor& image);

  TensorList tensors();
  std::size_t param_count() const;

 private:
  std::array<ConvUnit, 4> stages_;
  DenseParams head_;
};

/// Mirror of the recognizer's encoder used for unsupervised pretraining:
/// upsample -> conv -> upsample -> conv -> conv -> sigmoid.
class AutoencoderDecoder {
 public:
  AutoencoderDecoder() = default;
  AutoencoderDecoder(const RecognizerConfig& config, std::uint64_t seed);

  Var forward(Tape& tape, Var code, Mode mode);
  TensorList tensors();

 private:
  ConvUnit up1_;
  ConvUnit up2_;
  ConvParams out_;
};

/// Sum of trainable scalars in a tensor list.
std::size_t param_count(const TensorList& tensors);

}  // namespace lpr
