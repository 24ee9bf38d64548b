#pragma once

// Forward and backward kernels for every primitive layer of the recognizer.
//
// Image tensors are (W, H, C) for one sample or (N, W, H, C) for a batch;
// kernels accept either and return the same rank they were given. Backward
// kernels accumulate (+=) into the gradient tensors they are handed.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "lpr/tensor.hpp"

namespace lpr {

enum class Mode { Train, Infer };

struct Stride {
  std::size_t w = 1;
  std::size_t h = 1;
};

struct Padding {
  bool same = true;
  std::size_t w = 0;
  std::size_t h = 0;

  static Padding Same() { return {}; }
  static Padding Pixels(std::size_t w, std::size_t h) { return {false, w, h}; }
};

/// Dense 2-D convolution. Weights are (out_ch, in_ch, kw, kh) where kw runs
/// along the width axis. An empty bias tensor means the layer has no bias;
/// the same holds for depthwise and dense layers.
struct ConvParams {
  Tensor weight;
  Tensor bias;
  Stride stride;
  Padding padding;

  static ConvParams zeros(std::size_t in_ch, std::size_t out_ch, std::size_t kw,
                          std::size_t kh, Stride stride = {},
                          Padding padding = Padding::Same(),
                          bool with_bias = true);

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel_w() const { return weight.dim(2); }
  std::size_t kernel_h() const { return weight.dim(3); }
  std::size_t param_count() const { return weight.size() + bias.size(); }
};

/// Per-channel spatial convolution (depth multiplier 1). Weights are
/// (channels, kw, kh).
struct DepthwiseParams {
  Tensor weight;
  Tensor bias;
  Stride stride;
  Padding padding;

  static DepthwiseParams zeros(std::size_t channels, std::size_t kw,
                               std::size_t kh, Stride stride = {},
                               Padding padding = Padding::Same(),
                               bool with_bias = true);

  std::size_t channels() const { return weight.dim(0); }
  std::size_t param_count() const { return weight.size() + bias.size(); }
};

struct BNParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double epsilon = 1e-5;
  double momentum = 0.9;

  /// gamma = 1, beta = 0, running stats (0, 1).
  static BNParams identity(std::size_t channels);

  std::size_t channels() const { return gamma.size(); }
  /// Trainable scalars only (gamma and beta).
  std::size_t param_count() const { return gamma.size() + beta.size(); }
};

/// One LSTM direction. Gates are stacked row-wise in the order
/// input, forget, cell, output: weight is (4H, F + H) acting on [x_t; h_{t-1}].
struct LstmDirection {
  Tensor weight;
  Tensor bias;
};

struct LstmParams {
  LstmDirection forward;
  LstmDirection backward;
  std::size_t hidden_size = 0;

  static LstmParams zeros(std::size_t input_dim, std::size_t hidden_size);

  std::size_t input_dim() const { return forward.weight.dim(1) - hidden_size; }
  std::size_t param_count() const {
    return forward.weight.size() + forward.bias.size() +
           backward.weight.size() + backward.bias.size();
  }
};

/// Affine map over the last axis. Weights are (out_dim, in_dim).
struct DenseParams {
  Tensor weight;
  Tensor bias;

  static DenseParams zeros(std::size_t in_dim, std::size_t out_dim,
                           bool with_bias = true);

  std::size_t param_count() const { return weight.size() + bias.size(); }
};

/// Output extent of a strided window along one axis.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t pad,
                            std::size_t stride);

// --- convolution ----------------------------------------------------------

Tensor conv2d(const Tensor& x, const ConvParams& p);
void conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& dy,
                     Tensor* dx, Tensor* dweight, Tensor* dbias);

Tensor depthwise_conv2d(const Tensor& x, const DepthwiseParams& p);
void depthwise_conv2d_backward(const Tensor& x, const DepthwiseParams& p,
                               const Tensor& dy, Tensor* dx, Tensor* dweight,
                               Tensor* dbias);

/// pointwise(depthwise(x)); the pointwise kernel must be 1x1. Separable
/// layers built by separable_params() carry a single bias, on the pointwise
/// stage.
Tensor separable_conv2d(const Tensor& x, const DepthwiseParams& dw,
                        const ConvParams& pw);

struct SeparableParams {
  DepthwiseParams depthwise;
  ConvParams pointwise;
  std::size_t param_count() const {
    return depthwise.param_count() + pointwise.param_count();
  }
};
SeparableParams separable_params(std::size_t in_ch, std::size_t out_ch,
                                 std::size_t k, Stride stride = {},
                                 bool with_bias = true);

// --- normalization and activations ----------------------------------------

struct BatchNormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
  Tensor normalized;  // x-hat
};

/// Normalizes over every axis except the last. Train mode uses batch
/// statistics and moves the running statistics toward them by momentum.
Tensor batchnorm(const Tensor& x, BNParams& p, Mode mode,
                 BatchNormCache* cache = nullptr);
void batchnorm_backward(const BNParams& p, Mode mode,
                        const BatchNormCache& cache, const Tensor& dy,
                        Tensor* dx, Tensor* dgamma, Tensor* dbeta);

Tensor leaky_relu(const Tensor& x, double alpha);
void leaky_relu_backward(const Tensor& x, double alpha, const Tensor& dy,
                         Tensor* dx);

/// Returns the mask (already scaled by 1/(1-ratio)) through `mask` when
/// given; infer mode and ratio 0 return the input unchanged.
Tensor dropout(const Tensor& x, double ratio, std::mt19937_64& rng, Mode mode,
               Tensor* mask = nullptr);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

// --- pooling and reshaping ------------------------------------------------

/// Max over k x k windows; padded cells never win.
Tensor maxpool2d(const Tensor& x, std::size_t k, std::size_t stride,
                 std::size_t pad = 0);
void maxpool2d_backward(const Tensor& x, std::size_t k, std::size_t stride,
                        std::size_t pad, const Tensor& dy, Tensor* dx);

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
std::vector<std::size_t> inverse_permutation(
    const std::vector<std::size_t>& axes);

/// Joins along the last axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Mean over `axis`, which is removed from the shape.
Tensor global_avg_pool_axis(const Tensor& x, std::size_t axis);

/// Nearest-neighbour 2x upsampling of both spatial axes.
Tensor upsample2x(const Tensor& x);

// --- sequence and dense layers --------------------------------------------

struct LstmCache {
  // Per direction, per step: gate activations (N x 4H), cell (N x H),
  // hidden (N x H). Stored flat, step-major.
  std::vector<double> gates[2];
  std::vector<double> cells[2];
  std::vector<double> hidden[2];
};

/// (T, F) or (N, T, F) -> (..., T, 2H): forward and backward hidden states
/// concatenated per step.
Tensor bilstm(const Tensor& x, const LstmParams& p, LstmCache* cache = nullptr);
void bilstm_backward(const Tensor& x, const LstmParams& p,
                     const LstmCache& cache, const Tensor& dy, Tensor* dx,
                     LstmParams* grads);

Tensor dense(const Tensor& x, const DenseParams& p);
void dense_backward(const Tensor& x, const DenseParams& p, const Tensor& dy,
                    Tensor* dx, Tensor* dweight, Tensor* dbias);

}  // namespace lpr
