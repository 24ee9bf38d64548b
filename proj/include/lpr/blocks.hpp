#pragma once

#include <random>
#include <string>
#include <vector>

#include "lpr/autograd.hpp"

namespace lpr {

/// Slope of every LeakyReLU in the network.
inline constexpr double kLeakyAlpha = 0.1;

/// A model tensor addressable by name. Running statistics are persisted but
/// not trained.
struct NamedTensor {
  std::string name;
  Tensor* tensor = nullptr;
  bool trainable = true;
};

using TensorList = std::vector<NamedTensor>;

void collect(TensorList& out, const std::string& prefix, ConvParams& p);
void collect(TensorList& out, const std::string& prefix, DepthwiseParams& p);
void collect(TensorList& out, const std::string& prefix, BNParams& p);
void collect(TensorList& out, const std::string& prefix, LstmParams& p);
void collect(TensorList& out, const std::string& prefix, DenseParams& p);

// He-uniform weights and zero biases; every value is float32-representable
// so freshly initialized models survive a checkpoint roundtrip bit-exactly.
void init(ConvParams& p, std::mt19937_64& rng);
void init(DepthwiseParams& p, std::mt19937_64& rng);
void init(LstmParams& p, std::mt19937_64& rng);
void init(DenseParams& p, std::mt19937_64& rng);

/// Conv + BN + LeakyReLU.
struct ConvUnit {
  ConvParams conv;
  BNParams bn;

  static ConvUnit make(std::size_t in_ch, std::size_t out_ch, std::size_t kw,
                       std::size_t kh, Stride stride = {});
  Var forward(Tape& tape, Var x, Mode mode);
  void init(std::mt19937_64& rng) { lpr::init(conv, rng); }
  void collect(TensorList& out, const std::string& prefix);
  std::size_t param_count() const { return conv.param_count() + bn.param_count(); }
};

/// Shape-preserving residual block:
///   x + BN(sep(LReLU(BN(sep(LReLU(x))))))
struct XceptionBlock {
  DepthwiseParams dw1;
  ConvParams pw1;
  BNParams bn1;
  DepthwiseParams dw2;
  ConvParams pw2;
  BNParams bn2;

  static XceptionBlock make(std::size_t channels);
  Var forward(Tape& tape, Var x, Mode mode);
  void init(std::mt19937_64& rng);
  void collect(TensorList& out, const std::string& prefix);
  std::size_t channels() const { return dw1.channels(); }
  std::size_t param_count() const;
  /// The same block with each separable pair replaced by a dense 3x3 conv.
  std::size_t dense_equivalent_param_count() const;
};

/// Shape-preserving residual block with a factorized 1x7 / 7x1 branch:
///   x + scale * proj(concat(A(x), B3(B2(B1(x)))))
/// where every branch stage is Conv + BN + LeakyReLU at half the channels.
struct InceptionBBlock {
  ConvUnit branch_a;   // 1x1
  ConvUnit branch_b1;  // 1x1
  ConvUnit branch_b2;  // 1x7 (along height)
  ConvUnit branch_b3;  // 7x1 (along width)
  ConvParams project;  // 1x1 back to the input width
  double residual_scale = 0.2;

  static InceptionBBlock make(std::size_t channels);
  Var forward(Tape& tape, Var x, Mode mode);
  void init(std::mt19937_64& rng);
  void collect(TensorList& out, const std::string& prefix);
  std::size_t channels() const { return project.out_channels(); }
  std::size_t param_count() const;
};

/// Halves both spatial axes and doubles the channels:
///   concat(BN(sep_stride2(LReLU(x))), maxpool3x3_stride2(x)) + conv1x1_stride2(x)
struct XceptionReduceBlock {
  DepthwiseParams dw;
  ConvParams pw;
  BNParams bn;
  ConvParams skip;

  static XceptionReduceBlock make(std::size_t channels);
  Var forward(Tape& tape, Var x, Mode mode);
  void init(std::mt19937_64& rng);
  void collect(TensorList& out, const std::string& prefix);
  std::size_t channels() const { return dw.channels(); }
  std::size_t param_count() const;
  std::size_t dense_equivalent_param_count() const;
};

}  // namespace lpr
