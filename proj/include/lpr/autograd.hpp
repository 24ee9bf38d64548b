#pragma once

// Define-by-run reverse-mode differentiation. A Tape records one forward
// pass; backward() walks it in reverse. Layer parameters live outside the
// tape (in the model) and receive their gradients directly in their own
// grad buffers, so a tape can be discarded after every step.
//
// A tape belongs to a single thread.

#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "lpr/ops.hpp"
#include "lpr/tensor.hpp"

namespace lpr {

class BackpropError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  /// Receives the node's own value and its accumulated gradient.
  using Backward = std::function<void(Tape&, const Tensor& grad)>;

  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  /// Leaf node; its gradient is readable after backward().
  Var input(Tensor value);
  /// Interior node. `backward` is dropped when the tape is not recording.
  Var emit(Tensor value, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() loss with respect to `v`.
  const Tensor& grad(Var v) const;

  /// Adds `g` into the gradient of `v`.
  void accumulate(Var v, const Tensor& g);
  /// Mutable gradient buffer of `v`, allocated as zeros on first use.
  Tensor& grad_buffer(Var v);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  /// Throws BackpropError if nothing was recorded or loss is not a scalar.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

/// Differentiable versions of the primitive kernels. Parameter gradients are
/// accumulated into the parameter tensors' grad buffers during backward().
namespace ag {

Var conv2d(Tape& tape, Var x, ConvParams& p);
Var depthwise_conv2d(Tape& tape, Var x, DepthwiseParams& p);
Var separable_conv2d(Tape& tape, Var x, DepthwiseParams& dw, ConvParams& pw);
Var batchnorm(Tape& tape, Var x, BNParams& p, Mode mode);
Var leaky_relu(Tape& tape, Var x, double alpha);
Var sigmoid(Tape& tape, Var x);
Var maxpool2d(Tape& tape, Var x, std::size_t k, std::size_t stride,
              std::size_t pad = 0);
Var permute(Tape& tape, Var x, std::vector<std::size_t> axes);
Var concat_channels(Tape& tape, Var a, Var b);
Var global_avg_pool_axis(Tape& tape, Var x, std::size_t axis);
Var upsample2x(Tape& tape, Var x);
Var reshape(Tape& tape, Var x, Shape shape);
Var dropout(Tape& tape, Var x, double ratio, std::mt19937_64& rng, Mode mode);
Var softmax_rows(Tape& tape, Var x);
Var log_softmax_rows(Tape& tape, Var x);
Var bilstm(Tape& tape, Var x, LstmParams& p);
Var dense(Tape& tape, Var x, DenseParams& p);

Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, double factor);
Var sum(Tape& tape, Var x);
/// sum(x * weights) for a constant weight tensor of the same shape.
Var weighted_sum(Tape& tape, Var x, const Tensor& weights);
Var mse(Tape& tape, Var prediction, const Tensor& target);

}  // namespace ag

}  // namespace lpr
