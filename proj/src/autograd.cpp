#include "lpr/autograd.hpp"

#include <cmath>
#include <memory>

namespace lpr {

Var Tape::input(Tensor value) {
  nodes_.push_back({std::move(value), Tensor(), nullptr});
  return {nodes_.size() - 1};
}

Var Tape::emit(Tensor value, Backward backward) {
  nodes_.push_back(
      {std::move(value), Tensor(), record_ ? std::move(backward) : nullptr});
  return {nodes_.size() - 1};
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.shape() != n.value.shape()) {
    throw BackpropError("no gradient reached node " + std::to_string(v.id));
  }
  return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Tensor& buf = grad_buffer(v);
  if (g.size() != buf.size()) {
    throw ShapeError("gradient " + to_string(g.shape()) + " for node of shape " +
                     to_string(buf.shape()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
  if (!record_) throw BackpropError("backward on a tape that does not record");
  if (nodes_.empty() || loss.id >= nodes_.size()) {
    throw BackpropError("backward before any forward pass was recorded");
  }
  if (nodes_[loss.id].value.size() != 1) {
    throw BackpropError("backward needs a scalar loss, got " +
                        to_string(nodes_[loss.id].value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.shape() != n.value.shape()) continue;
    // Callbacks only touch earlier nodes, so `n` stays valid.
    n.backward(*this, n.grad);
  }
}

namespace ag {

namespace {
// Wraps a parameter's grad span as a Tensor view target for kernels that
// accumulate into Tensor*. Copies in and out.
struct GradSink {
  explicit GradSink(Tensor& param) : param_(param), buf(param.shape()) {}
  ~GradSink() {
    auto g = param_.grad();
    for (std::size_t i = 0; i < buf.size(); ++i) g[i] += buf[i];
  }
  GradSink(const GradSink&) = delete;
  GradSink& operator=(const GradSink&) = delete;

  Tensor& param_;
  Tensor buf;
};
}  // namespace

Var conv2d(Tape& tape, Var x, ConvParams& p) {
  Tensor y = lpr::conv2d(tape.value(x), p);
  return tape.emit(std::move(y), [x, &p](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    GradSink dw(p.weight), db(p.bias);
    conv2d_backward(t.value(x), p, g, &dx, &dw.buf, &db.buf);
  });
}

Var depthwise_conv2d(Tape& tape, Var x, DepthwiseParams& p) {
  Tensor y = lpr::depthwise_conv2d(tape.value(x), p);
  return tape.emit(std::move(y), [x, &p](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    GradSink dw(p.weight), db(p.bias);
    depthwise_conv2d_backward(t.value(x), p, g, &dx, &dw.buf, &db.buf);
  });
}

Var separable_conv2d(Tape& tape, Var x, DepthwiseParams& dw, ConvParams& pw) {
  if (pw.weight.rank() != 4 || pw.kernel_w() != 1 || pw.kernel_h() != 1) {
    throw ShapeError("separable_conv2d: pointwise kernel must be 1x1, got " +
                     to_string(pw.weight.shape()));
  }
  return conv2d(tape, depthwise_conv2d(tape, x, dw), pw);
}

Var batchnorm(Tape& tape, Var x, BNParams& p, Mode mode) {
  auto cache = std::make_shared<BatchNormCache>();
  Tensor y = lpr::batchnorm(tape.value(x), p, mode,
                            tape.recording() ? cache.get() : nullptr);
  return tape.emit(std::move(y), [x, &p, mode, cache](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    GradSink dgamma(p.gamma), dbeta(p.beta);
    batchnorm_backward(p, mode, *cache, g, &dx, &dgamma.buf, &dbeta.buf);
  });
}

Var leaky_relu(Tape& tape, Var x, double alpha) {
  Tensor y = lpr::leaky_relu(tape.value(x), alpha);
  return tape.emit(std::move(y), [x, alpha](Tape& t, const Tensor& g) {
    leaky_relu_backward(t.value(x), alpha, g, &t.grad_buffer(x));
  });
}

Var sigmoid(Tape& tape, Var x) {
  const Tensor& in = tape.value(x);
  Tensor y(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-in[i]));
  const std::size_t id = tape.size();
  return tape.emit(std::move(y), [x, id](Tape& t, const Tensor& g) {
    const Tensor& s = t.value(Var{id});
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < s.size(); ++i) dx[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

Var maxpool2d(Tape& tape, Var x, std::size_t k, std::size_t stride,
              std::size_t pad) {
  Tensor y = lpr::maxpool2d(tape.value(x), k, stride, pad);
  return tape.emit(std::move(y), [x, k, stride, pad](Tape& t, const Tensor& g) {
    maxpool2d_backward(t.value(x), k, stride, pad, g, &t.grad_buffer(x));
  });
}

Var permute(Tape& tape, Var x, std::vector<std::size_t> axes) {
  Tensor y = lpr::permute(tape.value(x), axes);
  return tape.emit(std::move(y), [x, axes](Tape& t, const Tensor& g) {
    t.accumulate(x, lpr::permute(g, inverse_permutation(axes)));
  });
}

Var concat_channels(Tape& tape, Var a, Var b) {
  Tensor y = lpr::concat_channels(tape.value(a), tape.value(b));
  const std::size_t ca = tape.value(a).shape().back();
  const std::size_t cb = tape.value(b).shape().back();
  return tape.emit(std::move(y), [a, b, ca, cb](Tape& t, const Tensor& g) {
    Tensor& da = t.grad_buffer(a);
    Tensor& db = t.grad_buffer(b);
    const std::size_t rows = g.size() / (ca + cb);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < ca; ++k) da[r * ca + k] += g[r * (ca + cb) + k];
      for (std::size_t k = 0; k < cb; ++k) db[r * cb + k] += g[r * (ca + cb) + ca + k];
    }
  });
}

Var global_avg_pool_axis(Tape& tape, Var x, std::size_t axis) {
  Tensor y = lpr::global_avg_pool_axis(tape.value(x), axis);
  return tape.emit(std::move(y), [x, axis](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(x);
    Tensor& dx = t.grad_buffer(x);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= in.dim(i);
    for (std::size_t i = axis + 1; i < in.rank(); ++i) inner *= in.dim(i);
    const std::size_t len = in.dim(axis);
    const double w = 1.0 / static_cast<double>(len);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < len; ++k)
        for (std::size_t i = 0; i < inner; ++i)
          dx[(o * len + k) * inner + i] += w * g[o * inner + i];
  });
}

Var upsample2x(Tape& tape, Var x) {
  Tensor y = lpr::upsample2x(tape.value(x));
  return tape.emit(std::move(y), [x](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(x);
    Tensor& dx = t.grad_buffer(x);
    const bool batched = in.rank() == 4;
    const std::size_t n = batched ? in.dim(0) : 1;
    const std::size_t w = in.dim(batched ? 1 : 0), h = in.dim(batched ? 2 : 1),
                      c = in.shape().back();
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ox = 0; ox < 2 * w; ++ox)
        for (std::size_t oy = 0; oy < 2 * h; ++oy)
          for (std::size_t ch = 0; ch < c; ++ch)
            dx[((s * w + ox / 2) * h + oy / 2) * c + ch] +=
                g[((s * 2 * w + ox) * 2 * h + oy) * c + ch];
  });
}

Var reshape(Tape& tape, Var x, Shape shape) {
  Tensor y = tape.value(x).reshaped(std::move(shape));
  return tape.emit(std::move(y), [x](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

Var dropout(Tape& tape, Var x, double ratio, std::mt19937_64& rng, Mode mode) {
  auto mask = std::make_shared<Tensor>();
  Tensor y = lpr::dropout(tape.value(x), ratio, rng, mode, mask.get());
  return tape.emit(std::move(y), [x, mask](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*mask)[i];
  });
}

Var softmax_rows(Tape& tape, Var x) {
  Tensor y = lpr::softmax_rows(tape.value(x));
  const std::size_t id = tape.size();
  return tape.emit(std::move(y), [x, id](Tape& t, const Tensor& g) {
    const Tensor& s = t.value(Var{id});
    Tensor& dx = t.grad_buffer(x);
    const std::size_t c = s.shape().back();
    for (std::size_t r = 0; r < s.size() / c; ++r) {
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += g[r * c + k] * s[r * c + k];
      for (std::size_t k = 0; k < c; ++k)
        dx[r * c + k] += s[r * c + k] * (g[r * c + k] - dot);
    }
  });
}

Var log_softmax_rows(Tape& tape, Var x) {
  Tensor y = lpr::log_softmax_rows(tape.value(x));
  const std::size_t id = tape.size();
  return tape.emit(std::move(y), [x, id](Tape& t, const Tensor& g) {
    const Tensor& ls = t.value(Var{id});
    Tensor& dx = t.grad_buffer(x);
    const std::size_t c = ls.shape().back();
    for (std::size_t r = 0; r < ls.size() / c; ++r) {
      double gsum = 0.0;
      for (std::size_t k = 0; k < c; ++k) gsum += g[r * c + k];
      for (std::size_t k = 0; k < c; ++k)
        dx[r * c + k] += g[r * c + k] - std::exp(ls[r * c + k]) * gsum;
    }
  });
}

Var bilstm(Tape& tape, Var x, LstmParams& p) {
  auto cache = std::make_shared<LstmCache>();
  Tensor y = lpr::bilstm(tape.value(x), p,
                         tape.recording() ? cache.get() : nullptr);
  return tape.emit(std::move(y), [x, &p, cache](Tape& t, const Tensor& g) {
    LstmParams grads = LstmParams::zeros(p.input_dim(), p.hidden_size);
    bilstm_backward(t.value(x), p, *cache, g, &t.grad_buffer(x), &grads);
    auto add_into = [](Tensor& param, const Tensor& d) {
      auto pg = param.grad();
      for (std::size_t i = 0; i < d.size(); ++i) pg[i] += d[i];
    };
    add_into(p.forward.weight, grads.forward.weight);
    add_into(p.forward.bias, grads.forward.bias);
    add_into(p.backward.weight, grads.backward.weight);
    add_into(p.backward.bias, grads.backward.bias);
  });
}

Var dense(Tape& tape, Var x, DenseParams& p) {
  Tensor y = lpr::dense(tape.value(x), p);
  return tape.emit(std::move(y), [x, &p](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    GradSink dw(p.weight), db(p.bias);
    dense_backward(t.value(x), p, g, &dx, &dw.buf, &db.buf);
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& va = tape.value(a);
  const Tensor& vb = tape.value(b);
  if (va.shape() != vb.shape()) {
    throw ShapeError("add: " + to_string(va.shape()) + " vs " +
                     to_string(vb.shape()));
  }
  Tensor y(va.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = va[i] + vb[i];
  return tape.emit(std::move(y), [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var scale(Tape& tape, Var x, double factor) {
  const Tensor& in = tape.value(x);
  Tensor y(in.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = factor * in[i];
  return tape.emit(std::move(y), [x, factor](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += factor * g[i];
  });
}

Var sum(Tape& tape, Var x) {
  double s = 0.0;
  for (double v : tape.value(x).data()) s += v;
  return tape.emit(Tensor({1}, s), [x](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
  });
}

Var weighted_sum(Tape& tape, Var x, const Tensor& weights) {
  const Tensor& in = tape.value(x);
  if (in.size() != weights.size()) {
    throw ShapeError("weighted_sum: " + to_string(in.shape()) + " vs " +
                     to_string(weights.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * weights[i];
  return tape.emit(Tensor({1}, s), [x, weights](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0] * weights[i];
  });
}

Var mse(Tape& tape, Var prediction, const Tensor& target) {
  const Tensor& p = tape.value(prediction);
  if (p.shape() != target.shape()) {
    throw ShapeError("mse: prediction " + to_string(p.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - target[i];
    s += d * d;
  }
  const double inv_n = 1.0 / static_cast<double>(p.size());
  return tape.emit(Tensor({1}, s * inv_n),
                   [prediction, target, inv_n](Tape& t, const Tensor& g) {
                     const Tensor& pv = t.value(prediction);
                     Tensor& dx = t.grad_buffer(prediction);
                     for (std::size_t i = 0; i < pv.size(); ++i)
                       dx[i] += 2.0 * inv_n * g[0] * (pv[i] - target[i]);
                   });
}

}  // namespace ag
}  // namespace lpr
