#include "lpr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lpr {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ImageDims {
  std::size_t n = 1, w = 0, h = 0, c = 0;
  bool batched = false;

  std::size_t plane() const { return w * h * c; }
  Shape shape_like(std::size_t ow, std::size_t oh, std::size_t oc) const {
    return batched ? Shape{n, ow, oh, oc} : Shape{ow, oh, oc};
  }
};

ImageDims image_dims(const Tensor& x, const char* what) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
  throw ShapeError(std::string(what) + ": expected (W, H, C) or (N, W, H, C), got " +
                   to_string(x.shape()));
}

struct Geometry {
  std::size_t kw, kh, pw, ph, sw, sh, ow, oh;
};

std::size_t resolve_pad(const Padding& pad, bool width, std::size_t k,
                        const char* what) {
  if (!pad.same) return width ? pad.w : pad.h;
  if (k % 2 == 0) {
    throw ShapeError(std::string(what) +
                     ": \"same\" padding needs odd kernel sizes, got " +
                     std::to_string(k));
  }
  return k / 2;
}

Geometry geometry(const ImageDims& d, std::size_t kw, std::size_t kh,
                  const Stride& s, const Padding& pad, const char* what) {
  if (s.w == 0 || s.h == 0) {
    throw ShapeError(std::string(what) + ": stride must be positive");
  }
  Geometry g{kw, kh, resolve_pad(pad, true, kw, what),
             resolve_pad(pad, false, kh, what), s.w, s.h, 0, 0};
  if (d.w + 2 * g.pw < kw || d.h + 2 * g.ph < kh) {
    throw ShapeError(std::string(what) + ": kernel " + std::to_string(kw) +
                     "x" + std::to_string(kh) + " larger than padded input " +
                     to_string(Shape{d.w, d.h}));
  }
  g.ow = conv_out_extent(d.w, kw, g.pw, s.w);
  g.oh = conv_out_extent(d.h, kh, g.ph, s.h);
  return g;
}

// Patch matrix (OW*OH) x (kw*kh*C) for one sample.
void im2col(const double* x, const ImageDims& d, const Geometry& g,
            double* col) {
  const std::size_t k_cols = g.kw * g.kh * d.c;
  for (std::size_t ox = 0; ox < g.ow; ++ox) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      double* row = col + (ox * g.oh + oy) * k_cols;
      for (std::size_t i = 0; i < g.kw; ++i) {
        const long ix = static_cast<long>(ox * g.sw + i) - static_cast<long>(g.pw);
        for (std::size_t j = 0; j < g.kh; ++j) {
          const long iy = static_cast<long>(oy * g.sh + j) - static_cast<long>(g.ph);
          double* dst = row + (i * g.kh + j) * d.c;
          if (ix < 0 || iy < 0 || ix >= static_cast<long>(d.w) ||
              iy >= static_cast<long>(d.h)) {
            std::fill(dst, dst + d.c, 0.0);
          } else {
            const double* src = x + (ix * d.h + iy) * d.c;
            std::copy(src, src + d.c, dst);
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ImageDims& d, const Geometry& g,
                double* dx) {
  const std::size_t k_cols = g.kw * g.kh * d.c;
  for (std::size_t ox = 0; ox < g.ow; ++ox) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      const double* row = col + (ox * g.oh + oy) * k_cols;
      for (std::size_t i = 0; i < g.kw; ++i) {
        const long ix = static_cast<long>(ox * g.sw + i) - static_cast<long>(g.pw);
        if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
        for (std::size_t j = 0; j < g.kh; ++j) {
          const long iy = static_cast<long>(oy * g.sh + j) - static_cast<long>(g.ph);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          const double* src = row + (i * g.kh + j) * d.c;
          double* dst = dx + (ix * d.h + iy) * d.c;
          for (std::size_t c = 0; c < d.c; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// (out, in, kw, kh) -> (kw*kh*in) x out
RowMat weight_matrix(const Tensor& w) {
  const std::size_t out = w.dim(0), in = w.dim(1), kw = w.dim(2), kh = w.dim(3);
  RowMat m(kw * kh * in, out);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t c = 0; c < in; ++c)
      for (std::size_t i = 0; i < kw; ++i)
        for (std::size_t j = 0; j < kh; ++j)
          m((i * kh + j) * in + c, o) = w[((o * in + c) * kw + i) * kh + j];
  return m;
}

void check_conv(const ImageDims& d, const ConvParams& p) {
  if (p.weight.rank() != 4) {
    throw ShapeError("conv2d: weight must be (out, in, kw, kh), got " +
                     to_string(p.weight.shape()));
  }
  if (d.c != p.in_channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(d.c) +
                     " channels, weight expects " +
                     std::to_string(p.in_channels()));
  }
  if (!p.bias.empty() && p.bias.size() != p.out_channels()) {
    throw ShapeError("conv2d: bias " + to_string(p.bias.shape()) +
                     " does not match " + std::to_string(p.out_channels()) +
                     " filters");
  }
}

bool is_pointwise(const Geometry& g) {
  return g.kw == 1 && g.kh == 1 && g.sw == 1 && g.sh == 1 && g.pw == 0 &&
         g.ph == 0;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t pad,
                            std::size_t stride) {
  return (in + 2 * pad - k) / stride + 1;
}

ConvParams ConvParams::zeros(std::size_t in_ch, std::size_t out_ch,
                             std::size_t kw, std::size_t kh, Stride stride,
                             Padding padding, bool with_bias) {
  if (out_ch == 0 || in_ch == 0) throw ShapeError("conv: channel counts must be >= 1");
  return {Tensor({out_ch, in_ch, kw, kh}), Tensor({with_bias ? out_ch : 0}),
          stride, padding};
}

DepthwiseParams DepthwiseParams::zeros(std::size_t channels, std::size_t kw,
                                       std::size_t kh, Stride stride,
                                       Padding padding, bool with_bias) {
  return {Tensor({channels, kw, kh}), Tensor({with_bias ? channels : 0}),
          stride, padding};
}

BNParams BNParams::identity(std::size_t channels) {
  return {Tensor({channels}, 1.0), Tensor({channels}), Tensor({channels}),
          Tensor({channels}, 1.0)};
}

LstmParams LstmParams::zeros(std::size_t input_dim, std::size_t hidden_size) {
  LstmParams p;
  p.hidden_size = hidden_size;
  for (LstmDirection* d : {&p.forward, &p.backward}) {
    d->weight = Tensor({4 * hidden_size, input_dim + hidden_size});
    d->bias = Tensor({4 * hidden_size});
  }
  return p;
}

DenseParams DenseParams::zeros(std::size_t in_dim, std::size_t out_dim,
                               bool with_bias) {
  if (in_dim == 0 || out_dim == 0) throw ShapeError("dense: dims must be >= 1");
  return {Tensor({out_dim, in_dim}), Tensor({with_bias ? out_dim : 0})};
}

// --- convolution ----------------------------------------------------------

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  const ImageDims d = image_dims(x, "conv2d");
  check_conv(d, p);
  const Geometry g = geometry(d, p.kernel_w(), p.kernel_h(), p.stride,
                              p.padding, "conv2d");
  const std::size_t cout = p.out_channels();
  const std::size_t positions = g.ow * g.oh;
  const std::size_t k_cols = g.kw * g.kh * d.c;
  Tensor y(d.shape_like(g.ow, g.oh, cout));
  const RowMat wm = weight_matrix(p.weight);
  const bool has_bias = !p.bias.empty();
  std::vector<double> col;
  if (!is_pointwise(g)) col.resize(positions * k_cols);
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* xs = x.raw() + n * d.plane();
    MapMat out(y.raw() + n * positions * cout, positions, cout);
    if (is_pointwise(g)) {
      out.noalias() = ConstMapMat(xs, positions, k_cols) * wm;
    } else {
      im2col(xs, d, g, col.data());
      out.noalias() = ConstMapMat(col.data(), positions, k_cols) * wm;
    }
    if (has_bias) out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(p.bias.raw(), cout);
  }
  return y;
}

void conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& dy,
                     Tensor* dx, Tensor* dweight, Tensor* dbias) {
  const ImageDims d = image_dims(x, "conv2d_backward");
  check_conv(d, p);
  const Geometry g = geometry(d, p.kernel_w(), p.kernel_h(), p.stride,
                              p.padding, "conv2d_backward");
  const std::size_t cout = p.out_channels();
  const std::size_t positions = g.ow * g.oh;
  const std::size_t k_cols = g.kw * g.kh * d.c;
  expect_shape(dy, d.shape_like(g.ow, g.oh, cout), "conv2d_backward dy");
  const RowMat wm = weight_matrix(p.weight);
  RowMat dwm = RowMat::Zero(k_cols, cout);
  std::vector<double> col(positions * k_cols);
  RowMat dcol;
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* xs = x.raw() + n * d.plane();
    ConstMapMat g_out(dy.raw() + n * positions * cout, positions, cout);
    if (dweight) {
      if (is_pointwise(g)) {
        dwm.noalias() += ConstMapMat(xs, positions, k_cols).transpose() * g_out;
      } else {
        im2col(xs, d, g, col.data());
        dwm.noalias() +=
            ConstMapMat(col.data(), positions, k_cols).transpose() * g_out;
      }
    }
    if (dbias && !p.bias.empty()) {
      for (std::size_t o = 0; o < cout; ++o) (*dbias)[o] += g_out.col(o).sum();
    }
    if (dx) {
      if (is_pointwise(g)) {
        MapMat(dx->raw() + n * d.plane(), positions, k_cols).noalias() +=
            g_out * wm.transpose();
      } else {
        dcol.noalias() = g_out * wm.transpose();
        col2im_add(dcol.data(), d, g, dx->raw() + n * d.plane());
      }
    }
  }
  if (dweight) {
    const std::size_t in = d.c;
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t c = 0; c < in; ++c)
        for (std::size_t i = 0; i < g.kw; ++i)
          for (std::size_t j = 0; j < g.kh; ++j)
            (*dweight)[((o * in + c) * g.kw + i) * g.kh + j] +=
                dwm((i * g.kh + j) * in + c, o);
  }
}

namespace {
void check_depthwise(const ImageDims& d, const DepthwiseParams& p) {
  if (p.weight.rank() != 3) {
    throw ShapeError("depthwise_conv2d: weight must be (C, kw, kh), got " +
                     to_string(p.weight.shape()));
  }
  if (d.c != p.channels() || (!p.bias.empty() && p.bias.size() != p.channels())) {
    throw ShapeError("depthwise_conv2d: input has " + std::to_string(d.c) +
                     " channels, params have " + std::to_string(p.channels()));
  }
}

// (C, kw, kh) -> (kw, kh, C) so the channel loop is contiguous.
std::vector<double> depthwise_taps(const Tensor& w) {
  const std::size_t c = w.dim(0), kw = w.dim(1), kh = w.dim(2);
  std::vector<double> taps(w.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < kw; ++i)
      for (std::size_t j = 0; j < kh; ++j)
        taps[(i * kh + j) * c + ch] = w[(ch * kw + i) * kh + j];
  return taps;
}
}  // namespace

Tensor depthwise_conv2d(const Tensor& x, const DepthwiseParams& p) {
  const ImageDims d = image_dims(x, "depthwise_conv2d");
  check_depthwise(d, p);
  const Geometry g = geometry(d, p.weight.dim(1), p.weight.dim(2), p.stride,
                              p.padding, "depthwise_conv2d");
  Tensor y(d.shape_like(g.ow, g.oh, d.c));
  const std::vector<double> taps = depthwise_taps(p.weight);
  const std::size_t c = d.c;
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* xs = x.raw() + n * d.plane();
    double* ys = y.raw() + n * g.ow * g.oh * c;
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      for (std::size_t oy = 0; oy < g.oh; ++oy) {
        double* out = ys + (ox * g.oh + oy) * c;
        if (p.bias.empty())
          std::fill(out, out + c, 0.0);
        else
          std::copy(p.bias.raw(), p.bias.raw() + c, out);
        for (std::size_t i = 0; i < g.kw; ++i) {
          const long ix = static_cast<long>(ox * g.sw + i) - static_cast<long>(g.pw);
          if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
          for (std::size_t j = 0; j < g.kh; ++j) {
            const long iy = static_cast<long>(oy * g.sh + j) - static_cast<long>(g.ph);
            if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
            const double* in = xs + (ix * d.h + iy) * c;
            const double* t = taps.data() + (i * g.kh + j) * c;
            for (std::size_t ch = 0; ch < c; ++ch) out[ch] += t[ch] * in[ch];
          }
        }
      }
    }
  }
  return y;
}

void depthwise_conv2d_backward(const Tensor& x, const DepthwiseParams& p,
                               const Tensor& dy, Tensor* dx, Tensor* dweight,
                               Tensor* dbias) {
  const ImageDims d = image_dims(x, "depthwise_conv2d_backward");
  check_depthwise(d, p);
  const Geometry g = geometry(d, p.weight.dim(1), p.weight.dim(2), p.stride,
                              p.padding, "depthwise_conv2d_backward");
  const std::size_t c = d.c;
  expect_shape(dy, d.shape_like(g.ow, g.oh, c), "depthwise_conv2d_backward dy");
  const std::vector<double> taps = depthwise_taps(p.weight);
  std::vector<double> dtaps(taps.size(), 0.0);
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* xs = x.raw() + n * d.plane();
    const double* gs = dy.raw() + n * g.ow * g.oh * c;
    double* dxs = dx ? dx->raw() + n * d.plane() : nullptr;
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      for (std::size_t oy = 0; oy < g.oh; ++oy) {
        const double* go = gs + (ox * g.oh + oy) * c;
        if (dbias && !p.bias.empty())
          for (std::size_t ch = 0; ch < c; ++ch) (*dbias)[ch] += go[ch];
        for (std::size_t i = 0; i < g.kw; ++i) {
          const long ix = static_cast<long>(ox * g.sw + i) - static_cast<long>(g.pw);
          if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
          for (std::size_t j = 0; j < g.kh; ++j) {
            const long iy = static_cast<long>(oy * g.sh + j) - static_cast<long>(g.ph);
            if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
            const std::size_t off = (ix * d.h + iy) * c;
            const std::size_t toff = (i * g.kh + j) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
              dtaps[toff + ch] += go[ch] * xs[off + ch];
              if (dxs) dxs[off + ch] += go[ch] * taps[toff + ch];
            }
          }
        }
      }
    }
  }
  if (dweight) {
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < g.kw; ++i)
        for (std::size_t j = 0; j < g.kh; ++j)
          (*dweight)[(ch * g.kw + i) * g.kh + j] += dtaps[(i * g.kh + j) * c + ch];
  }
}

Tensor separable_conv2d(const Tensor& x, const DepthwiseParams& dw,
                        const ConvParams& pw) {
  if (pw.weight.rank() != 4 || pw.kernel_w() != 1 || pw.kernel_h() != 1) {
    throw ShapeError("separable_conv2d: pointwise kernel must be 1x1, got " +
                     to_string(pw.weight.shape()));
  }
  if (pw.in_channels() != dw.channels()) {
    throw ShapeError("separable_conv2d: pointwise expects " +
                     std::to_string(pw.in_channels()) +
                     " channels, depthwise produces " +
                     std::to_string(dw.channels()));
  }
  return conv2d(depthwise_conv2d(x, dw), pw);
}

SeparableParams separable_params(std::size_t in_ch, std::size_t out_ch,
                                 std::size_t k, Stride stride, bool with_bias) {
  return {DepthwiseParams::zeros(in_ch, k, k, stride, Padding::Same(), false),
          ConvParams::zeros(in_ch, out_ch, 1, 1, {}, Padding::Pixels(0, 0),
                            with_bias)};
}

// --- normalization and activations ----------------------------------------

Tensor batchnorm(const Tensor& x, BNParams& p, Mode mode,
                 BatchNormCache* cache) {
  if (x.rank() == 0 || x.shape().back() != p.channels()) {
    throw ShapeError("batchnorm: last axis of " + to_string(x.shape()) +
                     " must equal " + std::to_string(p.channels()));
  }
  const std::size_t c = p.channels();
  const std::size_t rows = x.size() / c;
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (mode == Mode::Train) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += x[r * c + ch];
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double dv = x[r * c + ch] - mean[ch];
        var[ch] += dv * dv;
      }
    for (double& v : var) v /= static_cast<double>(rows);
    for (std::size_t ch = 0; ch < c; ++ch) {
      p.running_mean[ch] =
          p.momentum * p.running_mean[ch] + (1.0 - p.momentum) * mean[ch];
      p.running_var[ch] =
          p.momentum * p.running_var[ch] + (1.0 - p.momentum) * var[ch];
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = p.running_mean[ch];
      var[ch] = p.running_var[ch];
    }
  }
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch)
    inv_std[ch] = 1.0 / std::sqrt(var[ch] + p.epsilon);

  Tensor y(x.shape());
  Tensor xhat;
  if (cache) xhat = Tensor(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      const double h = (x[i] - mean[ch]) * inv_std[ch];
      if (cache) xhat[i] = h;
      y[i] = p.gamma[ch] * h + p.beta[ch];
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->normalized = std::move(xhat);
  }
  return y;
}

void batchnorm_backward(const BNParams& p, Mode mode,
                        const BatchNormCache& cache, const Tensor& dy,
                        Tensor* dx, Tensor* dgamma, Tensor* dbeta) {
  const std::size_t c = p.channels();
  const std::size_t rows = dy.size() / c;
  const Tensor& xhat = cache.normalized;
  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      sum_dy[ch] += dy[i];
      sum_dy_xhat[ch] += dy[i] * xhat[i];
    }
  if (dgamma)
    for (std::size_t ch = 0; ch < c; ++ch) (*dgamma)[ch] += sum_dy_xhat[ch];
  if (dbeta)
    for (std::size_t ch = 0; ch < c; ++ch) (*dbeta)[ch] += sum_dy[ch];
  if (!dx) return;
  const double m = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      const double scale = p.gamma[ch] * cache.inv_std[ch];
      if (mode == Mode::Train) {
        (*dx)[i] += scale * (dy[i] - sum_dy[ch] / m -
                             xhat[i] * sum_dy_xhat[ch] / m);
      } else {
        (*dx)[i] += scale * dy[i];
      }
    }
  }
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = x[i] >= 0.0 ? x[i] : alpha * x[i];
  return y;
}

void leaky_relu_backward(const Tensor& x, double alpha, const Tensor& dy,
                         Tensor* dx) {
  for (std::size_t i = 0; i < x.size(); ++i)
    (*dx)[i] += x[i] >= 0.0 ? dy[i] : alpha * dy[i];
}

Tensor dropout(const Tensor& x, double ratio, std::mt19937_64& rng, Mode mode,
               Tensor* mask) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("dropout: ratio must be in [0, 1)");
  }
  if (mode == Mode::Infer || ratio == 0.0) {
    if (mask) *mask = Tensor(x.shape(), 1.0);
    return x;
  }
  const double keep_scale = 1.0 / (1.0 - ratio);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor m(x.shape());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = u(rng) < ratio ? 0.0 : keep_scale;
    y[i] = x[i] * m[i];
  }
  if (mask) *mask = std::move(m);
  return y;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw ShapeError("softmax_rows: last axis must be >= 1");
  }
  const std::size_t c = x.shape().back();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.size() / c; ++r) {
    const double* in = x.raw() + r * c;
    double* out = y.raw() + r * c;
    const double mx = *std::max_element(in, in + c);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += out[k] = std::exp(in[k] - mx);
    for (std::size_t k = 0; k < c; ++k) out[k] /= sum;
  }
  return y;
}

Tensor log_softmax_rows(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw ShapeError("log_softmax_rows: last axis must be >= 1");
  }
  const std::size_t c = x.shape().back();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.size() / c; ++r) {
    const double* in = x.raw() + r * c;
    double* out = y.raw() + r * c;
    const double mx = *std::max_element(in, in + c);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += std::exp(in[k] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t k = 0; k < c; ++k) out[k] = in[k] - lse;
  }
  return y;
}

// --- pooling and reshaping ------------------------------------------------

namespace {
Geometry pool_geometry(const ImageDims& d, std::size_t k, std::size_t stride,
                       std::size_t pad) {
  if (k == 0 || stride == 0) {
    throw std::invalid_argument("maxpool2d: window and stride must be >= 1");
  }
  if (pad >= k) throw std::invalid_argument("maxpool2d: padding must be < window");
  return geometry(d, k, k, Stride{stride, stride}, Padding::Pixels(pad, pad),
                  "maxpool2d");
}

// Flat input index of the window maximum, ties resolved to the first cell.
std::size_t window_argmax(const double* xs, const ImageDims& d,
                          const Geometry& g, std::size_t ox, std::size_t oy,
                          std::size_t ch) {
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t i = 0; i < g.kw; ++i) {
    const long ix = static_cast<long>(ox * g.sw + i) - static_cast<long>(g.pw);
    if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
    for (std::size_t j = 0; j < g.kh; ++j) {
      const long iy = static_cast<long>(oy * g.sh + j) - static_cast<long>(g.ph);
      if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
      const std::size_t off = (ix * d.h + iy) * d.c + ch;
      if (!found || xs[off] > best_v) {
        best = off;
        best_v = xs[off];
        found = true;
      }
    }
  }
  return best;
}
}  // namespace

Tensor maxpool2d(const Tensor& x, std::size_t k, std::size_t stride,
                 std::size_t pad) {
  const ImageDims d = image_dims(x, "maxpool2d");
  const Geometry g = pool_geometry(d, k, stride, pad);
  Tensor y(d.shape_like(g.ow, g.oh, d.c));
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* xs = x.raw() + n * d.plane();
    double* ys = y.raw() + n * g.ow * g.oh * d.c;
    for (std::size_t ox = 0; ox < g.ow; ++ox)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ch = 0; ch < d.c; ++ch)
          ys[(ox * g.oh + oy) * d.c + ch] = xs[window_argmax(xs, d, g, ox, oy, ch)];
  }
  return y;
}

void maxpool2d_backward(const Tensor& x, std::size_t k, std::size_t stride,
                        std::size_t pad, const Tensor& dy, Tensor* dx) {
  const ImageDims d = image_dims(x, "maxpool2d_backward");
  const Geometry g = pool_geometry(d, k, stride, pad);
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* xs = x.raw() + n * d.plane();
    const double* gs = dy.raw() + n * g.ow * g.oh * d.c;
    double* dxs = dx->raw() + n * d.plane();
    for (std::size_t ox = 0; ox < g.ow; ++ox)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ch = 0; ch < d.c; ++ch)
          dxs[window_argmax(xs, d, g, ox, oy, ch)] +=
              gs[(ox * g.oh + oy) * d.c + ch];
  }
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) {
    throw ShapeError("permute: " + std::to_string(axes.size()) +
                     " axes given for " + to_string(x.shape()));
  }
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) {
      throw ShapeError("permute: axes are not a permutation of 0.." +
                       std::to_string(r ? r - 1 : 0));
    }
    seen[a] = true;
  }
  // Pad to rank 4 so one loop nest serves every rank.
  std::size_t in_dims[4] = {1, 1, 1, 1};
  std::size_t in_strides[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < r; ++i) in_dims[4 - r + i] = x.dim(i);
  std::size_t stride = 1;
  for (int i = 3; i >= 0; --i) {
    in_strides[i] = stride;
    stride *= in_dims[i];
  }
  Shape out_shape(r);
  std::size_t out_dims[4] = {1, 1, 1, 1};
  std::size_t src_strides[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.dim(axes[i]);
    out_dims[4 - r + i] = out_shape[i];
    src_strides[4 - r + i] = in_strides[4 - r + axes[i]];
  }
  Tensor y(out_shape);
  std::size_t o = 0;
  for (std::size_t a = 0; a < out_dims[0]; ++a)
    for (std::size_t b = 0; b < out_dims[1]; ++b)
      for (std::size_t c = 0; c < out_dims[2]; ++c)
        for (std::size_t e = 0; e < out_dims[3]; ++e)
          y[o++] = x[a * src_strides[0] + b * src_strides[1] +
                     c * src_strides[2] + e * src_strides[3]];
  return y;
}

std::vector<std::size_t> inverse_permutation(
    const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= axes.size()) throw ShapeError("inverse_permutation: axis out of range");
    inv[axes[i]] = i;
  }
  return inv;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() == 0 ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw ShapeError("concat_channels: " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " disagree off the channel axis");
  }
  const std::size_t ca = a.shape().back(), cb = b.shape().back();
  Shape shape = a.shape();
  shape.back() = ca + cb;
  Tensor y(shape);
  const std::size_t rows = a.size() / ca;
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.raw() + r * ca, ca, y.raw() + r * (ca + cb));
    std::copy_n(b.raw() + r * cb, cb, y.raw() + r * (ca + cb) + ca);
  }
  return y;
}

Tensor global_avg_pool_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("global_avg_pool_axis: axis " + std::to_string(axis) +
                     " out of range for " + to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<long>(axis));
  Tensor y(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < len; ++k) {
      const double* src = x.raw() + (o * len + k) * inner;
      double* dst = y.raw() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < inner; ++i)
      y[o * inner + i] /= static_cast<double>(len);
  }
  return y;
}

Tensor upsample2x(const Tensor& x) {
  const ImageDims d = image_dims(x, "upsample2x");
  Tensor y(d.shape_like(2 * d.w, 2 * d.h, d.c));
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* xs = x.raw() + n * d.plane();
    double* ys = y.raw() + n * 4 * d.plane();
    for (std::size_t ox = 0; ox < 2 * d.w; ++ox)
      for (std::size_t oy = 0; oy < 2 * d.h; ++oy)
        std::copy_n(xs + ((ox / 2) * d.h + oy / 2) * d.c, d.c,
                    ys + (ox * 2 * d.h + oy) * d.c);
  }
  return y;
}

// --- sequence and dense layers --------------------------------------------

namespace {
struct SeqDims {
  std::size_t n, t, f;
  bool batched;
};

SeqDims seq_dims(const Tensor& x, const char* what) {
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1), false};
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
  throw ShapeError(std::string(what) + ": expected (T, F) or (N, T, F), got " +
                   to_string(x.shape()));
}
}  // namespace

Tensor bilstm(const Tensor& x, const LstmParams& p, LstmCache* cache) {
  const SeqDims s = seq_dims(x, "bilstm");
  const std::size_t hsz = p.hidden_size;
  if (hsz == 0 || p.forward.weight.rank() != 2 ||
      p.forward.weight.dim(0) != 4 * hsz ||
      p.forward.weight.dim(1) != s.f + hsz ||
      p.backward.weight.shape() != p.forward.weight.shape() ||
      p.forward.bias.size() != 4 * hsz || p.backward.bias.size() != 4 * hsz) {
    throw ShapeError("bilstm: input " + to_string(x.shape()) +
                     " does not match gate weights " +
                     to_string(p.forward.weight.shape()) + " with hidden " +
                     std::to_string(hsz));
  }
  Tensor y(s.batched ? Shape{s.n, s.t, 2 * hsz} : Shape{s.t, 2 * hsz});
  const std::size_t in_dim = s.f + hsz;
  RowMat xh(s.n, in_dim);
  RowMat z(s.n, 4 * hsz);
  for (int dir = 0; dir < 2; ++dir) {
    const LstmDirection& d = dir == 0 ? p.forward : p.backward;
    ConstMapMat w(d.weight.raw(), 4 * hsz, in_dim);
    const Eigen::Map<const Eigen::RowVectorXd> b(d.bias.raw(), 4 * hsz);
    RowMat h = RowMat::Zero(s.n, hsz), c = RowMat::Zero(s.n, hsz);
    if (cache) {
      cache->gates[dir].assign(s.t * s.n * 4 * hsz, 0.0);
      cache->cells[dir].assign(s.t * s.n * hsz, 0.0);
      cache->hidden[dir].assign(s.t * s.n * hsz, 0.0);
    }
    for (std::size_t step = 0; step < s.t; ++step) {
      const std::size_t t = dir == 0 ? step : s.t - 1 - step;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* xt = x.raw() + (n * s.t + t) * s.f;
        for (std::size_t k = 0; k < s.f; ++k) xh(n, k) = xt[k];
        for (std::size_t k = 0; k < hsz; ++k) xh(n, s.f + k) = h(n, k);
      }
      z.noalias() = xh * w.transpose();
      z.rowwise() += b;
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t k = 0; k < hsz; ++k) {
          const double ig = sigmoid(z(n, k));
          const double fg = sigmoid(z(n, hsz + k));
          const double gg = std::tanh(z(n, 2 * hsz + k));
          const double og = sigmoid(z(n, 3 * hsz + k));
          z(n, k) = ig;
          z(n, hsz + k) = fg;
          z(n, 2 * hsz + k) = gg;
          z(n, 3 * hsz + k) = og;
          c(n, k) = fg * c(n, k) + ig * gg;
          h(n, k) = og * std::tanh(c(n, k));
          y[(n * s.t + t) * 2 * hsz + dir * hsz + k] = h(n, k);
        }
      }
      if (cache) {
        std::copy_n(z.data(), s.n * 4 * hsz,
                    cache->gates[dir].data() + step * s.n * 4 * hsz);
        std::copy_n(c.data(), s.n * hsz,
                    cache->cells[dir].data() + step * s.n * hsz);
        std::copy_n(h.data(), s.n * hsz,
                    cache->hidden[dir].data() + step * s.n * hsz);
      }
    }
  }
  return y;
}

void bilstm_backward(const Tensor& x, const LstmParams& p,
                     const LstmCache& cache, const Tensor& dy, Tensor* dx,
                     LstmParams* grads) {
  const SeqDims s = seq_dims(x, "bilstm_backward");
  const std::size_t hsz = p.hidden_size;
  const std::size_t in_dim = s.f + hsz;
  RowMat xh(s.n, in_dim);
  RowMat dz(s.n, 4 * hsz);
  RowMat dxh(s.n, in_dim);
  for (int dir = 0; dir < 2; ++dir) {
    const LstmDirection& d = dir == 0 ? p.forward : p.backward;
    ConstMapMat w(d.weight.raw(), 4 * hsz, in_dim);
    RowMat dw = RowMat::Zero(4 * hsz, in_dim);
    Eigen::RowVectorXd db = Eigen::RowVectorXd::Zero(4 * hsz);
    RowMat dh_next = RowMat::Zero(s.n, hsz), dc_next = RowMat::Zero(s.n, hsz);
    for (std::size_t step = s.t; step-- > 0;) {
      const std::size_t t = dir == 0 ? step : s.t - 1 - step;
      const double* gates = cache.gates[dir].data() + step * s.n * 4 * hsz;
      const double* cells = cache.cells[dir].data() + step * s.n * hsz;
      const double* prev_c =
          step ? cache.cells[dir].data() + (step - 1) * s.n * hsz : nullptr;
      const double* prev_h =
          step ? cache.hidden[dir].data() + (step - 1) * s.n * hsz : nullptr;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* xt = x.raw() + (n * s.t + t) * s.f;
        for (std::size_t k = 0; k < s.f; ++k) xh(n, k) = xt[k];
        for (std::size_t k = 0; k < hsz; ++k) {
          xh(n, s.f + k) = prev_h ? prev_h[n * hsz + k] : 0.0;
          const double* gt = gates + n * 4 * hsz;
          const double ig = gt[k], fg = gt[hsz + k], gg = gt[2 * hsz + k],
                       og = gt[3 * hsz + k];
          const double ct = cells[n * hsz + k];
          const double tc = std::tanh(ct);
          const double dh = dy[(n * s.t + t) * 2 * hsz + dir * hsz + k] +
                            dh_next(n, k);
          const double dc = dh * og * (1.0 - tc * tc) + dc_next(n, k);
          const double cp = prev_c ? prev_c[n * hsz + k] : 0.0;
          dz(n, k) = dc * gg * ig * (1.0 - ig);
          dz(n, hsz + k) = dc * cp * fg * (1.0 - fg);
          dz(n, 2 * hsz + k) = dc * ig * (1.0 - gg * gg);
          dz(n, 3 * hsz + k) = dh * tc * og * (1.0 - og);
          dc_next(n, k) = dc * fg;
        }
      }
      dw.noalias() += dz.transpose() * xh;
      db += dz.colwise().sum();
      dxh.noalias() = dz * w;
      for (std::size_t n = 0; n < s.n; ++n) {
        if (dx) {
          double* dxt = dx->raw() + (n * s.t + t) * s.f;
          for (std::size_t k = 0; k < s.f; ++k) dxt[k] += dxh(n, k);
        }
        for (std::size_t k = 0; k < hsz; ++k) dh_next(n, k) = dxh(n, s.f + k);
      }
    }
    if (grads) {
      LstmDirection& gd = dir == 0 ? grads->forward : grads->backward;
      MapMat(gd.weight.raw(), 4 * hsz, in_dim) += dw;
      for (std::size_t k = 0; k < 4 * hsz; ++k) gd.bias[k] += db(k);
    }
  }
}

Tensor dense(const Tensor& x, const DenseParams& p) {
  if (p.weight.rank() != 2 || x.rank() == 0 ||
      x.shape().back() != p.weight.dim(1) ||
      (!p.bias.empty() && p.bias.size() != p.weight.dim(0))) {
    throw ShapeError("dense: input " + to_string(x.shape()) +
                     " does not match weight " + to_string(p.weight.shape()));
  }
  const std::size_t in = p.weight.dim(1), out = p.weight.dim(0);
  const std::size_t rows = x.size() / in;
  Shape shape = x.shape();
  shape.back() = out;
  Tensor y(shape);
  MapMat ym(y.raw(), rows, out);
  ym.noalias() = ConstMapMat(x.raw(), rows, in) *
                 ConstMapMat(p.weight.raw(), out, in).transpose();
  if (!p.bias.empty())
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(p.bias.raw(), out);
  return y;
}

void dense_backward(const Tensor& x, const DenseParams& p, const Tensor& dy,
                    Tensor* dx, Tensor* dweight, Tensor* dbias) {
  const std::size_t in = p.weight.dim(1), out = p.weight.dim(0);
  const std::size_t rows = x.size() / in;
  ConstMapMat g(dy.raw(), rows, out);
  if (dweight)
    MapMat(dweight->raw(), out, in).noalias() +=
        g.transpose() * ConstMapMat(x.raw(), rows, in);
  if (dbias && !p.bias.empty())
    for (std::size_t o = 0; o < out; ++o) (*dbias)[o] += g.col(o).sum();
  if (dx)
    MapMat(dx->raw(), rows, in).noalias() +=
        g * ConstMapMat(p.weight.raw(), out, in);
}

}  // namespace lpr
