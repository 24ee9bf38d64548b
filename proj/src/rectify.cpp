#include "lpr/rectify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

namespace lpr {

double quad_area(const Quad& q) {
  double twice = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point& p = q[i];
    const Point& n = q[(i + 1) % 4];
    twice += p.x * n.y - n.x * p.y;
  }
  return 0.5 * twice;
}

Quad canonical_quad(std::size_t width, std::size_t height) {
  const double r = double(width) - 1.0, b = double(height) - 1.0;
  return {Point{0, 0}, Point{r, 0}, Point{r, b}, Point{0, b}};
}

AffineMatrix fit_affine(const Quad& src, const Quad& dst) {
  Eigen::Matrix<double, 4, 3> design;
  Eigen::Matrix<double, 4, 2> target;
  double extent = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    if (!std::isfinite(src[i].x) || !std::isfinite(src[i].y) ||
        !std::isfinite(dst[i].x) || !std::isfinite(dst[i].y)) {
      throw DegenerateQuadError("fit_affine: non-finite corner");
    }
    design.row(i) << src[i].x, src[i].y, 1.0;
    target.row(i) << dst[i].x, dst[i].y;
    extent = std::max({extent, std::abs(src[i].x - src[0].x), std::abs(src[i].y - src[0].y)});
  }
  // Collinear corners leave the linear part undetermined.
  const double area = std::abs(quad_area(src));
  Eigen::ColPivHouseholderQR<Eigen::Matrix<double, 4, 3>> qr(design);
  qr.setThreshold(1e-12);
  if (extent == 0.0 || area <= 1e-9 * extent * extent || qr.rank() < 3) {
    throw DegenerateQuadError("fit_affine: source quad is degenerate (area " +
                              std::to_string(area) + ")");
  }
  const Eigen::Matrix<double, 3, 2> sol = qr.solve(target);
  return {sol(0, 0), sol(1, 0), sol(2, 0), sol(0, 1), sol(1, 1), sol(2, 1)};
}

AffineMatrix invert(const AffineMatrix& m) {
  const double det = m.determinant();
  if (!(std::abs(det) > 1e-12)) {
    throw SingularTransformError("affine map is singular (det " + std::to_string(det) + ")");
  }
  const double ia = m.d / det, ib = -m.b / det, ic = -m.c / det, id = m.a / det;
  return {ia, ib, -(ia * m.tx + ib * m.ty), ic, id, -(ic * m.tx + id * m.ty)};
}

AffineMatrix compose(const AffineMatrix& outer, const AffineMatrix& inner) {
  return {outer.a * inner.a + outer.b * inner.c,
          outer.a * inner.b + outer.b * inner.d,
          outer.a * inner.tx + outer.b * inner.ty + outer.tx,
          outer.c * inner.a + outer.d * inner.c,
          outer.c * inner.b + outer.d * inner.d,
          outer.c * inner.tx + outer.d * inner.ty + outer.ty};
}

Image warp_bilinear(const Image& img, const AffineMatrix& m, std::size_t out_w,
                    std::size_t out_h, Border border, double fill) {
  if (img.empty()) throw std::invalid_argument("warp_bilinear: empty image");
  const AffineMatrix inv = invert(m);
  Image out(out_w, out_h, img.channels);
  const long w = long(img.width), h = long(img.height);
  for (std::size_t v = 0; v < out_h; ++v) {
    for (std::size_t u = 0; u < out_w; ++u) {
      const Point s = inv.apply({double(u), double(v)});
      const double fx = std::floor(s.x), fy = std::floor(s.y);
      const double wx = s.x - fx, wy = s.y - fy;
      long xs[2] = {long(fx), long(fx) + 1};
      long ys[2] = {long(fy), long(fy) + 1};
      bool inside[2][2];
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j)
          inside[i][j] = xs[i] >= 0 && xs[i] < w && ys[j] >= 0 && ys[j] < h;
      }
      for (int i = 0; i < 2; ++i) {
        xs[i] = std::clamp(xs[i], 0L, w - 1);
        ys[i] = std::clamp(ys[i], 0L, h - 1);
      }
      for (std::size_t c = 0; c < img.channels; ++c) {
        auto px = [&](int i, int j) {
          if (border == Border::Constant && !inside[i][j]) return fill;
          return img.at(std::size_t(xs[i]), std::size_t(ys[j]), c);
        };
        // Zero weights skip the neighbour so integer-aligned samples are exact.
        double top = px(0, 0);
        if (wx != 0.0) top = top * (1.0 - wx) + px(1, 0) * wx;
        double value = top;
        if (wy != 0.0) {
          double bottom = px(0, 1);
          if (wx != 0.0) bottom = bottom * (1.0 - wx) + px(1, 1) * wx;
          value = top * (1.0 - wy) + bottom * wy;
        }
        out.at(u, v, c) = value;
      }
    }
  }
  return out;
}

Image rectify_plate(const Image& img, const Quad& q, std::size_t out_w,
                    std::size_t out_h) {
  return warp_bilinear(img, fit_affine(q, canonical_quad(out_w, out_h)), out_w, out_h);
}

}  // namespace lpr
