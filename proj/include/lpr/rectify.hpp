#pragma once

// Affine plate rectification: fit a 2x3 map from a corner quad to the
// canonical plate rectangle and resample with bilinear interpolation.
//
// Coordinates address pixel centres: pixel (i, j) sits at (x, y) = (i, j),
// so the canonical 128x32 rectangle spans (0, 0) .. (127, 31).

#include <array>
#include <stdexcept>

#include "lpr/image.hpp"

namespace lpr {

class DegenerateQuadError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SingularTransformError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Corners ordered top-left, top-right, bottom-right, bottom-left.
using Quad = std::array<Point, 4>;

/// [a b tx; c d ty]: (x, y) -> (a x + b y + tx, c x + d y + ty).
struct AffineMatrix {
  double a = 1.0, b = 0.0, tx = 0.0;
  double c = 0.0, d = 1.0, ty = 0.0;

  Point apply(Point p) const { return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty}; }
  double determinant() const { return a * d - b * c; }
};

/// Shoelace area; positive for clockwise corners in image coordinates.
double quad_area(const Quad& q);

/// The rectangle (0, 0) .. (width - 1, height - 1).
Quad canonical_quad(std::size_t width, std::size_t height);

/// Least-squares affine map sending src[i] to dst[i] over all four
/// correspondences; exact when they are related by an affine map. Throws
/// DegenerateQuadError when src is collinear or has no area.
AffineMatrix fit_affine(const Quad& src, const Quad& dst);

/// Throws SingularTransformError when |det| <= 1e-12.
AffineMatrix invert(const AffineMatrix& m);
/// outer after inner: x -> outer(inner(x)).
AffineMatrix compose(const AffineMatrix& outer, const AffineMatrix& inner);

enum class Border { Clamp, Constant };

/// Output pixel (u, v) samples the input at m^-1 (u, v). Out-of-range
/// neighbours are edge-clamped, or replaced by `fill` under
/// Border::Constant.
Image warp_bilinear(const Image& img, const AffineMatrix& m, std::size_t out_w,
                    std::size_t out_h, Border border = Border::Clamp,
                    double fill = 0.0);

/// fit_affine(q, canonical rectangle) followed by the warp.
Image rectify_plate(const Image& img, const Quad& q, std::size_t out_w = 128,
                    std::size_t out_h = 32);

}  // namespace lpr
