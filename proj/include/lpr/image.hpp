#pragma once

// Small raster type shared by rendering, augmentation and rectification.
// Intensities are doubles in [0, 1]; pixels are stored row-major with
// interleaved channels, so (x, y, c) lives at (y * width + x) * channels + c.

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace lpr {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c = 1, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  bool empty() const { return pixels.empty(); }

  double& at(std::size_t x, std::size_t y, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

/// ITU-R BT.601 luma; single-channel images are returned unchanged.
Image to_gray(const Image& img);

/// Bilinear resize with pixel centres aligned (corner pixels map to corner
/// pixels). Returns a copy when the size already matches.
Image resize_bilinear(const Image& img, std::size_t width, std::size_t height);

/// Reads binary or ASCII PGM (P2/P5) and PPM (P3/P6), 8- or 16-bit.
Image read_pnm(const std::filesystem::path& path);
/// Writes P5 for one channel, P6 for three; values are clamped and rounded
/// to 8 bits.
void write_pnm(const Image& img, const std::filesystem::path& path);

}  // namespace lpr
