#include "lpr/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

namespace lpr {

Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) {
    throw std::invalid_argument("to_gray: expected 1 or 3 channels, got " +
                                std::to_string(img.channels));
  }
  Image out(img.width, img.height, 1);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    const double* p = &img.pixels[3 * i];
    out.pixels[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return out;
}

Image resize_bilinear(const Image& img, std::size_t width, std::size_t height) {
  if (img.empty() || width == 0 || height == 0) {
    throw std::invalid_argument("resize_bilinear: empty image or target size");
  }
  if (img.width == width && img.height == height) return img;
  Image out(width, height, img.channels);
  const double sx = width > 1 ? double(img.width - 1) / double(width - 1) : 0.0;
  const double sy = height > 1 ? double(img.height - 1) / double(height - 1) : 0.0;
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = y * sy;
    const std::size_t y0 = std::min<std::size_t>(std::size_t(fy), img.height - 1);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - double(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = x * sx;
      const std::size_t x0 = std::min<std::size_t>(std::size_t(fx), img.width - 1);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - double(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
        const double bottom = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
        out.at(x, y, c) = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw ImageIoError(path.string() + ": truncated header");
  return tok;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = header_token(in, path);
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ImageIoError(path.string() + ": bad header field '" + tok + "'");
  }
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open image " + path.string());
  const std::string magic = header_token(in, path);
  std::size_t channels = 0;
  bool ascii = false;
  if (magic == "P2" || magic == "P5") channels = 1;
  if (magic == "P3" || magic == "P6") channels = 3;
  if (magic == "P2" || magic == "P3") ascii = true;
  if (channels == 0) {
    throw ImageIoError(path.string() + ": not a PGM/PPM file (magic '" + magic + "')");
  }
  const std::size_t w = header_number(in, path);
  const std::size_t h = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw ImageIoError(path.string() + ": invalid size or maxval");
  }
  Image img(w, h, channels);
  const double scale = 1.0 / double(maxval);
  if (ascii) {
    for (double& v : img.pixels) {
      std::size_t raw = 0;
      if (!(in >> raw)) throw ImageIoError(path.string() + ": truncated pixel data");
      v = double(std::min(raw, maxval)) * scale;
    }
    return img;
  }
  const std::size_t bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(img.pixels.size() * bytes);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (std::size_t(in.gcount()) != buf.size()) {
    throw ImageIoError(path.string() + ": truncated pixel data");
  }
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    // 16-bit samples are big-endian.
    const std::size_t raw = bytes == 1 ? buf[i] : (std::size_t(buf[2 * i]) << 8) | buf[2 * i + 1];
    img.pixels[i] = double(std::min(raw, maxval)) * scale;
  }
  return img;
}

void write_pnm(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) {
    throw ImageIoError("write_pnm: need 1 or 3 channels, got " +
                       std::to_string(img.channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot write image " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n'
      << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> buf(img.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<unsigned char>(
        std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw ImageIoError("short write to " + path.string());
}

}  // namespace lpr
