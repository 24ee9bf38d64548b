#include "lpr/platelang.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace lpr {

// --- grammar --------------------------------------------------------------

const std::vector<std::string>& plate_templates() {
  static const std::vector<std::string> table = {
      // four characters
      "AA-AN", "AA-NN", "AN-NN", "NA-NN", "NN-AA", "NN-AN", "NN-NA",
      // five characters
      "AA-ANN", "AA-NNN", "AN-NNN", "NA-NNN", "NNN-AA", "NNN-AN", "NNN-NA",
      // six characters
      "AA-NNNN", "AN-NNNN", "NA-NNNN", "AAA-NNN", "AAN-NNN", "ANA-NNN",
      "ANN-NNN", "NAA-NNN", "NNN-AAA", "NNNN-AA", "NNNN-AN",
      // seven characters
      "AAA-NNNN"};
  return table;
}

std::vector<std::string> templates_with_length(std::size_t characters) {
  std::vector<std::string> out;
  for (const std::string& t : plate_templates())
    if (t.size() - 1 == characters) out.push_back(t);
  return out;
}

namespace {
bool matches(std::string_view text, std::string_view pattern) {
  if (text.size() != pattern.size()) return false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    switch (pattern[i]) {
      case 'A':
        if (c < 'A' || c > 'Z') return false;
        break;
      case 'N':
        if (c < '0' || c > '9') return false;
        break;
      default:
        if (c != pattern[i]) return false;
    }
  }
  return true;
}
}  // namespace

std::optional<std::string> validate(std::string_view text) {
  for (const std::string& t : plate_templates())
    if (matches(text, t)) return t;
  return std::nullopt;
}

PlateString fabricate_string(std::mt19937_64& rng, const FabricateOptions& options) {
  if (options.templates.empty() || options.letters.empty() || options.digits.empty()) {
    throw std::invalid_argument("fabricate_string: empty template or symbol set");
  }
  std::vector<double> weights;
  for (char c : options.letters) {
    const bool rare = options.rare_letters.find(c) != std::string::npos;
    weights.push_back(rare ? options.rare_weight : 1.0);
  }
  std::discrete_distribution<std::size_t> letter(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> digit(0, options.digits.size() - 1);
  std::uniform_int_distribution<std::size_t> pick(0, options.templates.size() - 1);
  const std::string& pattern = options.templates[pick(rng)];
  std::string text;
  for (char p : pattern) {
    if (p == 'A')
      text.push_back(options.letters[letter(rng)]);
    else if (p == 'N')
      text.push_back(options.digits[digit(rng)]);
    else
      text.push_back(p);
  }
  return {text, pattern};
}

// --- glyphs ---------------------------------------------------------------

namespace {

struct FontRow {
  char symbol;
  const char* rows[7];
};

// clang-format off
const FontRow kFont[] = {
  {'A', {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
  {'B', {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}},
  {'C', {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."}},
  {'D', {"####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."}},
  {'E', {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}},
  {'F', {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}},
  {'G', {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"}},
  {'H', {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
  {'I', {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
  {'J', {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
  {'K', {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}},
  {'L', {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}},
  {'M', {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}},
  {'N', {"#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"}},
  {'O', {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
  {'P', {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}},
  {'Q', {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}},
  {'R', {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}},
  {'S', {".####", "#....", "#....", ".###.", "....#", "....#", "####."}},
  {'T', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
  {'U', {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
  {'V', {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
  {'W', {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."}},
  {'X', {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"}},
  {'Y', {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."}},
  {'Z', {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}},
  {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
  {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
  {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
  {'3', {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
  {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
  {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
  {'6', {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
  {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
  {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
  {'9', {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}},
  {'-', {".....", ".....", ".....", "#####", ".....", ".....", "....."}},
};
// clang-format on

}  // namespace

GlyphSet GlyphSet::builtin() {
  GlyphSet set;
  for (const FontRow& f : kFont) {
    Image bmp(5, 7, 1);
    for (std::size_t y = 0; y < 7; ++y)
      for (std::size_t x = 0; x < 5; ++x) bmp.at(x, y) = f.rows[y][x] == '#' ? 1.0 : 0.0;
    set.set(f.symbol, {std::move(bmp), 7});
  }
  return set;
}

GlyphSet GlyphSet::load_directory(const std::filesystem::path& dir,
                                  std::string_view symbols) {
  GlyphSet set;
  for (char s : symbols) {
    const std::filesystem::path file = dir / (std::string(1, s) + ".pgm");
    if (!std::filesystem::exists(file)) {
      throw MissingGlyphError("glyph file missing: " + file.string());
    }
    Image gray = to_gray(read_pnm(file));
    for (double& v : gray.pixels) v = 1.0 - v;
    const std::size_t h = gray.height;
    set.set(s, {std::move(gray), h});
  }
  return set;
}

void GlyphSet::set(char symbol, Glyph glyph) {
  if (glyph.coverage.empty() || glyph.coverage.channels != 1) {
    throw std::invalid_argument(std::string("glyph '") + symbol +
                                "' must be a non-empty one-channel bitmap");
  }
  glyphs_[symbol] = std::move(glyph);
}

const Glyph& GlyphSet::get(char symbol) const {
  auto it = glyphs_.find(symbol);
  if (it == glyphs_.end()) {
    throw MissingGlyphError(std::string("no glyph for symbol '") + symbol + "'");
  }
  return it->second;
}

std::string GlyphSet::symbols() const {
  std::string out;
  for (const auto& [c, g] : glyphs_) out.push_back(c);
  return out;
}

// --- rendering ------------------------------------------------------------

const std::vector<std::pair<Rgb, Rgb>>& plate_color_pairs() {
  static const Rgb white{0.95, 0.95, 0.95}, black{0.05, 0.05, 0.05};
  static const Rgb green{0.10, 0.45, 0.25}, yellow{0.95, 0.80, 0.15};
  static const Rgb red{0.75, 0.10, 0.10};
  static const std::vector<std::pair<Rgb, Rgb>> pairs = {
      {white, black}, {white, red}, {green, white},
      {yellow, black}, {red, white}, {white, green}};
  return pairs;
}

namespace {

// Width of a layout cell relative to a character cell.
double cell_share(char symbol) { return symbol == '-' ? 0.6 : 1.0; }

std::vector<GlyphPlacement> layout(std::string_view text, const PlateStyle& style) {
  double glyph_h = style.glyph_height;
  double glyph_w = glyph_h * style.glyph_aspect;
  double spacing = style.spacing;
  double total = 0.0;
  for (char c : text) total += glyph_w * cell_share(c);
  total += spacing * double(text.size() > 0 ? text.size() - 1 : 0);
  const double room = double(style.width) - 4.0;
  if (total > room) {
    // Shrink horizontally only; plates keep their character height.
    const double k = room / total;
    glyph_w *= k;
    spacing *= k;
    total = room;
  }
  double x = (double(style.width) - total) / 2.0 + style.x_offset;
  const double y = (double(style.height) - glyph_h) / 2.0 + style.y_offset;
  std::vector<GlyphPlacement> out;
  for (char c : text) {
    const double w = glyph_w * cell_share(c);
    out.push_back({c, x, y, w, glyph_h});
    x += w + spacing;
  }
  return out;
}

// Area coverage of `glyph` over the pixel box, by 4x4 supersampling.
void paint_glyph(const Image& glyph, const GlyphPlacement& p, Image& coverage) {
  constexpr int kSub = 4;
  const long x0 = std::max(0L, long(std::floor(p.x)));
  const long y0 = std::max(0L, long(std::floor(p.y)));
  const long x1 = std::min(long(coverage.width), long(std::ceil(p.x + p.w)));
  const long y1 = std::min(long(coverage.height), long(std::ceil(p.y + p.h)));
  for (long py = y0; py < y1; ++py) {
    for (long px = x0; px < x1; ++px) {
      double acc = 0.0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          // Pixel px covers [px - 0.5, px + 0.5) under the centre convention.
          const double fx = double(px) - 0.5 + (sx + 0.5) / kSub;
          const double fy = double(py) - 0.5 + (sy + 0.5) / kSub;
          const double u = (fx - p.x) / p.w, v = (fy - p.y) / p.h;
          if (u < 0 || u >= 1 || v < 0 || v >= 1) continue;
          acc += glyph.at(std::size_t(u * double(glyph.width)),
                          std::size_t(v * double(glyph.height)));
        }
      }
      double& c = coverage.at(std::size_t(px), std::size_t(py));
      c = std::max(c, acc / (kSub * kSub));
    }
  }
}

}  // namespace

RenderedPlate render_plate(const PlateString& s, const GlyphSet& glyphs,
                           const PlateStyle& style) {
  for (char c : s.text) glyphs.get(c);  // fail before drawing anything
  RenderedPlate out;
  out.placements = layout(s.text, style);
  Image coverage(style.width, style.height, 1);
  for (const GlyphPlacement& p : out.placements)
    paint_glyph(glyphs.get(p.symbol).coverage, p, coverage);
  out.image = Image(style.width, style.height, 3);
  const double bg[3] = {style.background.r, style.background.g, style.background.b};
  const double fg[3] = {style.foreground.r, style.foreground.g, style.foreground.b};
  for (std::size_t i = 0; i < coverage.pixels.size(); ++i) {
    const double a = coverage.pixels[i];
    for (std::size_t c = 0; c < 3; ++c)
      out.image.pixels[3 * i + c] = bg[c] * (1.0 - a) + fg[c] * a;
  }
  return out;
}

// --- compositing ----------------------------------------------------------

namespace {
constexpr std::size_t kBins = 16;

std::array<double, kBins> histogram(const Image& img) {
  std::array<double, kBins> h{};
  const Image gray = to_gray(img);
  for (double v : gray.pixels) {
    const std::size_t bin = std::min<std::size_t>(kBins - 1, std::size_t(std::clamp(v, 0.0, 1.0) * kBins));
    h[bin] += 1.0;
  }
  const double n = double(gray.pixels.size());
  for (double& v : h) v /= n;
  return h;
}

double histogram_similarity(const std::array<double, kBins>& a,
                            const std::array<double, kBins>& b) {
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / kBins;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / kBins;
  double num = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < kBins; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return a == b ? 1.0 : 0.0;
  // Anti-correlated histograms are as dissimilar as it gets.
  return std::clamp(num / std::sqrt(va * vb), 0.0, 1.0);
}
}  // namespace

double histogram_similarity(const Image& a, const Image& b) {
  return histogram_similarity(histogram(a), histogram(b));
}

std::optional<CompositeResult> composite_from_crops(
    const PlateString& s, const std::map<char, std::vector<Image>>& crops,
    double threshold, const PlateStyle& style) {
  CompositeResult out;
  out.placements = layout(s.text, style);
  std::vector<Image> placed;
  for (const GlyphPlacement& p : out.placements) {
    auto it = crops.find(p.symbol);
    if (it == crops.end() || it->second.empty()) return std::nullopt;
    // Histogram of everything placed so far.
    Image partial;
    for (const Image& img : placed) {
      const Image g = to_gray(img);
      partial.pixels.insert(partial.pixels.end(), g.pixels.begin(), g.pixels.end());
    }
    partial.width = partial.pixels.size();
    partial.height = 1;
    std::optional<std::size_t> pick;
    for (std::size_t k = 0; k < it->second.size(); ++k) {
      if (placed.empty() || histogram_similarity(it->second[k], partial) >= threshold) {
        pick = k;
        break;
      }
    }
    if (!pick) return std::nullopt;
    out.chosen.push_back(*pick);
    placed.push_back(it->second[*pick]);
  }
  // Background from the border of the first crop.
  const Image first = to_gray(placed.front());
  double border = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < first.height; ++y) {
    for (std::size_t x = 0; x < first.width; ++x) {
      if (x == 0 || y == 0 || x + 1 == first.width || y + 1 == first.height) {
        border += first.at(x, y);
        ++count;
      }
    }
  }
  out.image = Image(style.width, style.height, 1, border / double(count));
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const GlyphPlacement& p = out.placements[i];
    const std::size_t w = std::max<std::size_t>(1, std::size_t(std::lround(p.w)));
    const std::size_t h = std::max<std::size_t>(1, std::size_t(std::lround(p.h)));
    const Image cell = resize_bilinear(to_gray(placed[i]), w, h);
    const long ox = std::lround(p.x), oy = std::lround(p.y);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const long tx = ox + long(x), ty = oy + long(y);
        if (tx < 0 || ty < 0 || tx >= long(style.width) || ty >= long(style.height)) continue;
        out.image.at(std::size_t(tx), std::size_t(ty)) = cell.at(x, y);
      }
    }
  }
  return out;
}

// --- augmentation ---------------------------------------------------------

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.blur_sigma = c.noise = c.brightness = c.contrast = c.rotation_deg = c.shear_deg = {};
  return c;
}

void AugmentConfig::check() const {
  const std::pair<const char*, Range> ranges[] = {
      {"blur_sigma", blur_sigma}, {"noise", noise}, {"brightness", brightness},
      {"contrast", contrast}, {"rotation_deg", rotation_deg}, {"shear_deg", shear_deg}};
  for (const auto& [name, r] : ranges) {
    if (!(r.lo <= r.hi)) throw std::invalid_argument(std::string("augment: ") + name + " has lo > hi");
  }
  if (blur_sigma.lo < 0 || noise.lo < 0) {
    throw std::invalid_argument("augment: blur and noise ranges must be non-negative");
  }
  if (contrast.lo <= -1.0) throw std::invalid_argument("augment: contrast must stay above -1");
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const long radius = std::max(1L, long(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  for (long i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
  const double total = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= total;
  const long w = long(img.width), h = long(img.height);
  Image tmp(img.width, img.height, img.channels);
  Image out(img.width, img.height, img.channels);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i)
          acc += k[i + radius] * img.at(std::size_t(std::clamp(x + i, 0L, w - 1)), std::size_t(y), c);
        tmp.at(std::size_t(x), std::size_t(y), c) = acc;
      }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i)
          acc += k[i + radius] * tmp.at(std::size_t(x), std::size_t(std::clamp(y + i, 0L, h - 1)), c);
        out.at(std::size_t(x), std::size_t(y), c) = acc;
      }
  return out;
}

namespace {
double draw(const Range& r, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return r.lo + (r.hi - r.lo) * u;
}

constexpr double kDegree = std::numbers::pi / 180.0;

// Rotation and horizontal shear about the image centre.
AffineMatrix centred_jitter(const Image& img, double rotation_deg, double shear_deg) {
  const double cx = (double(img.width) - 1.0) / 2.0, cy = (double(img.height) - 1.0) / 2.0;
  const double cr = std::cos(rotation_deg * kDegree), sr = std::sin(rotation_deg * kDegree);
  const double sh = std::tan(shear_deg * kDegree);
  const AffineMatrix to_origin{1, 0, -cx, 0, 1, -cy};
  const AffineMatrix shear{1, sh, 0, 0, 1, 0};
  const AffineMatrix rotate{cr, -sr, 0, sr, cr, 0};
  const AffineMatrix back{1, 0, cx, 0, 1, cy};
  return compose(back, compose(rotate, compose(shear, to_origin)));
}
}  // namespace

Image augment(const Image& img, const AugmentConfig& config, std::mt19937_64& rng) {
  config.check();
  // Every parameter is drawn up front so the stream is consumed identically
  // whichever stages end up active.
  const double rotation = draw(config.rotation_deg, rng);
  const double shear = draw(config.shear_deg, rng);
  const double sigma = draw(config.blur_sigma, rng);
  const double brightness = draw(config.brightness, rng);
  const double contrast = draw(config.contrast, rng);
  const double noise = draw(config.noise, rng);
  const std::uint64_t noise_seed = rng();

  Image out = img;
  if (rotation != 0.0 || shear != 0.0) {
    out = warp_bilinear(out, centred_jitter(out, rotation, shear), out.width, out.height);
  }
  if (sigma > 0.0) out = gaussian_blur(out, sigma);
  if (brightness != 0.0 || contrast != 0.0) {
    for (double& v : out.pixels) v = std::clamp((v - 0.5) * (1.0 + contrast) + 0.5 + brightness, 0.0, 1.0);
  }
  if (noise > 0.0) {
    std::mt19937_64 noise_rng(noise_seed);
    std::normal_distribution<double> n(0.0, noise);
    for (double& v : out.pixels) v = std::clamp(v + n(noise_rng), 0.0, 1.0);
  }
  return out;
}

// --- recognizer input -----------------------------------------------------

Tensor to_two_channel(const Image& img) {
  if (img.empty()) throw std::invalid_argument("to_two_channel: empty image");
  constexpr std::size_t W = 128, H = 32;
  Image gray = resize_bilinear(to_gray(img), W, H);
  const auto [lo, hi] = std::minmax_element(gray.pixels.begin(), gray.pixels.end());
  const double min = *lo, range = *hi - *lo;
  if (range > 1e-6) {
    for (double& v : gray.pixels) v = (v - min) / range;
  } else {
    for (double& v : gray.pixels) v = std::clamp(v, 0.0, 1.0);
  }
  Tensor out({W, H, 2});
  // Largest Sobel magnitude for inputs in [0, 1] is 4 * sqrt(2).
  const double scale = 1.0 / (4.0 * std::numbers::sqrt2);
  auto g = [&](long x, long y) {
    return gray.at(std::size_t(std::clamp(x, 0L, long(W) - 1)),
                   std::size_t(std::clamp(y, 0L, long(H) - 1)));
  };
  for (long x = 0; x < long(W); ++x) {
    for (long y = 0; y < long(H); ++y) {
      const double gx = (g(x + 1, y - 1) + 2 * g(x + 1, y) + g(x + 1, y + 1)) -
                        (g(x - 1, y - 1) + 2 * g(x - 1, y) + g(x - 1, y + 1));
      const double gy = (g(x - 1, y + 1) + 2 * g(x, y + 1) + g(x + 1, y + 1)) -
                        (g(x - 1, y - 1) + 2 * g(x, y - 1) + g(x + 1, y - 1));
      out.at({std::size_t(x), std::size_t(y), 0}) = g(x, y);
      out.at({std::size_t(x), std::size_t(y), 1}) = std::min(1.0, std::hypot(gx, gy) * scale);
    }
  }
  return out;
}

// --- synthetic corpora ----------------------------------------------------

SynthPlate synthesize_plate(std::mt19937_64& rng, const GlyphSet& glyphs,
                            const SynthOptions& options) {
  SynthPlate out;
  out.label = fabricate_string(rng, options.fabricate);
  const auto& pairs = plate_color_pairs();
  const auto& colors = pairs[std::uniform_int_distribution<std::size_t>(0, pairs.size() - 1)(rng)];
  PlateStyle style;
  style.background = colors.first;
  style.foreground = colors.second;
  if (options.vary_layout) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    style.glyph_height = 22.0 + 3.0 * u(rng);
    style.glyph_aspect = 0.55 + 0.08 * u(rng);
    style.spacing = 3.0 + 1.5 * u(rng);
    style.x_offset = 6.0 * u(rng);
    style.y_offset = 2.0 * u(rng);
  }
  out.image = render_plate(out.label, glyphs, style).image;
  out.image = augment(out.image, options.augment, rng);
  return out;
}

TiltedPlate tilt_plate(const Image& plate, std::mt19937_64& rng, const TiltOptions& options) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double rotation = options.max_rotation_deg * u(rng);
  const double shear = options.max_shear_deg * u(rng);
  const double sx = 1.0 + options.max_scale_jitter * u(rng);
  const double sy = 1.0 + options.max_scale_jitter * u(rng);
  // Tilt about the plate centre, then fit the bounding box (plus margin)
  // into the 128x32 crop.
  AffineMatrix tilt = centred_jitter(plate, rotation, shear);
  tilt = compose(tilt, AffineMatrix{sx, 0, 0, 0, sy, 0});
  const Quad src = canonical_quad(plate.width, plate.height);
  Quad moved;
  double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
  for (std::size_t i = 0; i < 4; ++i) {
    moved[i] = tilt.apply(src[i]);
    min_x = std::min(min_x, moved[i].x);
    max_x = std::max(max_x, moved[i].x);
    min_y = std::min(min_y, moved[i].y);
    max_y = std::max(max_y, moved[i].y);
  }
  const double mx = options.margin * (max_x - min_x), my = options.margin * (max_y - min_y);
  min_x -= mx;
  max_x += mx;
  min_y -= my;
  max_y += my;
  const double W = 128.0, H = 32.0;
  const AffineMatrix to_crop{(W - 1) / (max_x - min_x), 0, -min_x * (W - 1) / (max_x - min_x),
                             0, (H - 1) / (max_y - min_y), -min_y * (H - 1) / (max_y - min_y)};
  const AffineMatrix full = compose(to_crop, tilt);

  TiltedPlate out;
  const double bg = 0.2 + 0.6 * (0.5 + 0.5 * u(rng));
  const Image warped = warp_bilinear(plate, full, 128, 32, Border::Constant, 0.0);
  // Warping an all-ones mask the same way gives the plate's (anti-aliased)
  // footprint, which blends the plate over a noisy backdrop.
  const Image alpha = warp_bilinear(Image(plate.width, plate.height, 1, 1.0), full, 128, 32,
                                    Border::Constant, 0.0);
  std::normal_distribution<double> clutter(0.0, 0.08);
  out.image = Image(128, 32, plate.channels);
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 128; ++x) {
      const double a = alpha.at(x, y);
      const double back = std::clamp(bg + clutter(rng), 0.0, 1.0);
      for (std::size_t c = 0; c < plate.channels; ++c) {
        // `warped` already carries the factor a from the zero fill.
        out.image.at(x, y, c) = warped.at(x, y, c) + (1.0 - a) * back;
      }
    }
  }
  for (std::size_t i = 0; i < 4; ++i) out.corners[i] = full.apply(src[i]);
  return out;
}

}  // namespace lpr
