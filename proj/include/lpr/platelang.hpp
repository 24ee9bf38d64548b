#pragma once

// Plate grammar, synthetic plate rendering, crop compositing and the
// augmentation pipeline that feeds training.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lpr/image.hpp"
#include "lpr/rectify.hpp"
#include "lpr/tensor.hpp"

namespace lpr {

// --- grammar --------------------------------------------------------------

/// Every legal template over 'A' (letter), 'N' (digit) and a literal dash,
/// in table order: four-, five-, six- then seven-character plates. Counts
/// exclude the dash.
const std::vector<std::string>& plate_templates();

/// Templates whose character count (dash excluded) equals `characters`.
std::vector<std::string> templates_with_length(std::size_t characters);

/// The unique template `text` matches positionally, or nullopt. Only
/// uppercase letters, digits and '-' can match.
std::optional<std::string> validate(std::string_view text);

struct PlateString {
  std::string text;
  std::string pattern;
};

struct FabricateOptions {
  std::vector<std::string> templates = plate_templates();
  std::string letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
  std::string digits = "0123456789";
  /// Letters drawn `rare_weight` times as often as the others.
  std::string rare_letters = "IO";
  double rare_weight = 5.0;
};

/// Uniform template, then weighted letters and uniform digits.
PlateString fabricate_string(std::mt19937_64& rng,
                             const FabricateOptions& options = {});

// --- glyphs and rendering -------------------------------------------------

class MissingGlyphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Glyph {
  Image coverage;        // one channel, 1 = ink
  std::size_t baseline;  // rows from the top to the baseline
};

class GlyphSet {
 public:
  /// 5x7 bitmap font covering A-Z, 0-9 and '-'.
  static GlyphSet builtin();
  /// Reads `<SYMBOL>.pgm` for every symbol in `symbols`; dark pixels are
  /// ink. Throws MissingGlyphError naming the first absent file.
  static GlyphSet load_directory(const std::filesystem::path& dir,
                                 std::string_view symbols);

  void set(char symbol, Glyph glyph);
  bool contains(char symbol) const { return glyphs_.count(symbol) > 0; }
  const Glyph& get(char symbol) const;
  std::string symbols() const;

 private:
  std::map<char, Glyph> glyphs_;
};

struct Rgb {
  double r = 0.0, g = 0.0, b = 0.0;
};

struct PlateStyle {
  Rgb background{1.0, 1.0, 1.0};
  Rgb foreground{0.0, 0.0, 0.0};
  std::size_t width = 128;
  std::size_t height = 32;
  double glyph_height = 22.0;
  double glyph_aspect = 0.55;  // glyph width / height
  double spacing = 3.0;
  double x_offset = 0.0;
  double y_offset = 0.0;
};

/// Background / character colour pairs seen on real plates: white, green,
/// yellow and red plates with black, white or red characters.
const std::vector<std::pair<Rgb, Rgb>>& plate_color_pairs();

struct GlyphPlacement {
  char symbol;
  double x, y, w, h;
};

struct RenderedPlate {
  Image image;  // RGB
  std::vector<GlyphPlacement> placements;
};

/// Throws MissingGlyphError for symbols absent from `glyphs`.
RenderedPlate render_plate(const PlateString& s, const GlyphSet& glyphs,
                           const PlateStyle& style = {});

// --- crop compositing -----------------------------------------------------

/// Pearson correlation of 16-bin grayscale histograms, negative values
/// clamped to 0: 1 for identical distributions.
double histogram_similarity(const Image& a, const Image& b);

struct CompositeResult {
  Image image;  // one channel
  std::vector<GlyphPlacement> placements;
  std::vector<std::size_t> chosen;  // candidate index per position
};

/// Builds a plate from real character crops. For each position the first
/// candidate whose similarity to the crops already placed is >= threshold
/// is kept; the first position takes its first candidate. Returns nullopt
/// when some position has no acceptable candidate.
std::optional<CompositeResult> composite_from_crops(
    const PlateString& s, const std::map<char, std::vector<Image>>& crops,
    double threshold = 0.5, const PlateStyle& style = {});

// --- augmentation ---------------------------------------------------------

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentConfig {
  Range blur_sigma{0.0, 1.5};    // pixels
  Range noise{0.0, 0.05};        // std of additive Gaussian noise
  Range brightness{-0.2, 0.2};   // additive offset
  Range contrast{-0.2, 0.2};     // relative gain change around mid-gray
  Range rotation_deg{-7.0, 7.0};
  Range shear_deg{-5.0, 5.0};
  std::uint64_t seed = 0;

  /// All ranges collapsed to zero: augment() returns its input.
  static AugmentConfig identity();
  /// Throws std::invalid_argument for lo > hi or negative blur/noise.
  void check() const;
};

/// Geometric jitter, Gaussian blur, brightness/contrast, then noise; a
/// stage whose sampled strength is zero is skipped entirely.
Image augment(const Image& img, const AugmentConfig& config, std::mt19937_64& rng);

Image gaussian_blur(const Image& img, double sigma);

// --- recognizer input -----------------------------------------------------

/// Resizes to 128x32 and returns (128, 32, 2): channel 0 is the contrast-
/// stretched grayscale, channel 1 the Sobel gradient magnitude scaled into
/// [0, 1].
Tensor to_two_channel(const Image& img);

// --- synthetic corpora ----------------------------------------------------

struct SynthOptions {
  FabricateOptions fabricate;
  /// Augmentation applied after rendering; identity disables it.
  AugmentConfig augment = AugmentConfig::identity();
  /// Jitter of glyph size and placement between samples.
  bool vary_layout = true;
};

struct SynthPlate {
  PlateString label;
  Image image;  // 128x32 RGB
};

SynthPlate synthesize_plate(std::mt19937_64& rng, const GlyphSet& glyphs,
                            const SynthOptions& options = {});

struct TiltOptions {
  double max_rotation_deg = 15.0;
  double max_shear_deg = 20.0;
  double max_scale_jitter = 0.1;
  /// Crop margin around the tilted plate, as a fraction of plate size.
  double margin = 0.08;
};

struct TiltedPlate {
  Image image;  // 128x32 crop around the tilted plate
  Quad corners; // plate corners in crop pixel coordinates
};

/// Places `plate` under a random rotation and shear inside a 128x32 crop
/// with a cluttered background, as an upstream detector would deliver it.
TiltedPlate tilt_plate(const Image& plate, std::mt19937_64& rng,
                       const TiltOptions& options = {});

}  // namespace lpr
