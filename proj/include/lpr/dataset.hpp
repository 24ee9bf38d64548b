#pragma once

// Tab-separated manifests, one image per line:
//
//   image<TAB>label[<TAB>x1 y1 x2 y2 x3 y3 x4 y4][<TAB>group]
//
// Corners are pixel coordinates ordered TL, TR, BR, BL. A third field with
// internal spaces is read as corners, a single token as the group id. Blank
// lines and lines starting with '#' are skipped. Relative image paths are
// resolved against the manifest's directory.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpr/image.hpp"
#include "lpr/rectify.hpp"

namespace lpr {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  std::filesystem::path image;
  std::string label;  // may be empty for unlabeled data
  std::optional<Quad> corners;
  std::optional<std::string> group;
  bool label_valid = false;  // label matches a plate template
  std::size_t line = 0;
};

std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                          const std::filesystem::path& base_dir,
                                          const std::string& source = "manifest");
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

std::string format_manifest_line(const ManifestEntry& entry,
                                 const std::filesystem::path& base_dir);
/// Writes atomically (temporary file, then rename).
void write_manifest(const std::vector<ManifestEntry>& entries,
                    const std::filesystem::path& path);

}  // namespace lpr
