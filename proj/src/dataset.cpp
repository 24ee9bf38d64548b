#include "lpr/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lpr/platelang.hpp"

namespace lpr {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

Quad parse_corners(const std::string& field, const std::string& where) {
  std::istringstream in(field);
  std::vector<double> v;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ManifestError(where + ": corner coordinate '" + tok + "' is not a number");
    }
  }
  if (v.size() != 8) {
    throw ManifestError(where + ": expected 8 corner coordinates, got " + std::to_string(v.size()));
  }
  Quad q{Point{v[0], v[1]}, Point{v[2], v[3]}, Point{v[4], v[5]}, Point{v[6], v[7]}};
  if (std::abs(quad_area(q)) <= 1e-9) throw ManifestError(where + ": corner quad is degenerate");
  return q;
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                          const std::filesystem::path& base_dir,
                                          const std::string& source) {
  std::vector<ManifestEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(number);
    const std::vector<std::string> f = split_tabs(line);
    if (f.size() > 4) throw ManifestError(where + ": too many fields (" + std::to_string(f.size()) + ")");
    if (f[0].empty()) throw ManifestError(where + ": empty image path");
    ManifestEntry e;
    e.line = number;
    e.image = std::filesystem::path(f[0]);
    if (e.image.is_relative()) e.image = base_dir / e.image;
    if (f.size() > 1) e.label = f[1];
    e.label_valid = !e.label.empty() && validate(e.label).has_value();
    if (f.size() == 3) {
      if (f[2].find(' ') != std::string::npos)
        e.corners = parse_corners(f[2], where);
      else if (!f[2].empty())
        e.group = f[2];
    } else if (f.size() == 4) {
      if (!f[2].empty()) e.corners = parse_corners(f[2], where);
      if (!f[3].empty()) e.group = f[3];
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_manifest(text.str(), path.parent_path(), path.string());
}

std::string format_manifest_line(const ManifestEntry& e, const std::filesystem::path& base_dir) {
  std::ostringstream out;
  out.precision(9);
  std::filesystem::path image = e.image;
  if (!base_dir.empty() && image.is_absolute() == base_dir.is_absolute()) {
    const auto rel = image.lexically_relative(base_dir);
    if (!rel.empty() && *rel.begin() != "..") image = rel;
  }
  out << image.generic_string() << '\t' << e.label;
  if (e.corners) {
    out << '\t';
    for (std::size_t i = 0; i < 4; ++i) {
      out << (i ? " " : "") << (*e.corners)[i].x << ' ' << (*e.corners)[i].y;
    }
  }
  if (e.group) out << (e.corners ? "\t" : "\t\t") << *e.group;
  return out.str();
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ManifestError("cannot write manifest " + tmp.string());
    for (const ManifestEntry& e : entries) out << format_manifest_line(e, path.parent_path()) << '\n';
    if (!out) throw ManifestError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace lpr
