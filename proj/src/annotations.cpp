#include "npseg/annotations.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "npseg/error.hpp"

namespace npseg {

namespace pt = boost::property_tree;

std::string_view to_string(Scanner scanner) {
  switch (scanner) {
    case Scanner::NanoZoomer2RS: return "NanoZoomer2RS";
    case Scanner::NanoZoomerS60: return "NanoZoomerS60";
  }
  return "unknown";
}

Scanner scanner_from_string(std::string_view name) {
  if (name == "NanoZoomer2RS") return Scanner::NanoZoomer2RS;
  if (name == "NanoZoomerS60") return Scanner::NanoZoomerS60;
  throw Error(ErrorCode::InvalidRecord, "unknown scanner '" + std::string(name) + "'");
}

double nominal_resolution_nm(Scanner scanner) {
  return scanner == Scanner::NanoZoomer2RS ? 227.0 : 221.0;
}

const LevelSize& WsiRecord::level(int level) const {
  if (!has_level(level)) {
    throw Error(ErrorCode::UnknownLevel,
                wsi_id + " has no level " + std::to_string(level) + " (levels: " +
                    std::to_string(level_count()) + ")");
  }
  return level_dimensions[static_cast<std::size_t>(level)];
}

void validate(const WsiRecord& wsi) {
  if (wsi.wsi_id.empty()) throw Error(ErrorCode::InvalidRecord, "empty wsi_id");
  if (wsi.level_dimensions.empty()) {
    throw Error(ErrorCode::InvalidRecord, wsi.wsi_id + ": no pyramid levels");
  }
  if (!(wsi.base_magnification > 0.0)) {
    throw Error(ErrorCode::InvalidRecord, wsi.wsi_id + ": base magnification must be positive");
  }
  for (std::size_t k = 0; k < wsi.level_dimensions.size(); ++k) {
    const auto& cur = wsi.level_dimensions[k];
    if (cur.width <= 0 || cur.height <= 0) {
      throw Error(ErrorCode::InvalidRecord,
                  wsi.wsi_id + ": level " + std::to_string(k) + " has non-positive size");
    }
    if (k == 0) continue;
    const auto& prev = wsi.level_dimensions[k - 1];
    // Each level halves the previous one, allowing odd-size rounding either way.
    const bool halving = std::abs(2 * cur.width - prev.width) <= 2 &&
                         std::abs(2 * cur.height - prev.height) <= 2 &&
                         cur.width < prev.width && cur.height < prev.height;
    if (!halving) {
      throw Error(ErrorCode::InvalidRecord, wsi.wsi_id + ": level " + std::to_string(k) +
                                                " is not a 2x reduction of level " +
                                                std::to_string(k - 1));
    }
  }
  if (wsi.resolution_nm_per_px && !(*wsi.resolution_nm_per_px > 0.0)) {
    throw Error(ErrorCode::InvalidRecord, wsi.wsi_id + ": resolution must be positive");
  }
  if (wsi.scanner && wsi.resolution_nm_per_px) {
    const double expected = nominal_resolution_nm(*wsi.scanner);
    if (std::abs(*wsi.resolution_nm_per_px - expected) > 1.0) {
      throw Error(ErrorCode::InvalidRecord,
                  wsi.wsi_id + ": resolution " + std::to_string(*wsi.resolution_nm_per_px) +
                      " nm/px inconsistent with scanner " +
                      std::string(to_string(*wsi.scanner)));
    }
  }
}

double downsample_x(const WsiRecord& wsi, int level) {
  return static_cast<double>(wsi.level(0).width) / wsi.level(level).width;
}

double downsample_y(const WsiRecord& wsi, int level) {
  return static_cast<double>(wsi.level(0).height) / wsi.level(level).height;
}

double magnification(const WsiRecord& wsi, int level) {
  return wsi.base_magnification / downsample_x(wsi, level);
}

int nearest_level(const WsiRecord& wsi, double target_magnification) {
  int best = 0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int k = 0; k < wsi.level_count(); ++k) {
    const double gap = std::abs(magnification(wsi, k) - target_magnification);
    if (gap < best_gap) {
      best_gap = gap;
      best = k;
    }
  }
  return best;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_double(std::string_view text, std::string_view what, ErrorCode code) {
  text = trim(text);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw Error(code, "invalid number '" + std::string(text) + "' for " + std::string(what));
  }
  return value;
}

int parse_int(std::string_view text, std::string_view what) {
  text = trim(text);
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::InvalidRecord,
                "invalid integer '" + std::string(text) + "' for " + std::string(what));
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

WsiRecord parse_wsi_sidecar(std::string_view text, const std::filesystem::path& image_path) {
  std::map<std::string, std::string, std::less<>> kv;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::InvalidRecord,
                  "sidecar line " + std::to_string(line_no) + ": expected key = value");
    }
    kv[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }

  auto require = [&](std::string_view key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw Error(ErrorCode::InvalidRecord, "sidecar missing key '" + std::string(key) + "'");
    }
    return it->second;
  };

  WsiRecord wsi;
  wsi.wsi_id = require("wsi_id");
  wsi.image_path = image_path;
  if (auto it = kv.find("scanner"); it != kv.end()) wsi.scanner = scanner_from_string(it->second);
  if (auto it = kv.find("resolution_nm_per_px"); it != kv.end()) {
    wsi.resolution_nm_per_px =
        parse_double(it->second, "resolution_nm_per_px", ErrorCode::InvalidRecord);
  }
  if (auto it = kv.find("base_magnification"); it != kv.end()) {
    wsi.base_magnification =
        parse_double(it->second, "base_magnification", ErrorCode::InvalidRecord);
  }
  const int level_count = parse_int(require("level_count"), "level_count");
  for (int k = 0; k < level_count; ++k) {
    const std::string key = "level_" + std::to_string(k);
    const std::string& dims = require(key);
    const auto x = dims.find('x');
    if (x == std::string::npos) {
      throw Error(ErrorCode::InvalidRecord, key + ": expected <width>x<height>");
    }
    wsi.level_dimensions.push_back(
        {parse_int(std::string_view(dims).substr(0, x), key),
         parse_int(std::string_view(dims).substr(x + 1), key)});
  }
  validate(wsi);
  return wsi;
}

std::string format_wsi_sidecar(const WsiRecord& wsi) {
  std::ostringstream out;
  out << "wsi_id = " << wsi.wsi_id << "\n";
  if (wsi.scanner) out << "scanner = " << to_string(*wsi.scanner) << "\n";
  if (wsi.resolution_nm_per_px) {
    out << "resolution_nm_per_px = " << format_double(*wsi.resolution_nm_per_px) << "\n";
  }
  out << "base_magnification = " << format_double(wsi.base_magnification) << "\n";
  out << "level_count = " << wsi.level_count() << "\n";
  for (int k = 0; k < wsi.level_count(); ++k) {
    out << "level_" << k << " = " << wsi.level(k).width << "x" << wsi.level(k).height << "\n";
  }
  return out.str();
}

WsiRecord read_wsi_sidecar(const std::filesystem::path& sidecar_path) {
  std::ifstream in(sidecar_path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + sidecar_path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_wsi_sidecar(ss.str(), sidecar_path.parent_path());
}

double signed_area(std::span<const Point> v) {
  double twice = 0.0;
  for (std::size_t i = 0, n = v.size(); i < n; ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * twice;
}

double polygon_area(const PolygonRoi& roi) {
  const double area = std::abs(signed_area(roi.vertices));
  if (roi.vertices.size() < 3 || area < kMinPolygonArea) {
    throw Error(ErrorCode::DegeneratePolygon, roi.roi_id + ": polygon has no area");
  }
  return area;
}

Point centroid(const PolygonRoi& roi) {
  const auto& v = roi.vertices;
  double cx = 0.0, cy = 0.0, twice = 0.0;
  for (std::size_t i = 0, n = v.size(); i < n; ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % n];
    const double cross = a.x * b.y - b.x * a.y;
    twice += cross;
    cx += (a.x + b.x) * cross;
    cy += (a.y + b.y) * cross;
  }
  if (std::abs(twice) < 2 * kMinPolygonArea) {
    throw Error(ErrorCode::DegeneratePolygon, roi.roi_id + ": centroid of zero-area polygon");
  }
  return {cx / (3.0 * twice), cy / (3.0 * twice)};
}

Bounds bounding_box(const PolygonRoi& roi) {
  Bounds b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
           -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const Point& p : roi.vertices) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

bool contains(std::span<const Point> v, Point p) {
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      const double x_cross = v[i].x + (p.y - v[i].y) * (v[j].x - v[i].x) / (v[j].y - v[i].y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

PolygonRoi scale_to_level(const PolygonRoi& roi, int from_level, int to_level,
                          const WsiRecord& wsi) {
  const LevelSize& from = wsi.level(from_level);
  const LevelSize& to = wsi.level(to_level);
  PolygonRoi out = roi;
  if (from_level == to_level) return out;
  const double fx = static_cast<double>(to.width) / from.width;
  const double fy = static_cast<double>(to.height) / from.height;
  for (Point& p : out.vertices) {
    p.x *= fx;
    p.y *= fy;
  }
  return out;
}

namespace {

std::string attr(const pt::ptree& node, const std::string& name) {
  return node.get<std::string>("<xmlattr>." + name, "");
}

PolygonRoi parse_roi(const pt::ptree& node, const WsiRecord& wsi, std::size_t ordinal) {
  PolygonRoi roi;
  roi.roi_id = attr(node, "id");
  if (roi.roi_id.empty()) {
    throw Error(ErrorCode::SchemaViolation,
                "Roi element #" + std::to_string(ordinal) + " has no id attribute");
  }
  roi.wsi_id = attr(node, "wsi");
  if (roi.wsi_id.empty()) roi.wsi_id = wsi.wsi_id;
  if (roi.wsi_id != wsi.wsi_id) {
    throw Error(ErrorCode::SchemaViolation, roi.roi_id + ": references wsi '" + roi.wsi_id +
                                                "' but file belongs to '" + wsi.wsi_id + "'");
  }
  roi.label = attr(node, "label");
  const std::string closed = attr(node, "closed");
  if (!closed.empty() && closed != "true" && closed != "false") {
    throw Error(ErrorCode::SchemaViolation, roi.roi_id + ": closed must be true or false");
  }
  roi.closed = closed != "false";

  const auto vertices = node.get_child_optional("Vertices");
  if (!vertices) {
    throw Error(ErrorCode::SchemaViolation, roi.roi_id + ": missing Vertices element");
  }
  for (const auto& [tag, v] : *vertices) {
    if (tag != "Vertex") continue;
    const std::string x = attr(v, "x");
    const std::string y = attr(v, "y");
    if (x.empty() || y.empty()) {
      throw Error(ErrorCode::SchemaViolation, roi.roi_id + ": Vertex without x/y");
    }
    roi.vertices.push_back({parse_double(x, roi.roi_id + " vertex x", ErrorCode::SchemaViolation),
                            parse_double(y, roi.roi_id + " vertex y", ErrorCode::SchemaViolation)});
  }
  // An explicit closing vertex repeating the first one is accepted and dropped.
  if (roi.vertices.size() > 3 && roi.vertices.front() == roi.vertices.back()) {
    roi.vertices.pop_back();
  }
  if (roi.vertices.size() < 3) {
    throw Error(ErrorCode::SchemaViolation,
                roi.roi_id + ": " + std::to_string(roi.vertices.size()) +
                    " vertices, at least 3 required");
  }
  for (std::size_t i = 0; i < roi.vertices.size(); ++i) {
    if (roi.vertices[i] == roi.vertices[(i + 1) % roi.vertices.size()]) {
      throw Error(ErrorCode::SchemaViolation,
                  roi.roi_id + ": repeated consecutive vertex at index " + std::to_string(i));
    }
  }
  const LevelSize& extent = wsi.level(0);
  for (const Point& p : roi.vertices) {
    if (p.x < 0.0 || p.y < 0.0 || p.x > extent.width || p.y > extent.height) {
      throw Error(ErrorCode::OutOfBounds,
                  roi.roi_id + ": vertex (" + format_double(p.x) + ", " + format_double(p.y) +
                      ") outside level-0 extent " + std::to_string(extent.width) + "x" +
                      std::to_string(extent.height));
    }
  }
  const double area = signed_area(roi.vertices);
  if (std::abs(area) < kMinPolygonArea) {
    throw Error(ErrorCode::DegeneratePolygon, roi.roi_id + ": polygon has no area");
  }
  if (area < 0.0) std::reverse(roi.vertices.begin() + 1, roi.vertices.end());
  return roi;
}

}  // namespace

std::vector<PolygonRoi> parse_annotation_file(std::string_view xml_text, const WsiRecord& wsi) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(xml_text)};
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw Error(ErrorCode::MalformedXml, e.what());
  }
  const auto root = tree.get_child_optional("AnnotationSet");
  if (!root) throw Error(ErrorCode::SchemaViolation, "root element must be AnnotationSet");
  const std::string file_wsi = attr(*root, "wsi_id");
  if (!file_wsi.empty() && file_wsi != wsi.wsi_id) {
    throw Error(ErrorCode::SchemaViolation,
                "annotation file is for '" + file_wsi + "', expected '" + wsi.wsi_id + "'");
  }

  std::vector<PolygonRoi> rois;
  std::set<std::string> seen;
  for (const auto& [tag, node] : *root) {
    if (tag != "Roi") continue;
    PolygonRoi roi = parse_roi(node, wsi, rois.size());
    if (!seen.insert(roi.roi_id).second) {
      throw Error(ErrorCode::SchemaViolation, "duplicate roi id '" + roi.roi_id + "'");
    }
    rois.push_back(std::move(roi));
  }
  return rois;
}

std::vector<PolygonRoi> read_annotation_file(const std::filesystem::path& path,
                                             const WsiRecord& wsi) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_annotation_file(ss.str(), wsi);
}

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string write_annotation_file(std::span<const PolygonRoi> rois, std::string_view wsi_id) {
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<AnnotationSet version=\"1\" wsi_id=\"" << xml_escape(wsi_id) << "\">\n";
  for (const PolygonRoi& roi : rois) {
    out << "  <Roi id=\"" << xml_escape(roi.roi_id) << "\" wsi=\"" << xml_escape(roi.wsi_id)
        << "\" label=\"" << xml_escape(roi.label) << "\" closed=\""
        << (roi.closed ? "true" : "false") << "\">\n";
    out << "    <Vertices>\n";
    for (const Point& p : roi.vertices) {
      out << "      <Vertex x=\"" << format_double(p.x) << "\" y=\"" << format_double(p.y)
          << "\"/>\n";
    }
    out << "    </Vertices>\n";
    out << "  </Roi>\n";
  }
  out << "</AnnotationSet>\n";
  return out.str();
}

}  // namespace npseg
