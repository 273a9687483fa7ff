#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace npseg {

enum class Scanner { NanoZoomer2RS, NanoZoomerS60 };

std::string_view to_string(Scanner scanner);
Scanner scanner_from_string(std::string_view name);
// Nominal level-0 pixel pitch of each scanner model, in nanometres.
double nominal_resolution_nm(Scanner scanner);

struct LevelSize {
  int width = 0;
  int height = 0;
  bool operator==(const LevelSize&) const = default;
};

// Metadata for one whole-slide image pyramid. Level 0 is full resolution.
struct WsiRecord {
  std::string wsi_id;
  std::filesystem::path image_path;
  std::optional<Scanner> scanner;
  std::optional<double> resolution_nm_per_px;
  double base_magnification = 40.0;
  std::vector<LevelSize> level_dimensions;

  int level_count() const { return static_cast<int>(level_dimensions.size()); }
  bool has_level(int level) const { return level >= 0 && level < level_count(); }
  const LevelSize& level(int level) const;

  bool operator==(const WsiRecord&) const = default;
};

// Throws InvalidRecord when the pyramid is not halving per level or the
// scanner model and pixel pitch disagree.
void validate(const WsiRecord& wsi);

// Level-0 pixels per level pixel along each axis.
double downsample_x(const WsiRecord& wsi, int level);
double downsample_y(const WsiRecord& wsi, int level);
double magnification(const WsiRecord& wsi, int level);
// Level whose magnification is nearest the target (ties go to the finer level).
int nearest_level(const WsiRecord& wsi, double target_magnification = 20.0);

// Key-value sidecar ("key = value" per line, '#' comments). Level sizes are
// written as level_<k> = <width>x<height>.
WsiRecord parse_wsi_sidecar(std::string_view text, const std::filesystem::path& image_path);
std::string format_wsi_sidecar(const WsiRecord& wsi);
WsiRecord read_wsi_sidecar(const std::filesystem::path& sidecar_path);

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct Bounds {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

struct PolygonRoi {
  std::string roi_id;
  std::string wsi_id;
  std::string label;
  std::vector<Point> vertices;
  bool closed = true;

  bool operator==(const PolygonRoi&) const = default;
};

inline constexpr std::string_view kPlaqueLabel = "neuritic_plaque";
inline constexpr double kMinPolygonArea = 1e-9;

// Parses the AnnotationSet schema (see docs/annotation_schema.md). Every ROI
// is validated against the WSI's level-0 extent and returned with positive
// signed area (counter-clockwise in a y-up frame).
std::vector<PolygonRoi> parse_annotation_file(std::string_view xml_text, const WsiRecord& wsi);
std::vector<PolygonRoi> read_annotation_file(const std::filesystem::path& path,
                                             const WsiRecord& wsi);

// Emits the same schema; parse(write(rois)) == rois for canonical ROIs.
std::string write_annotation_file(std::span<const PolygonRoi> rois, std::string_view wsi_id);

double signed_area(std::span<const Point> vertices);
// Shoelace magnitude in level-0 px^2. Throws DegeneratePolygon below kMinPolygonArea.
double polygon_area(const PolygonRoi& roi);
Point centroid(const PolygonRoi& roi);
Bounds bounding_box(const PolygonRoi& roi);
// Even-odd rule.
bool contains(std::span<const Point> vertices, Point p);

PolygonRoi scale_to_level(const PolygonRoi& roi, int from_level, int to_level,
                          const WsiRecord& wsi);

}  // namespace npseg
