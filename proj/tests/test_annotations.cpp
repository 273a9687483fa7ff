#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "npseg/error.hpp"
#include "support.hpp"

using namespace npseg;
using namespace npseg::testing;

namespace {

std::string roi_xml(const std::string& id, const std::vector<Point>& v,
                    const std::string& extra = "") {
  std::string s = "<Roi id=\"" + id + "\" label=\"neuritic_plaque\"" + extra + "><Vertices>";
  for (const auto& p : v) {
    s += "<Vertex x=\"" + std::to_string(p.x) + "\" y=\"" + std::to_string(p.y) + "\"/>";
  }
  return s + "</Vertices></Roi>";
}

std::string doc(const std::string& body, const std::string& wsi = "S1") {
  return "<AnnotationSet version=\"1\" wsi_id=\"" + wsi + "\">" + body + "</AnnotationSet>";
}

}  // namespace

TEST_SUITE("annotations") {

TEST_CASE("parses rois and orients them counter-clockwise") {
  const WsiRecord wsi = make_wsi("S1", 1000, 800, 3);
  // Second ROI is clockwise and carries an explicit closing vertex.
  const auto rois = parse_annotation_file(
      doc(roi_xml("a", {{10, 10}, {50, 10}, {50, 40}}) +
          roi_xml("b", {{100, 100}, {100, 200}, {200, 200}, {200, 100}, {100, 100}})),
      wsi);
  REQUIRE(rois.size() == 2);
  CHECK(rois[0].roi_id == "a");
  CHECK(rois[0].wsi_id == "S1");
  CHECK(rois[1].vertices.size() == 4);
  CHECK(rois[1].vertices.front() == Point{100, 100});
  for (const auto& r : rois) CHECK(signed_area(r.vertices) > 0.0);
  CHECK(polygon_area(rois[1]) == doctest::Approx(10000.0));
}

TEST_CASE("malformed and schema-violating files are rejected") {
  const WsiRecord wsi = make_wsi("S1", 1000, 800, 3);
  const std::vector<Point> tri{{10, 10}, {50, 10}, {50, 40}};
  CHECK(error_code([&] { parse_annotation_file("<AnnotationSet><Roi", wsi); }) ==
        ErrorCode::MalformedXml);
  CHECK(error_code([&] { parse_annotation_file("<Other/>", wsi); }) == ErrorCode::SchemaViolation);
  CHECK(error_code([&] { parse_annotation_file(doc(roi_xml("", tri)), wsi); }) ==
        ErrorCode::SchemaViolation);
  CHECK(error_code([&] { parse_annotation_file(doc(roi_xml("a", tri), "S2"), wsi); }) ==
        ErrorCode::SchemaViolation);
  CHECK(error_code([&] { parse_annotation_file(doc(roi_xml("a", {{1, 1}, {2, 2}})), wsi); }) ==
        ErrorCode::SchemaViolation);
  CHECK(error_code([&] {
          parse_annotation_file(doc(roi_xml("a", tri) + roi_xml("a", tri)), wsi);
        }) == ErrorCode::SchemaViolation);
  CHECK(error_code([&] {
          parse_annotation_file(doc(roi_xml("a", {{1, 1}, {1, 1}, {5, 1}, {5, 5}})), wsi);
        }) == ErrorCode::SchemaViolation);
  CHECK(error_code([&] {
          parse_annotation_file(doc("<Roi id=\"a\"><Vertex x=\"1\" y=\"1\"/></Roi>"), wsi);
        }) == ErrorCode::SchemaViolation);
  CHECK(error_code([&] {
          parse_annotation_file(doc(roi_xml("a", tri, " wsi=\"other\"")), wsi);
        }) == ErrorCode::SchemaViolation);
}

TEST_CASE("out-of-bounds vertex names the roi") {
  const WsiRecord wsi = make_wsi("S1", 1000, 800, 3);
  try {
    parse_annotation_file(doc(roi_xml("far_away", {{10, 10}, {1001, 10}, {50, 40}})), wsi);
    FAIL("expected OutOfBounds");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OutOfBounds);
    CHECK(std::string(e.what()).find("far_away") != std::string::npos);
  }
  // The extent itself is inclusive.
  CHECK_NOTHROW(parse_annotation_file(doc(roi_xml("edge", {{0, 0}, {1000, 0}, {1000, 800}})), wsi));
}

TEST_CASE("collinear polygon is degenerate") {
  const WsiRecord wsi = make_wsi("S1", 1000, 800, 3);
  CHECK(error_code([&] {
          parse_annotation_file(doc(roi_xml("line", {{0, 0}, {10, 10}, {20, 20}})), wsi);
        }) == ErrorCode::DegeneratePolygon);
  CHECK(error_code([&] { polygon_area(make_roi("z", "S1", {{0, 0}, {1, 1}, {2, 2}})); }) ==
        ErrorCode::DegeneratePolygon);
}

TEST_CASE("write then parse is the identity on canonical rois") {
  const WsiRecord wsi = make_wsi("S1", 4000, 4000, 3);
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PolygonRoi> rois;
    const int n = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n; ++i) {
      auto v = star_vertices(rng, rng.uniform(200, 3800), rng.uniform(200, 3800), 20, 150,
                             3 + static_cast<int>(rng.below(20)));
      if (signed_area(v) < 0) std::reverse(v.begin() + 1, v.end());
      auto roi = make_roi("r" + std::to_string(i) + (i % 2 ? "&<\"" : ""), "S1", v);
      roi.closed = rng.uniform() < 0.8;
      rois.push_back(roi);
    }
    const auto parsed = parse_annotation_file(write_annotation_file(rois, "S1"), wsi);
    REQUIRE(parsed == rois);
  }
}

TEST_CASE("shoelace area matches a Monte-Carlo estimate") {
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const auto v = star_vertices(rng, 0, 0, 30, 100, 12);
    const PolygonRoi roi = make_roi("mc", "S", v);
    const Bounds b = bounding_box(roi);
    const int samples = 1'000'000;
    int hits = 0;
    for (int i = 0; i < samples; ++i) {
      const Point p{rng.uniform(b.x0, b.x1), rng.uniform(b.y0, b.y1)};
      if (inside_winding(v, p)) ++hits;
    }
    const double estimate = b.width() * b.height() * hits / samples;
    CHECK(std::abs(estimate - polygon_area(roi)) / polygon_area(roi) < 0.005);
  }
}

TEST_CASE("area properties: translation, scaling, reversal") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    auto v = star_vertices(rng, 0, 0, 5, 60, 3 + static_cast<int>(rng.below(15)));
    const double area = polygon_area(make_roi("p", "S", v));
    CHECK(area == doctest::Approx(trapezoid_area(v)).epsilon(1e-12));

    const double dx = rng.uniform(-1000, 1000), dy = rng.uniform(-1000, 1000);
    auto moved = v;
    for (auto& p : moved) p = {p.x + dx, p.y + dy};
    CHECK(polygon_area(make_roi("p", "S", moved)) == doctest::Approx(area).epsilon(1e-9));

    const double k = rng.uniform(0.1, 10);
    auto scaled = v;
    for (auto& p : scaled) p = {p.x * k, p.y * k};
    CHECK(polygon_area(make_roi("p", "S", scaled)) == doctest::Approx(area * k * k).epsilon(1e-9));

    auto reversed = v;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(signed_area(reversed) == doctest::Approx(-signed_area(v)));
  }
}

TEST_CASE("contains agrees with a winding-number oracle on simple polygons") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = star_vertices(rng, 0, 0, 10, 50, 3 + static_cast<int>(rng.below(12)));
    for (int i = 0; i < 200; ++i) {
      const Point p{rng.uniform(-60, 60), rng.uniform(-60, 60)};
      REQUIRE(contains(v, p) == inside_winding(v, p));
    }
  }
}

TEST_CASE("centroid of a rectangle is its centre") {
  const Point c = centroid(rect_roi("r", "S", 10, 20, 30, 60));
  CHECK(c.x == doctest::Approx(20));
  CHECK(c.y == doctest::Approx(40));
}

TEST_CASE("scale_to_level uses per-axis level ratios") {
  WsiRecord wsi = make_wsi("S", 1001, 600, 3);
  const auto roi = rect_roi("r", "S", 100, 100, 200, 300);
  const auto l1 = scale_to_level(roi, 0, 1, wsi);
  CHECK(l1.vertices[1].x == doctest::Approx(200.0 * 500 / 1001));
  CHECK(l1.vertices[2].y == doctest::Approx(150));
  CHECK(scale_to_level(roi, 1, 1, wsi) == roi);
  const auto back = scale_to_level(l1, 1, 0, wsi);
  for (std::size_t i = 0; i < roi.vertices.size(); ++i) {
    CHECK(back.vertices[i].x == doctest::Approx(roi.vertices[i].x));
    CHECK(back.vertices[i].y == doctest::Approx(roi.vertices[i].y));
  }
  CHECK(error_code([&] { scale_to_level(roi, 0, 5, wsi); }) == ErrorCode::UnknownLevel);
}

}  // TEST_SUITE

TEST_SUITE("wsi") {

TEST_CASE("sidecar round trip") {
  const WsiRecord wsi = make_wsi("slide-7", 4097, 3001, 4, Scanner::NanoZoomerS60);
  const auto parsed = parse_wsi_sidecar(format_wsi_sidecar(wsi), "/data/slide-7");
  WsiRecord expected = wsi;
  expected.image_path = "/data/slide-7";
  CHECK(parsed == expected);

  ScratchDir dir("sidecar");
  {
    std::ofstream out(dir / "slide.meta");
    out << "# comment\n" << format_wsi_sidecar(wsi);
  }
  const auto read = read_wsi_sidecar(dir / "slide.meta");
  CHECK(read.image_path == dir.path());
  CHECK(read.level_dimensions == wsi.level_dimensions);
}

TEST_CASE("validation rejects broken pyramids and scanner mismatches") {
  WsiRecord wsi = make_wsi("S", 1000, 1000, 3);
  CHECK_NOTHROW(validate(wsi));

  WsiRecord bad = wsi;
  bad.level_dimensions[2] = {300, 250};
  CHECK(error_code([&] { validate(bad); }) == ErrorCode::InvalidRecord);

  bad = wsi;
  bad.resolution_nm_per_px = 221.0;  // S60 pitch on a 2.0-RS record
  CHECK(error_code([&] { validate(bad); }) == ErrorCode::InvalidRecord);

  bad = wsi;
  bad.level_dimensions.clear();
  CHECK(error_code([&] { validate(bad); }) == ErrorCode::InvalidRecord);

  CHECK(error_code([&] { parse_wsi_sidecar("wsi_id = x\n", ""); }) == ErrorCode::InvalidRecord);
  CHECK(error_code([&] {
          parse_wsi_sidecar("wsi_id = x\nscanner = Aperio\nlevel_count = 1\nlevel_0 = 4x4\n", "");
        }) == ErrorCode::InvalidRecord);
}

TEST_CASE("nearest level to the working magnification") {
  WsiRecord wsi = make_wsi("S", 8192, 8192, 4);
  CHECK(nearest_level(wsi, 20.0) == 1);
  CHECK(nearest_level(wsi, 40.0) == 0);
  CHECK(nearest_level(wsi, 7.0) == 3);
  // 30x is equidistant from 40x and 20x; the finer level wins.
  CHECK(nearest_level(wsi, 30.0) == 0);
  CHECK(magnification(wsi, 2) == doctest::Approx(10.0));
  CHECK(error_code([&] { wsi.level(4); }) == ErrorCode::UnknownLevel);
}

}  // TEST_SUITE
