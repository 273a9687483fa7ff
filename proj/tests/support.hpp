#pragma once

// Shared helpers for the unit and acceptance suites: scratch directories,
// generators, and brute-force oracles that share no code with the library.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <unistd.h>

#include "npseg/annotations.hpp"
#include "npseg/error.hpp"
#include "npseg/image.hpp"
#include "npseg/rng.hpp"

namespace npseg::testing {

// Code of the npseg::Error thrown by fn, or nullopt if it returns normally.
template <typename Fn>
std::optional<ErrorCode> error_code(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("npseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// A simple record whose levels halve exactly.
inline WsiRecord make_wsi(const std::string& id, int width, int height, int levels,
                          Scanner scanner = Scanner::NanoZoomer2RS) {
  WsiRecord w;
  w.wsi_id = id;
  w.scanner = scanner;
  w.resolution_nm_per_px = nominal_resolution_nm(scanner);
  w.base_magnification = 40.0;
  for (int k = 0; k < levels; ++k) {
    w.level_dimensions.push_back({width, height});
    width /= 2;
    height /= 2;
  }
  return w;
}

inline PolygonRoi make_roi(const std::string& id, const std::string& wsi,
                           std::vector<Point> vertices) {
  return PolygonRoi{id, wsi, "neuritic_plaque", std::move(vertices), true};
}

inline PolygonRoi rect_roi(const std::string& id, const std::string& wsi, double x0, double y0,
                           double x1, double y1) {
  return make_roi(id, wsi, {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
}

// Star-shaped polygon: monotone angles around a centre, so always simple.
inline std::vector<Point> star_vertices(Rng& rng, double cx, double cy, double r_min, double r_max,
                                        int n) {
  std::vector<Point> v;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    const double a = phase + (i + 0.4 * rng.uniform()) * 2.0 * std::numbers::pi / n;
    const double r = rng.uniform(r_min, r_max);
    v.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return v;
}

// Winding-number point test; independent of the library's crossing test.
inline bool inside_winding(const std::vector<Point>& v, Point p) {
  int wn = 0;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = v[i];
    const Point b = v[(i + 1) % n];
    const double cross = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
    if (a.y <= p.y) {
      if (b.y > p.y && cross > 0) ++wn;
    } else {
      if (b.y <= p.y && cross < 0) --wn;
    }
  }
  return wn != 0;
}

// Trapezoid-sum area, written independently of the shoelace helper.
inline double trapezoid_area(const std::vector<Point>& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point a = v[i];
    const Point b = v[(i + 1) % v.size()];
    s += (b.x - a.x) * (b.y + a.y);
  }
  return std::abs(s) / 2.0;
}

inline Mask random_mask(Rng& rng, int w, int h, double density) {
  Mask m(w, h);
  for (auto& px : m.data) px = rng.uniform() < density ? 1 : 0;
  return m;
}

inline RgbImage random_image(Rng& rng, int w, int h) {
  RgbImage img(w, h);
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

}  // namespace npseg::testing
