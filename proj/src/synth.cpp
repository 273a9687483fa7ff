#include "npseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "npseg/error.hpp"
#include "npseg/pyramid.hpp"
#include "npseg/tiling.hpp"

namespace npseg {

StainMatrix default_stain_matrix() {
  StainMatrix m;
  m.col(0) = Eigen::Vector3d(0.650, 0.704, 0.286).normalized();
  m.col(1) = Eigen::Vector3d(0.268, 0.570, 0.776).normalized();
  return m;
}

StainMatrix perturb_stain_matrix(const StainMatrix& m, double max_degrees, Rng& rng) {
  StainMatrix out = m;
  for (int k = 0; k < 2; ++k) {
    const Eigen::Vector3d c = m.col(k).normalized();
    for (int attempt = 0; attempt < 64; ++attempt) {
      Eigen::Vector3d r(rng.normal(), rng.normal(), rng.normal());
      Eigen::Vector3d t = r - r.dot(c) * c;
      if (t.norm() < 1e-9) continue;
      t.normalize();
      const double theta = max_degrees * rng.uniform() * std::numbers::pi / 180.0;
      const Eigen::Vector3d v = std::cos(theta) * c + std::sin(theta) * t;
      if (v.minCoeff() > 0.02) {
        out.col(k) = v.normalized();
        break;
      }
    }
  }
  return out;
}

namespace {

// Bilinear value noise in [0, 1] on a grid with the given cell size.
std::vector<float> value_noise(int width, int height, int cell, Rng& rng) {
  const int gw = width / cell + 2;
  const int gh = height / cell + 2;
  std::vector<double> grid(static_cast<std::size_t>(gw) * gh);
  for (auto& g : grid) g = rng.uniform();
  std::vector<float> out(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    const double fy = (y + 0.5) / cell;
    const int gy = static_cast<int>(fy);
    const double ty = fy - gy;
    for (int x = 0; x < width; ++x) {
      const double fx = (x + 0.5) / cell;
      const int gx = static_cast<int>(fx);
      const double tx = fx - gx;
      auto at = [&](int i, int j) { return grid[static_cast<std::size_t>(j) * gw + i]; };
      const double top = at(gx, gy) * (1 - tx) + at(gx + 1, gy) * tx;
      const double bottom = at(gx, gy + 1) * (1 - tx) + at(gx + 1, gy + 1) * tx;
      out[static_cast<std::size_t>(y) * width + x] = static_cast<float>(top * (1 - ty) + bottom * ty);
    }
  }
  return out;
}

std::uint8_t render_channel(double od, double io) {
  const double v = io * std::pow(10.0, -od) - 1.0;
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

double snap(double v) { return std::round(v * 8.0) / 8.0; }

std::string two_digit(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", i);
  return buf;
}

nlohmann::json matrix_json(const StainMatrix& m) {
  auto j = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 2; ++c) j.push_back(m(r, c));
  }
  return j;
}

}  // namespace

PolygonRoi random_star_polygon(Rng& rng, std::string roi_id, std::string wsi_id, double cx,
                               double cy, double min_radius, double max_radius) {
  PolygonRoi roi;
  roi.roi_id = std::move(roi_id);
  roi.wsi_id = std::move(wsi_id);
  roi.label = std::string(kPlaqueLabel);
  const int n = 8 + static_cast<int>(rng.below(9));
  const double base = rng.uniform(min_radius, max_radius);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    const double angle = phase + (i + 0.35 * rng.uniform()) * 2.0 * std::numbers::pi / n;
    const double r = base * rng.uniform(0.7, 1.0);
    roi.vertices.push_back({snap(cx + r * std::cos(angle)), snap(cy + r * std::sin(angle))});
  }
  if (signed_area(roi.vertices) < 0.0) std::reverse(roi.vertices.begin() + 1, roi.vertices.end());
  return roi;
}

RgbImage render_concentrations(const StainMatrix& stain_matrix, const Eigen::Matrix2Xd& c,
                               int width, int height, double io) {
  RgbImage out(width, height);
  for (Eigen::Index i = 0; i < c.cols(); ++i) {
    const Eigen::Vector3d od = stain_matrix * c.col(i);
    const auto base = static_cast<std::size_t>(i) * 3;
    for (int ch = 0; ch < 3; ++ch) out.data[base + ch] = render_channel(od[ch], io);
  }
  return out;
}

StainImage synthetic_stain_image(const StainMatrix& stain_matrix, int width, int height,
                                 std::uint64_t seed) {
  Rng rng(seed);
  const auto n = static_cast<Eigen::Index>(width) * height;
  Eigen::Matrix2Xd c(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = rng.uniform();
    double h = 0.0, d = 0.0;
    if (u < 0.15) {
      h = rng.uniform(0.0, 0.05);
      d = rng.uniform(0.0, 0.05);
    } else if (u < 0.40) {
      h = rng.uniform(0.3, 1.2);
    } else if (u < 0.65) {
      d = rng.uniform(0.3, 1.2);
    } else {
      h = rng.uniform(0.1, 1.0);
      d = rng.uniform(0.1, 1.0);
    }
    c(0, i) = h;
    c(1, i) = d;
  }
  return {render_concentrations(stain_matrix, c, width, height), c};
}

SynthCohort make_synthetic_cohort(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.n_wsis < 1 || spec.rois_per_wsi < 0 || spec.levels < 1 || spec.tile_size < 1 ||
      spec.level0_size < 64 || spec.min_radius <= 0 || spec.max_radius < spec.min_radius) {
    throw Error(ErrorCode::ConfigInvalid, "synthetic cohort spec out of range");
  }
  std::filesystem::create_directories(out_dir);

  Rng shift_rng(spec.seed ^ 0x5ca77e5ULL);
  const StainMatrix second = perturb_stain_matrix(spec.stain_matrix, spec.scanner_shift_degrees,
                                                  shift_rng);

  SynthCohort cohort;
  cohort.seed = spec.seed;
  const int size = spec.level0_size;
  for (int w = 0; w < spec.n_wsis; ++w) {
    Rng rng(spec.seed * 1000003ULL + static_cast<std::uint64_t>(w));
    SynthWsiTruth truth;
    truth.wsi_id = "wsi_" + two_digit(w);
    truth.scanner = w < (spec.n_wsis + 1) / 2 ? Scanner::NanoZoomer2RS : Scanner::NanoZoomerS60;
    truth.stain_matrix = truth.scanner == Scanner::NanoZoomer2RS ? spec.stain_matrix : second;

    WsiRecord wsi;
    wsi.wsi_id = truth.wsi_id;
    wsi.scanner = truth.scanner;
    wsi.resolution_nm_per_px = nominal_resolution_nm(truth.scanner);
    wsi.base_magnification = 40.0;
    for (int l = 0, s = size; l < spec.levels; ++l, s /= 2) wsi.level_dimensions.push_back({s, s});

    std::vector<PolygonRoi> rois;
    const double margin = spec.max_radius + 8.0;
    for (int attempt = 0; attempt < 2000 && static_cast<int>(rois.size()) < spec.rois_per_wsi;
         ++attempt) {
      const double cx = rng.uniform(margin, size - margin);
      const double cy = rng.uniform(margin, size - margin);
      bool clear = true;
      for (const auto& other : rois) {
        const Point oc = centroid(other);
        if (std::hypot(oc.x - cx, oc.y - cy) < 2.0 * spec.max_radius + 16.0) clear = false;
      }
      if (!clear) continue;
      rois.push_back(random_star_polygon(rng, truth.wsi_id + "_r" + two_digit(static_cast<int>(rois.size())),
                                         truth.wsi_id, cx, cy, spec.min_radius, spec.max_radius));
    }
    for (const auto& r : rois) truth.rois.push_back({r.roi_id, polygon_area(r)});

    // Concentration fields: patchy hematoxylin-stained tissue, DAB in plaques.
    const auto tissue = value_noise(size, size, 256, rng);
    const auto texture = value_noise(size, size, 16, rng);
    const auto plaque_texture = value_noise(size, size, 8, rng);
    const Mask plaques = rasterize_window(rois, wsi, 0, 0, 0, size, size);
    const auto n = static_cast<Eigen::Index>(size) * size;
    Eigen::Matrix2Xd c(2, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double presence = std::clamp((tissue[k] - 0.25) / 0.2, 0.0, 1.0);
      const double jitter = 0.04 * (rng.uniform() - 0.5);
      const double h = std::max(0.0, presence * (0.15 + 0.55 * texture[k]) + jitter);
      // Plaque cores displace tissue, so hematoxylin thins out where DAB peaks.
      c(0, i) = plaques.data[k] ? h * 0.6 * (1.0 - plaque_texture[k]) : h;
      c(1, i) = plaques.data[k] ? 0.45 + 0.6 * plaque_texture[k] : 0.02 * presence * texture[k];
    }

    const auto wsi_dir = out_dir / truth.wsi_id;
    std::filesystem::create_directories(wsi_dir);
    InMemoryPyramid pyramid(render_concentrations(truth.stain_matrix, c, size, size),
                            spec.levels);
    write_tiled_pyramid(wsi_dir, pyramid, spec.tile_size);
    {
      std::ofstream meta(wsi_dir / "slide.meta", std::ios::binary);
      meta << format_wsi_sidecar(wsi);
      std::ofstream xml(wsi_dir / "annotations.xml", std::ios::binary);
      xml << write_annotation_file(rois, truth.wsi_id);
      if (!meta || !xml) throw Error(ErrorCode::IoFailure, "cannot write " + wsi_dir.string());
    }
    truth.sidecar = std::filesystem::path(truth.wsi_id) / "slide.meta";
    truth.annotations = std::filesystem::path(truth.wsi_id) / "annotations.xml";
    cohort.wsis.push_back(std::move(truth));
  }

  std::ofstream out(out_dir / "cohort.json", std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write cohort.json");
  out << to_json(cohort).dump(2) << "\n";
  return cohort;
}

nlohmann::ordered_json to_json(const SynthCohort& cohort) {
  nlohmann::ordered_json j;
  j["seed"] = cohort.seed;
  j["wsis"] = nlohmann::ordered_json::array();
  for (const auto& w : cohort.wsis) {
    nlohmann::ordered_json jw;
    jw["wsi_id"] = w.wsi_id;
    jw["scanner"] = to_string(w.scanner);
    jw["sidecar"] = w.sidecar.generic_string();
    jw["annotations"] = w.annotations.generic_string();
    jw["stain_matrix"] = matrix_json(w.stain_matrix);
    jw["rois"] = nlohmann::ordered_json::array();
    for (const auto& r : w.rois) jw["rois"].push_back({{"roi_id", r.roi_id}, {"area", r.area}});
    j["wsis"].push_back(std::move(jw));
  }
  return j;
}

SynthCohort synth_cohort_from_json(const nlohmann::json& j) {
  try {
    SynthCohort cohort;
    cohort.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& jw : j.at("wsis")) {
      SynthWsiTruth w;
      w.wsi_id = jw.at("wsi_id").get<std::string>();
      w.scanner = scanner_from_string(jw.at("scanner").get<std::string>());
      w.sidecar = jw.at("sidecar").get<std::string>();
      w.annotations = jw.at("annotations").get<std::string>();
      const auto m = jw.at("stain_matrix").get<std::vector<double>>();
      if (m.size() != 6) throw Error(ErrorCode::ParseError, "stain_matrix needs 6 values");
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 2; ++c) w.stain_matrix(r, c) = m[static_cast<std::size_t>(r * 2 + c)];
      }
      for (const auto& jr : jw.at("rois")) {
        w.rois.push_back({jr.at("roi_id").get<std::string>(), jr.at("area").get<double>()});
      }
      cohort.wsis.push_back(std::move(w));
    }
    return cohort;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("cohort: ") + e.what());
  }
}

}  // namespace npseg
