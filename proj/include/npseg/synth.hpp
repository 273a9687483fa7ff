#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "npseg/annotations.hpp"
#include "npseg/image.hpp"
#include "npseg/rng.hpp"
#include "npseg/stain.hpp"

namespace npseg {

// Reference two-stain matrix used when a spec does not supply one.
StainMatrix default_stain_matrix();

// Rotates each column of `m` by up to `max_degrees` in a random direction and
// renormalises, keeping entries positive.
StainMatrix perturb_stain_matrix(const StainMatrix& m, double max_degrees, Rng& rng);

struct SynthSpec {
  int n_wsis = 8;
  int rois_per_wsi = 6;
  int level0_size = 2048;
  int levels = 3;
  int tile_size = 256;
  StainMatrix stain_matrix = default_stain_matrix();
  // The second scanner's slides use a deterministically perturbed matrix so
  // the cohort has a visible scanner-dependent colour shift.
  double scanner_shift_degrees = 4.0;
  double min_radius = 40.0;  // level-0 px
  double max_radius = 100.0;
  std::uint64_t seed = 0;
};

struct SynthRoiTruth {
  std::string roi_id;
  double area = 0.0;  // level-0 px^2
};

struct SynthWsiTruth {
  std::string wsi_id;
  Scanner scanner = Scanner::NanoZoomer2RS;
  std::filesystem::path sidecar;      // relative to the cohort dir
  std::filesystem::path annotations;  // relative to the cohort dir
  StainMatrix stain_matrix = StainMatrix::Zero();
  std::vector<SynthRoiTruth> rois;
};

struct SynthCohort {
  std::uint64_t seed = 0;
  std::vector<SynthWsiTruth> wsis;
};

// Writes <out>/<wsi_id>/{slide.meta, tiles.meta, level_k/, annotations.xml}
// and <out>/cohort.json. Slides alternate evenly between the two scanners:
// the first half NanoZoomer2RS, the second half NanoZoomerS60.
SynthCohort make_synthetic_cohort(const SynthSpec& spec, const std::filesystem::path& out_dir);

nlohmann::ordered_json to_json(const SynthCohort& cohort);
SynthCohort synth_cohort_from_json(const nlohmann::json& j);

// Star-shaped (hence simple) polygon around (cx, cy).
PolygonRoi random_star_polygon(Rng& rng, std::string roi_id, std::string wsi_id, double cx,
                               double cy, double min_radius, double max_radius);

// A small Beer-Lambert image with known stain matrix. Pixels mix pure-stain,
// two-stain and near-white background populations.
struct StainImage {
  RgbImage image;
  Eigen::Matrix2Xd concentrations;
};

StainImage synthetic_stain_image(const StainMatrix& stain_matrix, int width, int height,
                                 std::uint64_t seed);

// Renders concentrations through a stain matrix: I = io * 10^-(S c) - 1.
RgbImage render_concentrations(const StainMatrix& stain_matrix, const Eigen::Matrix2Xd& c,
                               int width, int height, double io = 255.0);

}  // namespace npseg
