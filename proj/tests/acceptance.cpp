// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fault_suite.hpp"
#include "fixtures/published_tables.hpp"
#include "npseg/augmentation.hpp"
#include "npseg/digest.hpp"
#include "npseg/metrics.hpp"
#include "npseg/pipeline.hpp"
#include "npseg/stain.hpp"
#include "npseg/synth.hpp"
#include "support.hpp"

using namespace npseg;
using namespace npseg::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double time_limit_s;  // <= 0: no limit
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome aggregation_oracle() {
  int cells = 0, bad = 0;
  double worst = 0;
  for (const auto& t : fixtures::published_tables()) {
    std::vector<MetricsRecord> recs;
    for (const auto& row : t.folds) {
      MetricsRecord r{std::string(row.label), {row.values[0], row.values[1], row.values[2], row.values[3]},
                      std::nullopt};
      if (t.with_test) r.test = Scores{row.values[4], row.values[5], row.values[6], row.values[7]};
      recs.push_back(r);
    }
    const auto stats = aggregate_records(recs);
    const auto names = column_names(t.with_test);
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto& c = stats.column(names[k]);
      const double got[4] = {c.mean, c.std, c.max, c.min};
      for (int s = 0; s < 4; ++s) {
        const double err = std::abs(got[s] - t.summary[static_cast<std::size_t>(s)].values[k]);
        worst = std::max(worst, err);
        ++cells;
        if (err > 5e-4 + 1e-12) {
          ++bad;
          std::fprintf(stderr, "  %s %s %s: got %.5f published %.4f\n", std::string(t.name).c_str(),
                       std::string(t.summary[static_cast<std::size_t>(s)].label).c_str(),
                       names[k].c_str(), got[s], t.summary[static_cast<std::size_t>(s)].values[k]);
        }
      }
    }
  }
  return {bad == 0, std::to_string(cells - bad) + "/" + std::to_string(cells) +
                        " cells within 5e-4, worst " + fmt("%.2e", worst)};
}

Outcome metrics_oracle() {
  Rng rng(2024);
  int mismatches = 0;
  double worst_gap = 0;
  for (int i = 0; i < 1000; ++i) {
    const Mask p = random_mask(rng, 64, 64, rng.uniform());
    const Mask g = random_mask(rng, 64, 64, rng.uniform());
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      const bool a = p.data[k] != 0, b = g.data[k] != 0;
      if (a && b) ++tp;
      else if (a) ++fp;
      else if (b) ++fn;
      else ++tn;
    }
    const ConfusionCounts c = confusion_counts(p, g);
    if (!(c == ConfusionCounts{tp, fp, fn, tn})) ++mismatches;
    const Scores s = segmentation_scores(c);
    const double dt = static_cast<double>(tp), dfp = static_cast<double>(fp), dfn = static_cast<double>(fn);
    Scores o;
    if (tp + fp + fn == 0) {
      o = {1, 1, 1, 1};
    } else {
      o.precision = tp + fp ? dt / (dt + dfp) : 0.0;
      o.recall = tp + fn ? dt / (dt + dfn) : 0.0;
      o.dice = 2 * dt / (2 * dt + dfp + dfn);
      o.f1 = o.precision + o.recall > 0 ? 2 * o.precision * o.recall / (o.precision + o.recall) : 0.0;
    }
    if (s.precision != o.precision || s.recall != o.recall || s.dice != o.dice ||
        std::abs(s.f1 - o.f1) > 1e-12) {
      ++mismatches;
    }
    worst_gap = std::max(worst_gap, std::abs(s.dice - s.f1));
  }
  return {mismatches == 0 && worst_gap <= 1e-12,
          std::to_string(1000 - mismatches) + "/1000 pairs exact, max |dice-f1| " + fmt("%.1e", worst_gap)};
}

bool non_increasing(const std::vector<double>& objective) {
  bool ok = !objective.empty();
  for (std::size_t k = 1; k < objective.size(); ++k) {
    ok &= objective[k] <= objective[k - 1] * (1 + 1e-12) + 1e-12;
  }
  return ok;
}

Outcome stain_recovery() {
  Rng rng(77);
  int macenko_ok = 0, vahadane_ok = 0;
  double worst_angle = 0, worst_residual = 0, worst_sparse = 0;
  for (int i = 0; i < 50; ++i) {
    const StainMatrix s = perturb_stain_matrix(default_stain_matrix(), 20.0, rng);
    const StainImage img = synthetic_stain_image(s, 96, 96, 5000 + static_cast<std::uint64_t>(i));
    const StainProfile p = estimate_stains_macenko(img.image);
    const double angle = std::max(angle_degrees(p.stain_matrix.col(0), s.col(0)),
                                  angle_degrees(p.stain_matrix.col(1), s.col(1)));
    worst_angle = std::max(worst_angle, angle);
    if (angle < 2.0) ++macenko_ok;

    // Residual is judged on the unregularised fit; the default sparsity trades
    // reconstruction for sparse codes. Monotonicity is required of both.
    VahadaneParams plain;
    plain.sparsity_lambda = 0.0;
    const VahadaneFit fit = estimate_stains_vahadane(img.image, plain);
    const VahadaneFit sparse = estimate_stains_vahadane(img.image);
    const bool monotone = non_increasing(fit.objective) && non_increasing(sparse.objective);
    worst_residual = std::max(worst_residual, fit.relative_residual);
    worst_sparse = std::max(worst_sparse, sparse.relative_residual);
    if (monotone && fit.relative_residual < 0.02) ++vahadane_ok;
  }
  return {macenko_ok >= 48 && vahadane_ok == 50,
          "macenko " + std::to_string(macenko_ok) + "/50 within 2 deg (worst " + fmt("%.2f", worst_angle) +
              "), vahadane " + std::to_string(vahadane_ok) + "/50 monotone with lambda=0 residual < 2% (worst " +
              fmt("%.4f", worst_residual) + ", default lambda " + fmt("%.4f", worst_sparse) + ")"};
}

Outcome normalization_fixed_points() {
  // Worst channel change and worst white loss, per method.
  std::array<int, 2> worst_diff{}, worst_white{};
  for (int i = 0; i < 50; ++i) {
    Rng rng(900 + static_cast<std::uint64_t>(i));
    const StainMatrix s = perturb_stain_matrix(default_stain_matrix(), 20.0, rng);
    RgbImage img = synthetic_stain_image(s, 96, 96, 700 + static_cast<std::uint64_t>(i)).image;
    for (int x = 0; x < img.width; ++x) img.set(x, 0, {255, 255, 255});
    const std::array<StainProfile, 2> profiles{estimate_stains_macenko(img),
                                               estimate_stains_vahadane(img).profile};
    for (std::size_t m = 0; m < 2; ++m) {
      const RgbImage out = normalize_to_reference(img, profiles[m], profiles[m]);
      for (std::size_t k = 0; k < img.data.size(); ++k) {
        worst_diff[m] = std::max(worst_diff[m], std::abs(out.data[k] - img.data[k]));
      }
      for (int x = 0; x < img.width; ++x) {
        for (auto ch : out.at(x, 0)) worst_white[m] = std::max(worst_white[m], 255 - ch);
      }
    }
  }
  bool ok = true;
  std::string detail = "50 images per method";
  for (std::size_t m = 0; m < 2; ++m) {
    ok &= worst_diff[m] <= 2 && worst_white[m] <= 2;
    detail += std::string(m == 0 ? "; macenko" : "; vahadane") + " max channel change " +
              std::to_string(worst_diff[m]) + ", white loss " + std::to_string(worst_white[m]);
  }
  return {ok, detail};
}

bool flush(const PixelBox& b, Corner c, int size) {
  switch (c) {
    case Corner::TL: return b.x0 == 0 && b.y0 == 0;
    case Corner::TR: return b.x1 == size && b.y0 == 0;
    case Corner::BL: return b.x0 == 0 && b.y1 == size;
    case Corner::BR: return b.x1 == size && b.y1 == size;
  }
  return false;
}

Outcome augmentation_contract() {
  ScratchDir dir("acc_aug");
  SynthSpec spec;
  spec.seed = 11;
  const SynthCohort cohort = make_synthetic_cohort(spec, dir.path());
  int patches = 0, variants = 0, dropped = 0, skipped = 0, violations = 0;
  for (const auto& w : cohort.wsis) {
    const WsiRecord rec = read_wsi_sidecar(dir.path() / w.sidecar);
    const auto rois = read_annotation_file(dir.path() / w.annotations, rec);
    const int level = nearest_level(rec, kWorkingMagnification);
    auto source = TiledPyramid::open(rec);
    for (int size : {kSmallPatch, kLargePatch}) {
      for (const auto& s : sample_patches(tiled_source(rec), rec, rois, size, level).samples) {
        ++patches;
        const auto seed = *std::find_if(rois.begin(), rois.end(),
                                        [&](const auto& r) { return r.roi_id == s.spec.seed_roi_id; });
        const std::vector<PolygonRoi> only{seed};
        const auto seed_count = population_count(rasterize_mask(only, s.spec, rec));
        ShiftResult r;
        try {
          r = roi_shift_variants(s, *source, rec, rois);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::BBoxTooLarge) throw;
          ++skipped;
          continue;
        }
        if (r.variants.size() + r.dropped.size() != 4) ++violations;
        for (const auto& d : r.dropped) {
          if (d.reason.empty()) ++violations;
        }
        dropped += static_cast<int>(r.dropped.size());
        std::size_t vi = 0;
        for (Corner c : kCorners) {
          const bool was_dropped = std::any_of(r.dropped.begin(), r.dropped.end(),
                                               [&](const auto& d) { return d.corner == c; });
          if (was_dropped) continue;
          const PatchSample& v = r.variants.at(vi++);
          ++variants;
          const Mask m = rasterize_mask(only, v.spec, rec);
          if (v.augmentation != corner_tag(c) || population_count(m) != seed_count ||
              !flush(foreground_box(m), c, size)) {
            ++violations;
          }
        }
      }
    }
  }
  return {violations == 0 && patches > 0,
          std::to_string(patches) + " object patches, " + std::to_string(variants) + " variants, " +
              std::to_string(dropped) + " logged boundary drops, " + std::to_string(skipped) +
              " oversized seeds, " + std::to_string(violations) + " contract violations"};
}

Outcome fold_plan() {
  std::vector<std::string> expected12, expected4;
  for (const auto& t : fixtures::published_tables()) {
    std::vector<std::string>& dst = t.with_test ? expected12 : expected4;
    if (!dst.empty()) continue;
    for (const auto& row : t.folds) dst.emplace_back(row.label);
  }
  ScratchDir dir("acc_folds");
  SynthSpec spec;
  spec.level0_size = 512;
  spec.levels = 1;
  spec.rois_per_wsi = 1;
  const SynthCohort cohort = make_synthetic_cohort(spec, dir.path());
  std::vector<WsiRecord> wsis;
  for (const auto& w : cohort.wsis) wsis.push_back(read_wsi_sidecar(dir.path() / w.sidecar));

  std::vector<std::string> nested_names, scanner_names;
  for (const auto& r : build_fold_plan(wsis, 4, 3, 7).runs) nested_names.push_back(r.name);
  // The scanner filter keeps the four S60 slides.
  for (const auto& r : build_scanner_plan(wsis, Scanner::NanoZoomerS60, 4, 7).runs) scanner_names.push_back(r.name);

  int detected = 0;
  const auto faults = planted_faults();
  for (const auto& f : faults) {
    const auto v = verify_plan(f.plan, f.rows);
    if (std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.rule == f.expected; })) ++detected;
    else std::fprintf(stderr, "  undetected fault: %s\n", f.name.c_str());
  }
  const bool ok = nested_names == expected12 && scanner_names == expected4 &&
                  detected == static_cast<int>(faults.size()) && faults.size() == 20;
  return {ok, std::to_string(nested_names.size()) + " nested names " +
                  (nested_names == expected12 ? "match" : "differ") + ", " +
                  std::to_string(scanner_names.size()) + " scanner names " +
                  (scanner_names == expected4 ? "match" : "differ") + ", faults detected " +
                  std::to_string(detected) + "/" + std::to_string(faults.size())};
}

Outcome geometry() {
  const WsiRecord wsi = make_wsi("G", 512, 512, 1);
  Rng rng(31);
  int tested = 0, bad = 0;
  double worst = 0;
  while (tested < 1500) {
    std::vector<Point> v;
    if (tested % 3 == 0) {
      for (int k = 0; k < 3; ++k) v.push_back({rng.uniform(0, 512), rng.uniform(0, 512)});
    } else if (tested % 3 == 1) {
      // Smaller box: many triangles sit just above the area floor.
      for (int k = 0; k < 3; ++k) v.push_back({rng.uniform(0, 256), rng.uniform(0, 256)});
    } else {
      v = star_vertices(rng, rng.uniform(100, 412), rng.uniform(100, 412), 10, 100,
                        3 + static_cast<int>(rng.below(15)));
    }
    const PolygonRoi roi = make_roi("g", "G", v);
    const double area = polygon_area(roi);
    if (area < 500) continue;
    ++tested;
    const auto count = static_cast<double>(
        population_count(rasterize_window(std::span(&roi, 1), wsi, 0, 0, 0, 512, 512)));
    const double err = std::abs(count - area) / area;
    worst = std::max(worst, err);
    if (err >= 0.02) ++bad;
  }
  const double full = context_ratio(Mask(128, 128, 1));
  const std::vector<PolygonRoi> sq{rect_roi("sq", "G", 32, 32, 96, 96)};
  const double quarter = context_ratio(rasterize_window(sq, wsi, 0, 0, 0, 128, 128));
  return {bad == 0 && full == 1.0 && quarter == 0.25,
          std::to_string(tested - bad) + "/" + std::to_string(tested) + " polygons within 2% (worst " +
              fmt("%.4f", worst) + "), context ratios " + fmt("%.4f", full) + " and " + fmt("%.4f", quarter)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome end_to_end_determinism() {
  ScratchDir a("acc_e2e_a"), b("acc_e2e_b");
  const PipelineConfig config = load_config(fs::path(NPSEG_SOURCE_DIR) / "configs" / "mini.json");
  const PipelineReport ra = run_pipeline(config, a.path());
  const PipelineReport rb = run_pipeline(config, b.path());
  int identical = 0;
  for (auto f : {&PipelineReport::manifest, &PipelineReport::fold_plan,
                        &PipelineReport::metrics_csv, &PipelineReport::table_csv}) {
    if (slurp(ra.*f) == slurp(rb.*f) && !slurp(ra.*f).empty()) ++identical;
  }
  const auto rows = read_manifest(ra.manifest).size();
  const auto runs = read_fold_plan(ra.fold_plan).runs.size();
  return {identical == 4 && runs == 12,
          std::to_string(identical) + "/4 artifacts byte-identical, " + std::to_string(rows) +
              " manifest rows, " + std::to_string(runs) + " runs"};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"aggregation oracle (published tables, 5e-4)", 1.0, aggregation_oracle},
      {"metrics oracle (1000 random 64x64 pairs)", 10.0, metrics_oracle},
      {"stain recovery (50 synthetic images)", 120.0, stain_recovery},
      {"normalization fixed points", 0.0, normalization_fixed_points},
      {"augmentation contract (generated cohort)", 0.0, augmentation_contract},
      {"fold plan names and planted faults", 0.0, fold_plan},
      {"geometry (area 2%, context ratio exact)", 0.0, geometry},
      {"end-to-end determinism (mini cohort)", 300.0, end_to_end_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = o.pass;
    std::string timing = fmt("%.2fs", secs);
    if (c.time_limit_s > 0) {
      timing += " of " + fmt("%.0fs", c.time_limit_s) + " budget";
      if (secs >= c.time_limit_s) pass = false;
    }
    std::printf("%s  %s: %s [%s]\n", pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
    if (!pass) ++failed;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
