// npseg command-line front end. Exit codes: 0 ok, 2 bad arguments or config,
// 3 stage failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "npseg/error.hpp"
#include "npseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace npseg;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

template <typename T, typename Fn>
T parse_arg(const std::string& flag, const std::string& value, Fn fn) {
  try {
    return fn(value);
  } catch (const Error&) {
    throw Error(ErrorCode::ConfigInvalid, flag + ": unknown value '" + value + "'");
  }
}

void print_stage_summary(const PipelineReport& report) {
  for (const auto& s : report.stages) {
    std::printf("%-10s %s %s\n", s.name.c_str(), s.executed ? "executed" : "cached  ",
                s.dir.string().c_str());
  }
  std::printf("manifest   %s\nfold_plan  %s\nmetrics    %s\ntable      %s\n",
              report.manifest.string().c_str(), report.fold_plan.string().c_str(),
              report.metrics_csv.string().c_str(), report.table_csv.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neuritic-plaque patch datasets, fold plans and segmentation scoring"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NPSEG_VERSION);
  int workers = 1;
  app.add_option("--workers", workers, "Worker threads per stage")->check(CLI::Range(1, 256));

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic annotated cohort");
  SynthSpec synth_spec;
  fs::path synth_out;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_spec.seed, "Generator seed");
  synth->add_option("--n-wsis", synth_spec.n_wsis, "Number of slides")->check(CLI::PositiveNumber);
  synth->add_option("--rois-per-wsi", synth_spec.rois_per_wsi, "Plaques per slide");
  synth->add_option("--size", synth_spec.level0_size, "Level-0 side length in pixels");
  synth->add_option("--levels", synth_spec.levels, "Pyramid levels");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate slides and annotations");
  std::vector<fs::path> slides;
  fs::path cohort_dir, ingest_out;
  ingest->add_option("--slides", slides, "slide.meta sidecars");
  ingest->add_option("--cohort", cohort_dir, "Directory of <slide>/slide.meta folders");
  ingest->add_option("--out", ingest_out, "wsis.json to write")->required();

  // tile
  auto* tile = app.add_subcommand("tile", "Extract ROI-centred patches");
  TileParams tile_params;
  fs::path wsis_file, tile_out;
  tile->add_option("--wsis", wsis_file, "wsis.json from ingest")->required();
  tile->add_option("--out", tile_out, "Output directory")->required();
  tile->add_option("--size", tile_params.size, "Patch size (128 or 256)")->required();
  tile->add_option("--magnification", tile_params.magnification, "Working magnification");
  tile->add_option("--negatives", tile_params.negatives_per_wsi, "Background patches per slide");
  tile->add_option("--seed", tile_params.seed, "Seed for background placement");

  // augment
  auto* augment = app.add_subcommand("augment", "Add ROI-shifted corner variants");
  AugmentParams augment_params;
  fs::path manifest_in, augment_out;
  augment->add_option("--wsis", wsis_file, "wsis.json from ingest")->required();
  augment->add_option("--manifest", manifest_in, "Input manifest")->required();
  augment->add_option("--out", augment_out, "Output directory")->required();
  augment->add_option("--margin", augment_params.margin, "Corner inset in pixels");

  // normalize
  auto* normalize = app.add_subcommand("normalize", "Stain-normalize patches");
  NormalizeParams normalize_params;
  std::string method = "macenko";
  fs::path normalize_out;
  std::string reference_wsi;
  fs::path reference_profile;
  normalize->add_option("--wsis", wsis_file, "wsis.json from ingest")->required();
  normalize->add_option("--manifest", manifest_in, "Input manifest")->required();
  normalize->add_option("--out", normalize_out, "Output directory")->required();
  normalize->add_option("--method", method, "macenko, vahadane or none");
  normalize->add_option("--reference-profile", reference_profile, "Target stain profile JSON");
  normalize->add_option("--reference-wsi", reference_wsi, "Slide defining the target");

  // split
  auto* split = app.add_subcommand("split", "Build and verify a fold plan");
  SplitParams split_params;
  std::string mode = "nested", scanner;
  fs::path split_out;
  split->add_option("--wsis", wsis_file, "wsis.json from ingest")->required();
  split->add_option("--manifest", manifest_in, "Input manifest")->required();
  split->add_option("--out", split_out, "Output directory")->required();
  split->add_option("--mode", mode, "nested or scanner_cv");
  split->add_option("--n-test", split_params.n_test, "Outer test groups");
  auto* n_cv_opt = split->add_option("--n-cv", split_params.n_cv, "Validation groups");
  split->add_option("--scanner", scanner, "Scanner for scanner_cv mode");
  split->add_option("--seed", split_params.seed, "Shuffle seed");
  split->add_option("--augment-splits", split_params.augment_splits, "Splits that keep augmented rows");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions for fold-plan runs");
  EvaluateParams evaluate_params;
  fs::path fold_plan, evaluate_out, pred_dir, baseline_profile;
  std::string granularity = "pooled";
  evaluate->add_option("--manifest", manifest_in, "Patch manifest")->required();
  evaluate->add_option("--fold-plan", fold_plan, "fold_plan.json")->required();
  evaluate->add_option("--run", evaluate_params.runs, "Run name(s); all runs when omitted");
  evaluate->add_option("--pred-dir", pred_dir, "Probability PNGs; baseline when omitted");
  evaluate->add_option("--threshold", evaluate_params.threshold, "Binarization threshold")
      ->check(CLI::Range(0.0, 1.0));
  evaluate->add_option("--granularity", granularity, "pooled or per_patch_mean");
  evaluate->add_option("--baseline-profile", baseline_profile, "Stain profile for the baseline");
  evaluate->add_option("--out", evaluate_out, "Metrics CSV to write")->required();

  // aggregate
  auto* aggregate = app.add_subcommand("aggregate", "Aggregate metrics tables");
  std::vector<fs::path> tables;
  fs::path aggregate_out;
  aggregate->add_option("--in", tables, "Metrics CSV files")->required();
  aggregate->add_option("--out", aggregate_out, "Aggregated CSV; stdout when omitted");

  // run
  auto* run = app.add_subcommand("run", "Run the whole pipeline from a config file");
  fs::path config_path;
  std::optional<fs::path> root;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  run->add_option("--config", config_path, "Pipeline config JSON")->required();
  run->add_option("--root", root, "Artifact root (overrides env and config)");
  run->add_option("--seed", seed, "Global seed override");
  run->add_option("--set", overrides, "Config override, e.g. tile.size=256");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) {
      make_synthetic_cohort(synth_spec, synth_out);
      std::printf("%s\n", (synth_out / "cohort.json").string().c_str());
    } else if (*ingest) {
      if (!cohort_dir.empty()) {
        for (auto& s : find_sidecars(cohort_dir)) slides.push_back(std::move(s));
      }
      if (slides.empty()) throw Error(ErrorCode::ConfigInvalid, "ingest: no slides given");
      const auto wsis = ingest_slides(slides);
      if (!ingest_out.parent_path().empty()) fs::create_directories(ingest_out.parent_path());
      write_ingest(ingest_out, wsis);
      std::printf("%zu slides\n", wsis.size());
    } else if (*tile) {
      tile_params.workers = workers;
      const auto rows = tile_stage(load_ingest(wsis_file), tile_params, tile_out);
      std::printf("%zu patches\n", rows.size());
    } else if (*augment) {
      const auto rows = augment_stage(load_ingest(wsis_file), manifest_in, augment_params, augment_out);
      std::printf("%zu rows\n", rows.size());
    } else if (*normalize) {
      if (method == "none") {
        normalize_params.method = std::nullopt;
      } else {
        normalize_params.method = parse_arg<StainMethod>("--method", method, [](const std::string& v) {
          return stain_method_from_string(v);
        });
      }
      if (!reference_profile.empty()) normalize_params.reference_profile = reference_profile;
      if (!reference_wsi.empty()) normalize_params.reference_wsi = reference_wsi;
      normalize_params.workers = workers;
      const auto rows = normalize_stage(load_ingest(wsis_file), manifest_in, normalize_params, normalize_out);
      std::printf("%zu rows\n", rows.size());
    } else if (*split) {
      split_params.mode = parse_arg<PlanMode>("--mode", mode, [](const std::string& v) {
        return plan_mode_from_string(v);
      });
      if (split_params.mode == PlanMode::scanner_cv && n_cv_opt->count() == 0) split_params.n_cv = 4;
      if (!scanner.empty()) {
        split_params.scanner = parse_arg<Scanner>("--scanner", scanner, [](const std::string& v) {
          return scanner_from_string(v);
        });
      }
      const FoldPlan plan = split_stage(load_ingest(wsis_file), manifest_in, split_params, split_out);
      std::printf("%zu runs\n", plan.runs.size());
    } else if (*evaluate) {
      evaluate_params.granularity =
          parse_arg<Granularity>("--granularity", granularity, [](const std::string& v) {
            return granularity_from_string(v);
          });
      if (!pred_dir.empty()) evaluate_params.pred_dir = pred_dir;
      if (!baseline_profile.empty()) evaluate_params.baseline_profile = baseline_profile;
      evaluate_params.workers = workers;
      const auto records = evaluate_stage(fold_plan, manifest_in, evaluate_params, evaluate_out);
      std::printf("%zu runs scored\n", records.size());
    } else if (*aggregate) {
      if (aggregate_out.empty()) {
        std::vector<MetricsRecord> records;
        for (const auto& t : tables) {
          for (auto& r : read_table(t).records) records.push_back(std::move(r));
        }
        std::cout << format_table(records, aggregate_records(records));
      } else {
        aggregate_stage(tables, aggregate_out);
      }
    } else if (*run) {
      if (seed) overrides.insert(overrides.begin(), "seed=" + std::to_string(*seed));
      if (app.get_option("--workers")->count() > 0) {
        overrides.insert(overrides.begin(), "workers=" + std::to_string(workers));
      }
      const PipelineConfig config = load_config(config_path, overrides);
      print_stage_summary(run_pipeline(config, root));
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "npseg: %s\n", e.what());
    return e.code() == ErrorCode::ConfigInvalid ? kExitConfig : kExitStage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "npseg: %s\n", e.what());
    return kExitStage;
  }
  return 0;
}
