#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npseg/annotations.hpp"
#include "npseg/folds.hpp"
#include "npseg/manifest.hpp"
#include "npseg/metrics.hpp"
#include "npseg/stain.hpp"
#include "npseg/synth.hpp"
#include "npseg/tiling.hpp"

namespace npseg {

inline constexpr const char* kArtifactRootEnv = "NPSEG_ARTIFACT_ROOT";

// A validated slide with its annotations loaded.
struct IngestedWsi {
  WsiRecord wsi;
  std::filesystem::path sidecar;
  std::filesystem::path annotations;
  std::vector<PolygonRoi> rois;
};

// Annotations default to annotations.xml beside each sidecar.
std::vector<IngestedWsi> ingest_slides(std::span<const std::filesystem::path> sidecars);
// Every <dir>/*/slide.meta, sorted.
std::vector<std::filesystem::path> find_sidecars(const std::filesystem::path& cohort_dir);
// wsis.json; paths are stored relative to the file's directory.
void write_ingest(const std::filesystem::path& file, std::span<const IngestedWsi> wsis);
std::vector<IngestedWsi> load_ingest(const std::filesystem::path& file);

struct TileParams {
  int size = kSmallPatch;
  double magnification = kWorkingMagnification;
  int negatives_per_wsi = 0;
  std::uint64_t seed = 0;
  int workers = 1;
};

// Writes patches/, manifest.jsonl and warnings.log under out_dir.
std::vector<ManifestRecord> tile_stage(std::span<const IngestedWsi> wsis, const TileParams& params,
                                       const std::filesystem::path& out_dir);

struct AugmentParams {
  bool enabled = true;
  int margin = 0;
};

// Keeps every input row and appends the corner variants of object patches.
// Dropped variants are listed in dropped.log.
std::vector<ManifestRecord> augment_stage(std::span<const IngestedWsi> wsis,
                                          const std::filesystem::path& manifest,
                                          const AugmentParams& params,
                                          const std::filesystem::path& out_dir);

struct NormalizeParams {
  std::optional<StainMethod> method = StainMethod::macenko;  // nullopt: pass through
  std::optional<std::filesystem::path> reference_profile;
  // Slide whose coarsest level defines the target; first id when unset.
  std::optional<std::string> reference_wsi;
  int workers = 1;
};

// Source profiles are estimated per slide from its coarsest level. Writes
// profiles/<wsi>.json, reference.json, patches/ and manifest.jsonl.
std::vector<ManifestRecord> normalize_stage(std::span<const IngestedWsi> wsis,
                                            const std::filesystem::path& manifest,
                                            const NormalizeParams& params,
                                            const std::filesystem::path& out_dir);

struct SplitParams {
  PlanMode mode = PlanMode::nested;
  int n_test = 4;
  int n_cv = 3;
  std::optional<Scanner> scanner;
  std::vector<std::string> augment_splits{"train"};
  std::uint64_t seed = 0;
};

// Writes fold_plan.json, runs/<name>.jsonl and verify.txt. Throws
// StageFailure if verify_plan reports any violation.
FoldPlan split_stage(std::span<const IngestedWsi> wsis, const std::filesystem::path& manifest,
                     const SplitParams& params, const std::filesystem::path& out_dir);

struct EvaluateParams {
  // <pred_dir>/<run>/<patch_id>.png or <pred_dir>/<patch_id>.png, gray = probability.
  std::optional<std::filesystem::path> pred_dir;
  double threshold = 0.5;
  Granularity granularity = Granularity::pooled;
  std::vector<std::string> runs;  // empty: every run in the plan
  // Stain matrix for the unsupervised baseline used when pred_dir is unset.
  std::optional<std::filesystem::path> baseline_profile;
  int workers = 1;
};

// dev scores come from the validation split, test scores from the test split.
std::vector<MetricsRecord> evaluate_stage(const std::filesystem::path& fold_plan,
                                          const std::filesystem::path& manifest,
                                          const EvaluateParams& params,
                                          const std::filesystem::path& out_csv);

// Thresholding-free DAB probability: NNLS concentration of the second stain
// scaled so a concentration of 0.5 maps to 1.
FloatImage baseline_probability(const RgbImage& image, const StainMatrix& stain_matrix);

// Merges records from several tables and writes one aggregated table.
std::vector<MetricsRecord> aggregate_stage(std::span<const std::filesystem::path> tables,
                                           const std::filesystem::path& out_csv);

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> artifact_root;
  int workers = 1;
  std::optional<SynthSpec> synth;
  std::vector<std::filesystem::path> slides;  // used when synth is absent
  TileParams tile;
  AugmentParams augment;
  NormalizeParams normalize;
  SplitParams split;
  EvaluateParams evaluate;
  nlohmann::json raw;  // after overrides, for digests and the run log
};

// Throws ConfigInvalid naming the offending field path, e.g. "tile.size".
// Relative paths resolve against base_dir.
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);

// Overrides are "a.b.c=value"; value is parsed as JSON, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);
PipelineConfig load_config(const std::filesystem::path& path,
                           std::span<const std::string> overrides = {});

struct StageOutcome {
  std::string name;
  std::string digest;
  std::filesystem::path dir;
  bool executed = false;
};

struct PipelineReport {
  std::filesystem::path root;
  std::vector<StageOutcome> stages;
  std::filesystem::path manifest;
  std::filesystem::path fold_plan;
  std::filesystem::path metrics_csv;
  std::filesystem::path table_csv;

  int executed_count() const;
};

// Precedence: explicit root, then $NPSEG_ARTIFACT_ROOT, then the config, then
// ./artifacts.
std::filesystem::path resolve_artifact_root(const PipelineConfig& config,
                                            const std::optional<std::filesystem::path>& root);

// Runs synth (when configured), ingest, tile, augment, normalize, split,
// evaluate and aggregate. Each stage lives in <root>/<stage>/<digest> and is
// skipped when its completion marker exists. Module errors surface as
// StageFailure naming the stage.
PipelineReport run_pipeline(const PipelineConfig& config,
                            const std::optional<std::filesystem::path>& root = std::nullopt);

}  // namespace npseg
