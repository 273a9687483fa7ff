#include "npseg/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "npseg/augmentation.hpp"
#include "npseg/digest.hpp"
#include "npseg/error.hpp"
#include "npseg/parallel.hpp"
#include "npseg/pyramid.hpp"
#include "npseg/tiling.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace npseg {

namespace {

fs::path absolute_normal(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

// Path of `target` as seen from directory `base`, with forward slashes.
std::string relative_to(const fs::path& target, const fs::path& base) {
  return absolute_normal(target).lexically_relative(absolute_normal(base)).generic_string();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

std::string scanner_name(const WsiRecord& wsi) {
  return wsi.scanner ? std::string(to_string(*wsi.scanner)) : std::string();
}

const IngestedWsi& find_wsi(std::span<const IngestedWsi> wsis, const std::string& id) {
  for (const auto& w : wsis) {
    if (w.wsi.wsi_id == id) return w;
  }
  throw Error(ErrorCode::InvalidRecord, "manifest names unknown slide " + id);
}

// Rewrites a row's file paths from one manifest directory to another.
ManifestRecord rebase(ManifestRecord row, const fs::path& from_dir, const fs::path& to_dir) {
  row.image_path = relative_to(from_dir / row.image_path, to_dir);
  row.mask_path = relative_to(from_dir / row.mask_path, to_dir);
  return row;
}

ManifestRecord write_sample(const PatchSample& s, const WsiRecord& wsi, const std::string& patch_id,
                            const fs::path& out_dir) {
  const fs::path rel_dir = fs::path("patches") / s.spec.wsi_id;
  fs::create_directories(out_dir / rel_dir);
  const fs::path image = rel_dir / (patch_id + ".png");
  const fs::path mask = rel_dir / (patch_id + "_mask.png");
  write_png(out_dir / image, s.image);
  write_png(out_dir / mask, s.mask);

  ManifestRecord r;
  r.patch_id = patch_id;
  r.wsi_id = s.spec.wsi_id;
  r.scanner = scanner_name(wsi);
  r.origin_x = s.spec.origin.x;
  r.origin_y = s.spec.origin.y;
  r.level = s.spec.working_level;
  r.size = s.spec.size;
  r.context_ratio = s.context_ratio;
  r.augmentation_tag = std::string(to_string(s.augmentation));
  r.normalization_tag = std::string(to_string(s.normalization));
  r.image_path = image.generic_string();
  r.mask_path = mask.generic_string();
  r.seed_roi_id = s.spec.seed_roi_id;
  r.source_rois = s.spec.source_rois;
  return r;
}

RgbImage read_level(const WsiRecord& wsi, int level) {
  auto pyramid = TiledPyramid::open(wsi);
  const LevelSize size = wsi.level(level);
  return pyramid->read_window(level, 0, 0, size.width, size.height);
}

StainProfile estimate(const RgbImage& image, StainMethod method) {
  if (method == StainMethod::macenko) return estimate_stains_macenko(image);
  return estimate_stains_vahadane(image).profile;
}

}  // namespace

// ---------------------------------------------------------------- ingest

std::vector<IngestedWsi> ingest_slides(std::span<const fs::path> sidecars) {
  std::vector<IngestedWsi> out;
  std::set<std::string> ids;
  for (const auto& sidecar : sidecars) {
    IngestedWsi w;
    w.sidecar = sidecar;
    w.wsi = read_wsi_sidecar(sidecar);
    validate(w.wsi);
    if (!ids.insert(w.wsi.wsi_id).second) {
      throw Error(ErrorCode::InvalidRecord, "slide " + w.wsi.wsi_id + " ingested twice");
    }
    w.annotations = sidecar.parent_path() / "annotations.xml";
    w.rois = read_annotation_file(w.annotations, w.wsi);
    out.push_back(std::move(w));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.wsi.wsi_id < b.wsi.wsi_id; });
  return out;
}

std::vector<fs::path> find_sidecars(const fs::path& cohort_dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(cohort_dir)) {
    throw Error(ErrorCode::IoFailure, "not a directory: " + cohort_dir.string());
  }
  for (const auto& entry : fs::directory_iterator(cohort_dir)) {
    const auto meta = entry.path() / "slide.meta";
    if (entry.is_directory() && fs::exists(meta)) out.push_back(meta);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_ingest(const fs::path& file, std::span<const IngestedWsi> wsis) {
  const fs::path dir = file.parent_path();
  ordered_json j;
  j["wsis"] = ordered_json::array();
  for (const auto& w : wsis) {
    ordered_json jw;
    jw["wsi_id"] = w.wsi.wsi_id;
    jw["scanner"] = scanner_name(w.wsi);
    jw["sidecar"] = relative_to(w.sidecar, dir);
    jw["annotations"] = relative_to(w.annotations, dir);
    jw["roi_count"] = w.rois.size();
    j["wsis"].push_back(std::move(jw));
  }
  write_text(file, j.dump(2) + "\n");
}

std::vector<IngestedWsi> load_ingest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, file.string() + ": " + e.what());
  }
  std::vector<IngestedWsi> out;
  try {
    for (const auto& jw : j.at("wsis")) {
      IngestedWsi w;
      w.sidecar = file.parent_path() / jw.at("sidecar").get<std::string>();
      w.annotations = file.parent_path() / jw.at("annotations").get<std::string>();
      w.wsi = read_wsi_sidecar(w.sidecar);
      validate(w.wsi);
      w.rois = read_annotation_file(w.annotations, w.wsi);
      out.push_back(std::move(w));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, file.string() + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------- tile

std::vector<ManifestRecord> tile_stage(std::span<const IngestedWsi> wsis, const TileParams& params,
                                       const fs::path& out_dir) {
  if (!is_supported_patch_size(params.size)) {
    throw Error(ErrorCode::ConfigInvalid, "tile.size: " + std::to_string(params.size) +
                                              " is not a supported patch size");
  }
  fs::create_directories(out_dir);
  std::vector<ManifestRecord> rows;
  std::string warnings;
  for (std::size_t k = 0; k < wsis.size(); ++k) {
    const auto& w = wsis[k];
    const int level = nearest_level(w.wsi, params.magnification);
    const auto source = tiled_source(w.wsi);
    SamplingReport report = sample_patches(source, w.wsi, w.rois, params.size, level, params.workers);
    for (const auto& msg : report.warnings) warnings += msg + "\n";
    for (const auto& s : report.samples) {
      rows.push_back(write_sample(
          s, w.wsi, make_patch_id(w.wsi.wsi_id, s.spec.seed_roi_id, params.size, "none"), out_dir));
    }
    if (params.negatives_per_wsi > 0) {
      const auto negatives =
          sample_negative_patches(source, w.wsi, w.rois, params.size, level,
                                  params.negatives_per_wsi, params.seed * 7919ULL + k);
      for (std::size_t i = 0; i < negatives.size(); ++i) {
        const std::string seed = "neg" + std::to_string(i);
        rows.push_back(write_sample(negatives[i], w.wsi,
                                    make_patch_id(w.wsi.wsi_id, seed, params.size, "none"),
                                    out_dir));
      }
    }
  }
  write_manifest(out_dir / "manifest.jsonl", rows);
  write_text(out_dir / "warnings.log", warnings);
  return rows;
}

// ---------------------------------------------------------------- augment

std::vector<ManifestRecord> augment_stage(std::span<const IngestedWsi> wsis,
                                          const fs::path& manifest, const AugmentParams& params,
                                          const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const fs::path in_dir = manifest.parent_path();
  const auto input = read_manifest(manifest);
  std::vector<ManifestRecord> rows;
  std::string dropped;
  std::map<std::string, std::unique_ptr<TiledPyramid>> sources;

  for (const auto& row : input) {
    rows.push_back(rebase(row, in_dir, out_dir));
    if (!params.enabled || row.augmentation_tag != "none" || row.seed_roi_id.empty()) continue;

    const IngestedWsi& w = find_wsi(wsis, row.wsi_id);
    auto& source = sources[row.wsi_id];
    if (!source) source = TiledPyramid::open(w.wsi);

    PatchSample sample;
    sample.spec.wsi_id = row.wsi_id;
    sample.spec.origin = {row.origin_x, row.origin_y};
    sample.spec.size = row.size;
    sample.spec.working_level = row.level;
    sample.spec.seed_roi_id = row.seed_roi_id;
    sample.spec.source_rois = row.source_rois;
    sample.image = read_png_rgb(in_dir / row.image_path);
    sample.mask = read_png_mask(in_dir / row.mask_path);
    sample.context_ratio = row.context_ratio;

    ShiftResult result;
    try {
      result = roi_shift_variants(sample, *source, w.wsi, w.rois, params.margin);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BBoxTooLarge && e.code() != ErrorCode::EmptyMask) throw;
      dropped += row.patch_id + " all " + e.what() + "\n";
      continue;
    }
    for (const auto& d : result.dropped) {
      dropped += row.patch_id + " " + std::string(to_string(d.corner)) + " " + d.reason + "\n";
    }
    for (const auto& v : result.variants) {
      const std::string id =
          make_patch_id(row.wsi_id, row.seed_roi_id, row.size, std::string(to_string(v.augmentation)));
      rows.push_back(write_sample(v, w.wsi, id, out_dir));
    }
  }
  write_manifest(out_dir / "manifest.jsonl", rows);
  write_text(out_dir / "dropped.log", dropped);
  return rows;
}

// ---------------------------------------------------------------- normalize

std::vector<ManifestRecord> normalize_stage(std::span<const IngestedWsi> wsis,
                                            const fs::path& manifest,
                                            const NormalizeParams& params,
                                            const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const fs::path in_dir = manifest.parent_path();
  auto rows = read_manifest(manifest);
  if (!params.method) {
    for (auto& r : rows) r = rebase(r, in_dir, out_dir);
    write_manifest(out_dir / "manifest.jsonl", rows);
    return rows;
  }
  const StainMethod method = *params.method;
  if (wsis.empty()) throw Error(ErrorCode::EmptyCohort, "no slides to normalize");

  fs::create_directories(out_dir / "profiles");
  std::map<std::string, StainProfile> profiles;
  for (const auto& w : wsis) {
    const RgbImage overview = read_level(w.wsi, w.wsi.level_count() - 1);
    StainProfile p = estimate(overview, method);
    p.reference_id = w.wsi.wsi_id;
    write_profile(out_dir / "profiles" / (w.wsi.wsi_id + ".json"), p);
    profiles.emplace(w.wsi.wsi_id, std::move(p));
  }

  StainProfile reference;
  if (params.reference_profile) {
    reference = read_profile(*params.reference_profile);
  } else {
    const std::string id = params.reference_wsi.value_or(wsis.front().wsi.wsi_id);
    auto it = profiles.find(id);
    if (it == profiles.end()) {
      throw Error(ErrorCode::InvalidRecord, "reference slide " + id + " was not ingested");
    }
    reference = it->second;
  }
  if (reference.method != method) {
    throw Error(ErrorCode::MethodMismatch, "reference profile was estimated with " +
                                               std::string(to_string(reference.method)));
  }
  write_profile(out_dir / "reference.json", reference);

  std::vector<ManifestRecord> out(rows.size());
  parallel_for(rows.size(), params.workers, [&](std::size_t i, int) {
    const ManifestRecord& row = rows[i];
    auto it = profiles.find(row.wsi_id);
    if (it == profiles.end()) {
      throw Error(ErrorCode::InvalidRecord, "manifest names unknown slide " + row.wsi_id);
    }
    const RgbImage image = read_png_rgb(in_dir / row.image_path);
    const RgbImage normalized = normalize_to_reference(image, it->second, reference);
    const fs::path rel_dir = fs::path("patches") / row.wsi_id;
    fs::create_directories(out_dir / rel_dir);
    const fs::path image_rel = rel_dir / (row.patch_id + ".png");
    write_png(out_dir / image_rel, normalized);

    ManifestRecord r = row;
    r.normalization_tag = std::string(to_string(method));
    r.image_path = image_rel.generic_string();
    r.mask_path = relative_to(in_dir / row.mask_path, out_dir);
    out[i] = std::move(r);
  });
  write_manifest(out_dir / "manifest.jsonl", out);
  return out;
}

// ---------------------------------------------------------------- split

FoldPlan split_stage(std::span<const IngestedWsi> wsis, const fs::path& manifest,
                     const SplitParams& params, const fs::path& out_dir) {
  fs::create_directories(out_dir / "runs");
  std::vector<WsiRecord> records;
  for (const auto& w : wsis) records.push_back(w.wsi);

  FoldPlan plan;
  if (params.mode == PlanMode::nested) {
    plan = build_fold_plan(records, params.n_test, params.n_cv, params.seed);
  } else {
    if (!params.scanner) throw Error(ErrorCode::ConfigInvalid, "split.scanner: required in scanner_cv mode");
    plan = build_scanner_plan(records, *params.scanner, params.n_cv, params.seed);
  }
  for (auto& run : plan.runs) run.augment_splits = params.augment_splits;
  write_fold_plan(out_dir / "fold_plan.json", plan);

  const fs::path in_dir = manifest.parent_path();
  auto rows = read_manifest(manifest);
  if (params.mode == PlanMode::scanner_cv) {
    std::erase_if(rows, [&](const ManifestRecord& r) { return !plan.runs.front().split_of(r.wsi_id); });
  }
  std::vector<ManifestRecord> listed;
  for (const auto& run : plan.runs) {
    auto listing = split_listing(run, rows);
    for (auto& r : listing) r = rebase(r, in_dir, out_dir / "runs");
    write_manifest(out_dir / "runs" / (run.name + ".jsonl"), listing);
    listed.insert(listed.end(), listing.begin(), listing.end());
  }

  auto violations = verify_plan(plan, rows);
  const auto listing_violations = verify_plan(plan, listed);
  violations.insert(violations.end(), listing_violations.begin(), listing_violations.end());
  std::string report = std::to_string(violations.size()) + " violations\n";
  for (const auto& v : violations) {
    report += std::string(to_string(v.rule)) + " " + v.run + " " + v.wsi_id + " " + v.patch_id +
              ": " + v.message + "\n";
  }
  write_text(out_dir / "verify.txt", report);
  if (!violations.empty()) {
    throw Error(ErrorCode::StageFailure, "fold plan failed verification: " + violations.front().message);
  }
  return plan;
}

// ---------------------------------------------------------------- evaluate

FloatImage baseline_probability(const RgbImage& image, const StainMatrix& stain_matrix) {
  StainProfile profile;
  profile.stain_matrix = stain_matrix;
  const Eigen::Matrix2Xd c = concentrations(rgb_to_od(image), profile);
  FloatImage out(image.width, image.height);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = std::clamp(c(1, static_cast<Eigen::Index>(i)) / 0.5, 0.0, 1.0);
  }
  return out;
}

std::vector<MetricsRecord> evaluate_stage(const fs::path& fold_plan, const fs::path& manifest,
                                          const EvaluateParams& params, const fs::path& out_csv) {
  const FoldPlan plan = read_fold_plan(fold_plan);
  const auto rows = read_manifest(manifest);
  const fs::path in_dir = manifest.parent_path();
  const StainMatrix baseline =
      params.baseline_profile ? read_profile(*params.baseline_profile).stain_matrix
                              : default_stain_matrix();

  std::vector<const RunSpec*> runs;
  if (params.runs.empty()) {
    for (const auto& r : plan.runs) runs.push_back(&r);
  } else {
    for (const auto& name : params.runs) {
      const RunSpec* r = plan.find(name);
      if (!r) throw Error(ErrorCode::InvalidRecord, "fold plan has no run " + name);
      runs.push_back(r);
    }
  }

  auto prediction = [&](const RunSpec& run, const ManifestRecord& row) -> Mask {
    if (!params.pred_dir) {
      return binarize(baseline_probability(read_png_rgb(in_dir / row.image_path), baseline),
                      params.threshold);
    }
    fs::path p = *params.pred_dir / run.name / (row.patch_id + ".png");
    if (!fs::exists(p)) p = *params.pred_dir / (row.patch_id + ".png");
    if (!fs::exists(p)) throw Error(ErrorCode::IoFailure, "no prediction for " + row.patch_id);
    return binarize(read_png_probability(p), params.threshold);
  };

  auto score = [&](const RunSpec& run, const std::vector<ManifestRecord>& listing,
                   std::string_view split) -> std::optional<Scores> {
    std::vector<const ManifestRecord*> picked;
    for (const auto& r : listing) {
      if (r.split == split && r.augmentation_tag == "none") picked.push_back(&r);
    }
    if (picked.empty()) return std::nullopt;
    std::vector<MaskPair> pairs(picked.size());
    parallel_for(picked.size(), params.workers, [&](std::size_t i, int) {
      pairs[i].gt = read_png_mask(in_dir / picked[i]->mask_path);
      pairs[i].pred = prediction(run, *picked[i]);
    });
    return score_split(pairs, params.granularity);
  };

  std::vector<MetricsRecord> records;
  for (const RunSpec* run : runs) {
    const auto listing = split_listing(*run, rows);
    MetricsRecord rec;
    rec.fold_name = run->name;
    const auto dev = score(*run, listing, "val");
    if (!dev) throw Error(ErrorCode::EmptyInput, run->name + " has no validation patches");
    rec.dev = *dev;
    if (plan.mode == PlanMode::nested) {
      rec.test = score(*run, listing, "test");
      if (!rec.test) throw Error(ErrorCode::EmptyInput, run->name + " has no test patches");
    }
    records.push_back(std::move(rec));
  }
  if (!out_csv.parent_path().empty()) fs::create_directories(out_csv.parent_path());
  emit_table(records, aggregate_records(records), out_csv);
  return records;
}

// ---------------------------------------------------------------- aggregate

std::vector<MetricsRecord> aggregate_stage(std::span<const fs::path> tables, const fs::path& out_csv) {
  std::vector<MetricsRecord> records;
  std::set<std::string> names;
  for (const auto& t : tables) {
    for (auto& r : read_table(t).records) {
      if (!names.insert(r.fold_name).second) {
        throw Error(ErrorCode::InvalidRecord, "fold " + r.fold_name + " appears in several tables");
      }
      records.push_back(std::move(r));
    }
  }
  const AggregateStats stats = aggregate_records(records);
  if (!out_csv.parent_path().empty()) fs::create_directories(out_csv.parent_path());
  emit_table(records, stats, out_csv);
  return records;
}

// ---------------------------------------------------------------- config

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::ConfigInvalid, path + ": " + what);
}

// Typed access to one config section, reporting problems by field path.
class Section {
 public:
  Section(const json* j, std::string name) : j_(j), name_(std::move(name)) {
    if (j_ && !j_->is_object()) config_error(name_, "expected an object");
  }

  bool present() const { return j_ != nullptr; }
  bool has(const std::string& key) const { return j_ && j_->contains(key); }
  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void allow(std::initializer_list<std::string_view> keys) const {
    if (!j_) return;
    for (const auto& [k, v] : j_->items()) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) config_error(path(k), "unknown field");
    }
  }

  const json* child(const std::string& key) const {
    return has(key) ? &j_->at(key) : nullptr;
  }

  long long integer(const std::string& key, std::optional<long long> def, long long lo,
                    long long hi) const {
    if (!has(key)) {
      if (!def) config_error(path(key), "required field missing");
      return *def;
    }
    const json& v = j_->at(key);
    if (!v.is_number_integer()) config_error(path(key), "expected an integer");
    const long long x = v.get<long long>();
    if (x < lo || x > hi) {
      config_error(path(key), "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    return x;
  }

  double real(const std::string& key, double def, double lo, double hi) const {
    if (!has(key)) return def;
    const json& v = j_->at(key);
    if (!v.is_number()) config_error(path(key), "expected a number");
    const double x = v.get<double>();
    if (!(x >= lo && x <= hi)) config_error(path(key), "out of range");
    return x;
  }

  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    if (!j_->at(key).is_boolean()) config_error(path(key), "expected true or false");
    return j_->at(key).get<bool>();
  }

  std::optional<std::string> text(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    if (!j_->at(key).is_string()) config_error(path(key), "expected a string");
    return j_->at(key).get<std::string>();
  }

  std::vector<std::string> texts(const std::string& key, std::vector<std::string> def) const {
    if (!has(key)) return def;
    const json& v = j_->at(key);
    if (!v.is_array()) config_error(path(key), "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) config_error(path(key), "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

 private:
  const json* j_;
  std::string name_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

template <typename T, typename Fn>
T parse_enum(const Section& s, const std::string& key, T def, Fn fn) {
  const auto v = s.text(key);
  if (!v) return def;
  try {
    return fn(*v);
  } catch (const Error&) {
    config_error(s.path(key), "unknown value '" + *v + "'");
  }
}

}  // namespace

PipelineConfig parse_config(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) config_error("<root>", "expected an object");
  Section top(&j, "");
  top.allow({"seed", "workers", "artifact_root", "synth", "ingest", "tile", "augment", "normalize",
             "split", "evaluate"});

  PipelineConfig c;
  c.raw = j;
  c.seed = static_cast<std::uint64_t>(top.integer("seed", 0, 0, INT64_MAX));
  c.workers = static_cast<int>(top.integer("workers", 1, 1, 256));
  if (auto root = top.text("artifact_root")) c.artifact_root = resolve(base_dir, *root);

  Section synth(top.child("synth"), "synth");
  synth.allow({"n_wsis", "rois_per_wsi", "level0_size", "levels", "tile_size",
               "scanner_shift_degrees", "min_radius", "max_radius"});
  if (synth.present()) {
    SynthSpec s;
    s.seed = c.seed;
    s.n_wsis = static_cast<int>(synth.integer("n_wsis", s.n_wsis, 1, 1000));
    s.rois_per_wsi = static_cast<int>(synth.integer("rois_per_wsi", s.rois_per_wsi, 0, 1000));
    s.level0_size = static_cast<int>(synth.integer("level0_size", s.level0_size, 256, 1 << 16));
    s.levels = static_cast<int>(synth.integer("levels", s.levels, 1, 8));
    s.tile_size = static_cast<int>(synth.integer("tile_size", s.tile_size, 16, 4096));
    s.scanner_shift_degrees = synth.real("scanner_shift_degrees", s.scanner_shift_degrees, 0, 45);
    s.min_radius = synth.real("min_radius", s.min_radius, 1, 1e4);
    s.max_radius = synth.real("max_radius", s.max_radius, 1, 1e4);
    if (s.max_radius < s.min_radius) config_error("synth.max_radius", "must be >= synth.min_radius");
    c.synth = s;
  }

  Section ingest(top.child("ingest"), "ingest");
  ingest.allow({"slides", "cohort_dir"});
  if (!c.synth) {
    if (!ingest.present()) config_error("ingest", "required when no synth section is given");
    for (const auto& s : ingest.texts("slides", {})) c.slides.push_back(resolve(base_dir, s));
    if (auto dir = ingest.text("cohort_dir")) {
      try {
        for (auto& s : find_sidecars(resolve(base_dir, *dir))) c.slides.push_back(std::move(s));
      } catch (const Error& e) {
        config_error("ingest.cohort_dir", e.what());
      }
    }
    if (c.slides.empty()) config_error("ingest.slides", "no slides given");
  }

  Section tile(top.child("tile"), "tile");
  tile.allow({"size", "magnification", "negatives_per_wsi"});
  c.tile.size = static_cast<int>(tile.integer("size", std::nullopt, 1, 1 << 16));
  if (!is_supported_patch_size(c.tile.size)) config_error("tile.size", "must be 128 or 256");
  c.tile.magnification = tile.real("magnification", c.tile.magnification, 0.1, 1000);
  c.tile.negatives_per_wsi = static_cast<int>(tile.integer("negatives_per_wsi", 0, 0, 10000));
  c.tile.seed = c.seed;
  c.tile.workers = c.workers;

  Section augment(top.child("augment"), "augment");
  augment.allow({"enabled", "margin"});
  c.augment.enabled = augment.boolean("enabled", true);
  c.augment.margin = static_cast<int>(augment.integer("margin", 0, 0, 1 << 16));

  Section normalize(top.child("normalize"), "normalize");
  normalize.allow({"method", "reference_profile", "reference_wsi"});
  if (auto m = normalize.text("method")) {
    if (*m == "none") {
      c.normalize.method = std::nullopt;
    } else {
      c.normalize.method = parse_enum(normalize, "method", StainMethod::macenko,
                                      [](const std::string& v) { return stain_method_from_string(v); });
    }
  }
  if (auto p = normalize.text("reference_profile")) c.normalize.reference_profile = resolve(base_dir, *p);
  c.normalize.reference_wsi = normalize.text("reference_wsi");
  c.normalize.workers = c.workers;

  Section split(top.child("split"), "split");
  split.allow({"mode", "n_test", "n_cv", "scanner", "augment_splits"});
  c.split.mode = parse_enum(split, "mode", PlanMode::nested,
                            [](const std::string& v) { return plan_mode_from_string(v); });
  c.split.n_test = static_cast<int>(split.integer("n_test", 4, 1, 1000));
  c.split.n_cv = static_cast<int>(split.integer("n_cv", c.split.mode == PlanMode::nested ? 3 : 4, 1, 1000));
  if (split.has("scanner")) {
    c.split.scanner = parse_enum(split, "scanner", Scanner::NanoZoomer2RS,
                                 [](const std::string& v) { return scanner_from_string(v); });
  }
  if (c.split.mode == PlanMode::scanner_cv && !c.split.scanner) {
    config_error("split.scanner", "required in scanner_cv mode");
  }
  c.split.augment_splits = split.texts("augment_splits", {"train"});
  for (const auto& s : c.split.augment_splits) {
    if (!split_from_string(s)) config_error("split.augment_splits", "unknown split '" + s + "'");
  }
  c.split.seed = c.seed;

  Section evaluate(top.child("evaluate"), "evaluate");
  evaluate.allow({"pred_dir", "threshold", "granularity", "runs"});
  if (auto p = evaluate.text("pred_dir")) c.evaluate.pred_dir = resolve(base_dir, *p);
  c.evaluate.threshold = evaluate.real("threshold", 0.5, 0.0, 1.0);
  c.evaluate.granularity = parse_enum(evaluate, "granularity", Granularity::pooled,
                                      [](const std::string& v) { return granularity_from_string(v); });
  c.evaluate.runs = evaluate.texts("runs", {});
  c.evaluate.workers = c.workers;
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::ConfigInvalid, "override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(ErrorCode::ConfigInvalid, "override key '" + key + "' is malformed");
    if (!node->is_object()) {
      throw Error(ErrorCode::ConfigInvalid, key.substr(0, start ? start - 1 : 0) + ": not an object");
    }
    if (dot == std::string::npos) {
      (*node)[part] = parsed;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

PipelineConfig load_config(const fs::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot read config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ConfigInvalid, path.string() + ": not valid JSON");
  for (const auto& o : overrides) apply_override(j, o);
  return parse_config(j, absolute_normal(path).parent_path());
}

// ---------------------------------------------------------------- run

int PipelineReport::executed_count() const {
  return static_cast<int>(std::count_if(stages.begin(), stages.end(),
                                        [](const StageOutcome& s) { return s.executed; }));
}

fs::path resolve_artifact_root(const PipelineConfig& config, const std::optional<fs::path>& root) {
  if (root) return absolute_normal(*root);
  if (const char* env = std::getenv(kArtifactRootEnv); env && *env) return absolute_normal(env);
  if (config.artifact_root) return *config.artifact_root;
  return absolute_normal("artifacts");
}

namespace {

template <typename Fn>
StageOutcome run_stage(const fs::path& root, const std::string& name, const std::string& digest,
                       Fn&& body) {
  StageOutcome outcome{name, digest, root / name / digest.substr(0, 16), false};
  const fs::path marker = outcome.dir / ".complete";
  if (fs::exists(marker)) return outcome;

  const fs::path work = root / name / (digest.substr(0, 16) + ".partial");
  fs::remove_all(work);
  fs::create_directories(work);
  try {
    body(work);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigInvalid) throw;
    throw Error(ErrorCode::StageFailure, name + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::StageFailure, name + ": " + e.what());
  }
  write_text(work / ".complete", digest + "\n");
  fs::remove_all(outcome.dir);
  fs::rename(work, outcome.dir);
  outcome.executed = true;
  return outcome;
}

// Hashes every regular file under `dir` in path order.
void add_tree(Digest& d, const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    d.add(f.lexically_relative(dir).generic_string());
    d.add_file(f);
  }
}

}  // namespace

PipelineReport run_pipeline(const PipelineConfig& config, const std::optional<fs::path>& root_override) {
  PipelineReport report;
  report.root = resolve_artifact_root(config, root_override);
  const fs::path& root = report.root;
  fs::create_directories(root);
  const std::string version = NPSEG_VERSION;

  auto stage_digest = [&](const std::string& name, const ordered_json& params,
                          std::initializer_list<std::string> upstream) {
    Digest d;
    d.add(name).add(version).add(params.dump());
    for (const auto& u : upstream) d.add(u);
    return d.hex();
  };

  // Input slides: generated or given.
  std::vector<fs::path> sidecars = config.slides;
  std::string inputs_digest;
  if (config.synth) {
    const SynthSpec& s = *config.synth;
    ordered_json p{{"seed", s.seed}, {"n_wsis", s.n_wsis}, {"rois_per_wsi", s.rois_per_wsi},
                   {"level0_size", s.level0_size}, {"levels", s.levels}, {"tile_size", s.tile_size},
                   {"scanner_shift_degrees", s.scanner_shift_degrees},
                   {"min_radius", s.min_radius}, {"max_radius", s.max_radius}};
    const std::string digest = stage_digest("synth", p, {});
    auto outcome = run_stage(root, "synth", digest, [&](const fs::path& dir) {
      make_synthetic_cohort(s, dir / "cohort");
    });
    sidecars = find_sidecars(outcome.dir / "cohort");
    inputs_digest = digest;
    report.stages.push_back(std::move(outcome));
  } else {
    Digest d;
    for (const auto& sc : sidecars) {
      d.add(sc.generic_string());
      add_tree(d, sc.parent_path());
    }
    inputs_digest = d.hex();
  }

  const std::string ingest_digest = stage_digest("ingest", ordered_json::object(), {inputs_digest});
  auto ingest = run_stage(root, "ingest", ingest_digest, [&](const fs::path& dir) {
    write_ingest(dir / "wsis.json", ingest_slides(sidecars));
  });
  const auto wsis = load_ingest(ingest.dir / "wsis.json");
  report.stages.push_back(ingest);

  const auto& t = config.tile;
  const std::string tile_digest =
      stage_digest("tile",
                   {{"size", t.size}, {"magnification", t.magnification},
                    {"negatives_per_wsi", t.negatives_per_wsi}, {"seed", t.seed}},
                   {ingest_digest});
  auto tile = run_stage(root, "tile", tile_digest,
                        [&](const fs::path& dir) { tile_stage(wsis, t, dir); });
  report.stages.push_back(tile);

  const auto& a = config.augment;
  const std::string augment_digest =
      stage_digest("augment", {{"enabled", a.enabled}, {"margin", a.margin}}, {tile_digest});
  auto augment = run_stage(root, "augment", augment_digest, [&](const fs::path& dir) {
    augment_stage(wsis, tile.dir / "manifest.jsonl", a, dir);
  });
  report.stages.push_back(augment);

  const auto& n = config.normalize;
  std::string reference_hash;
  if (n.reference_profile) reference_hash = sha256_file(*n.reference_profile);
  const std::string normalize_digest =
      stage_digest("normalize",
                   {{"method", n.method ? std::string(to_string(*n.method)) : "none"},
                    {"reference_profile", reference_hash},
                    {"reference_wsi", n.reference_wsi.value_or("")}},
                   {augment_digest});
  auto normalize = run_stage(root, "normalize", normalize_digest, [&](const fs::path& dir) {
    normalize_stage(wsis, augment.dir / "manifest.jsonl", n, dir);
  });
  report.stages.push_back(normalize);
  report.manifest = normalize.dir / "manifest.jsonl";

  const auto& s = config.split;
  const std::string split_digest =
      stage_digest("split",
                   {{"mode", to_string(s.mode)}, {"n_test", s.n_test}, {"n_cv", s.n_cv},
                    {"scanner", s.scanner ? std::string(to_string(*s.scanner)) : ""},
                    {"augment_splits", s.augment_splits}, {"seed", s.seed}},
                   {normalize_digest});
  auto split = run_stage(root, "split", split_digest, [&](const fs::path& dir) {
    split_stage(wsis, report.manifest, s, dir);
  });
  report.stages.push_back(split);
  report.fold_plan = split.dir / "fold_plan.json";

  EvaluateParams e = config.evaluate;
  if (n.method && !e.pred_dir) e.baseline_profile = normalize.dir / "reference.json";
  std::string predictions_hash;
  if (e.pred_dir) {
    Digest d;
    add_tree(d, *e.pred_dir);
    predictions_hash = d.hex();
  }
  const std::string evaluate_digest =
      stage_digest("evaluate",
                   {{"predictions", predictions_hash}, {"threshold", e.threshold},
                    {"granularity", to_string(e.granularity)}, {"runs", e.runs},
                    {"baseline", e.baseline_profile ? "reference" : "default"}},
                   {split_digest});
  auto evaluate = run_stage(root, "evaluate", evaluate_digest, [&](const fs::path& dir) {
    evaluate_stage(report.fold_plan, report.manifest, e, dir / "metrics.csv");
  });
  report.stages.push_back(evaluate);
  report.metrics_csv = evaluate.dir / "metrics.csv";

  const std::string aggregate_digest =
      stage_digest("aggregate", ordered_json::object(), {evaluate_digest});
  auto aggregate = run_stage(root, "aggregate", aggregate_digest, [&](const fs::path& dir) {
    const std::vector<fs::path> tables{report.metrics_csv};
    aggregate_stage(tables, dir / "table.csv");
  });
  report.stages.push_back(aggregate);
  report.table_csv = aggregate.dir / "table.csv";

  // Run log: one JSON line per invocation.
  ordered_json log;
  log["tool_version"] = version;
  log["seed"] = config.seed;
  log["config_digest"] = sha256_hex(config.raw.dump());
  log["stages"] = ordered_json::array();
  ordered_json latest = ordered_json::object();
  for (const auto& st : report.stages) {
    log["stages"].push_back({{"name", st.name}, {"digest", st.digest},
                             {"status", st.executed ? "executed" : "cached"}});
    latest[st.name] = relative_to(st.dir, root);
  }
  {
    std::ofstream out(root / "run_log.jsonl", std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot append run log");
    out << log.dump() << "\n";
  }
  write_text(root / "latest.json", latest.dump(2) + "\n");
  return report;
}

}  // namespace npseg
