#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "npseg/annotations.hpp"
#include "npseg/manifest.hpp"

namespace npseg {

enum class PlanMode { nested, scanner_cv };
enum class Split { train, val, test };

std::string_view to_string(PlanMode mode);
std::string_view to_string(Split split);
PlanMode plan_mode_from_string(std::string_view s);
std::optional<Split> split_from_string(std::string_view s);

struct RunSpec {
  std::string name;  // test_XX_cv_YY
  std::vector<std::string> test_wsis;
  std::vector<std::string> val_wsis;
  std::vector<std::string> train_wsis;
  std::vector<std::string> augment_splits{"train"};

  std::optional<Split> split_of(std::string_view wsi_id) const;
  bool augments(std::string_view split) const;
  bool operator==(const RunSpec&) const = default;
};

struct FoldPlan {
  PlanMode mode = PlanMode::nested;
  std::uint64_t seed = 0;
  std::optional<Scanner> scanner;  // scanner_cv only
  std::vector<RunSpec> runs;

  const RunSpec* find(std::string_view run_name) const;
  bool operator==(const FoldPlan&) const = default;
};

std::string run_name(int test_fold, int cv_fold);
bool is_valid_run_name(std::string_view name);

// WSI ids are sorted before the seeded shuffle, so the plan depends only on
// the cohort's id set, the group counts and the seed. Outer groups become test
// sets; the remainder of each is split into n_cv rotating validation groups.
FoldPlan build_fold_plan(std::vector<std::string> wsi_ids, int n_test, int n_cv,
                         std::uint64_t seed);
FoldPlan build_fold_plan(std::span<const WsiRecord> wsis, int n_test, int n_cv,
                         std::uint64_t seed);

// Cross-validation within one scanner's slides; runs have no test split.
FoldPlan build_scanner_plan(std::span<const WsiRecord> wsis, Scanner scanner, int n_cv,
                            std::uint64_t seed);

enum class ViolationRule {
  overlapping_splits,  // a WSI in two splits of one run
  incomplete_run,      // a cohort WSI missing from a run
  bad_run_name,
  unknown_run,         // manifest row names a run the plan lacks
  unknown_split,
  split_leak,          // row placed in a split other than its WSI's split
  unassigned_wsi,      // row's WSI is absent from the run
  augmented_outside_augment_splits,
  duplicate_patch,     // same patch in two splits of one run
};

std::string_view to_string(ViolationRule rule);

struct Violation {
  ViolationRule rule;
  std::string run;
  std::string wsi_id;
  std::string patch_id;
  std::string message;
};

// Checks the plan itself and every manifest row against it. Rows carrying
// run/split (per-run split listings) are checked against that run; plain rows
// must belong to a WSI assigned in every run. An empty result means no leakage.
std::vector<Violation> verify_plan(const FoldPlan& plan, std::span<const ManifestRecord> manifest);

// Materialises a run's split listing from the patch manifest. Augmented rows
// are kept only in the run's augment_splits.
std::vector<ManifestRecord> split_listing(const RunSpec& run,
                                          std::span<const ManifestRecord> manifest);

nlohmann::ordered_json to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(const nlohmann::json& j);
void write_fold_plan(const std::filesystem::path& path, const FoldPlan& plan);
FoldPlan read_fold_plan(const std::filesystem::path& path);

}  // namespace npseg
