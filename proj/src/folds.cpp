#include "npseg/folds.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <set>

#include "npseg/error.hpp"
#include "npseg/rng.hpp"

namespace npseg {

std::string_view to_string(PlanMode mode) {
  return mode == PlanMode::nested ? "nested" : "scanner_cv";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

PlanMode plan_mode_from_string(std::string_view s) {
  if (s == "nested") return PlanMode::nested;
  if (s == "scanner_cv" || s == "scanner") return PlanMode::scanner_cv;
  throw Error(ErrorCode::ParseError, "unknown plan mode '" + std::string(s) + "'");
}

std::optional<Split> split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

std::string_view to_string(ViolationRule rule) {
  switch (rule) {
    case ViolationRule::overlapping_splits: return "overlapping_splits";
    case ViolationRule::incomplete_run: return "incomplete_run";
    case ViolationRule::bad_run_name: return "bad_run_name";
    case ViolationRule::unknown_run: return "unknown_run";
    case ViolationRule::unknown_split: return "unknown_split";
    case ViolationRule::split_leak: return "split_leak";
    case ViolationRule::unassigned_wsi: return "unassigned_wsi";
    case ViolationRule::augmented_outside_augment_splits: return "augmented_outside_augment_splits";
    case ViolationRule::duplicate_patch: return "duplicate_patch";
  }
  return "unknown";
}

std::optional<Split> RunSpec::split_of(std::string_view wsi_id) const {
  auto has = [&](const std::vector<std::string>& v) {
    return std::find(v.begin(), v.end(), wsi_id) != v.end();
  };
  if (has(test_wsis)) return Split::test;
  if (has(val_wsis)) return Split::val;
  if (has(train_wsis)) return Split::train;
  return std::nullopt;
}

bool RunSpec::augments(std::string_view split) const {
  return std::find(augment_splits.begin(), augment_splits.end(), split) != augment_splits.end();
}

const RunSpec* FoldPlan::find(std::string_view run_name) const {
  for (const auto& r : runs) {
    if (r.name == run_name) return &r;
  }
  return nullptr;
}

std::string run_name(int test_fold, int cv_fold) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "test_%02d_cv_%02d", test_fold, cv_fold);
  return buf;
}

bool is_valid_run_name(std::string_view name) {
  static const std::regex pattern(R"(test_\d\d_cv_\d\d)");
  return std::regex_match(name.begin(), name.end(), pattern);
}

namespace {

std::vector<std::string> canonical_cohort(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw Error(ErrorCode::InvalidRecord, "duplicate WSI id in cohort");
  }
  return ids;
}

std::vector<std::vector<std::string>> equal_groups(const std::vector<std::string>& ids, int n,
                                                   std::string_view what) {
  if (n < 1 || ids.size() % static_cast<std::size_t>(n) != 0 ||
      ids.size() < static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::IndivisibleCohort,
                std::to_string(ids.size()) + " WSIs cannot form " + std::to_string(n) +
                    " equal non-empty " + std::string(what) + " groups");
  }
  const std::size_t per = ids.size() / static_cast<std::size_t>(n);
  std::vector<std::vector<std::string>> groups(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < ids.size(); ++i) groups[i / per].push_back(ids[i]);
  return groups;
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

FoldPlan build_fold_plan(std::vector<std::string> wsi_ids, int n_test, int n_cv,
                         std::uint64_t seed) {
  std::vector<std::string> cohort = canonical_cohort(std::move(wsi_ids));
  if (cohort.empty()) throw Error(ErrorCode::EmptyCohort, "no WSIs to split");
  Rng rng(seed);
  rng.shuffle(cohort);

  FoldPlan plan;
  plan.mode = PlanMode::nested;
  plan.seed = seed;
  const auto test_groups = equal_groups(cohort, n_test, "test");
  for (int t = 0; t < n_test; ++t) {
    const auto& test = test_groups[static_cast<std::size_t>(t)];
    std::vector<std::string> rest;
    for (const auto& id : cohort) {
      if (std::find(test.begin(), test.end(), id) == test.end()) rest.push_back(id);
    }
    const auto val_groups = equal_groups(rest, n_cv, "validation");
    for (int v = 0; v < n_cv; ++v) {
      RunSpec run;
      run.name = run_name(t, v);
      run.test_wsis = sorted(test);
      run.val_wsis = sorted(val_groups[static_cast<std::size_t>(v)]);
      for (int u = 0; u < n_cv; ++u) {
        if (u == v) continue;
        const auto& g = val_groups[static_cast<std::size_t>(u)];
        run.train_wsis.insert(run.train_wsis.end(), g.begin(), g.end());
      }
      run.train_wsis = sorted(std::move(run.train_wsis));
      plan.runs.push_back(std::move(run));
    }
  }
  return plan;
}

FoldPlan build_fold_plan(std::span<const WsiRecord> wsis, int n_test, int n_cv,
                         std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& w : wsis) ids.push_back(w.wsi_id);
  return build_fold_plan(std::move(ids), n_test, n_cv, seed);
}

FoldPlan build_scanner_plan(std::span<const WsiRecord> wsis, Scanner scanner, int n_cv,
                            std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& w : wsis) {
    if (w.scanner == scanner) ids.push_back(w.wsi_id);
  }
  if (ids.empty()) {
    throw Error(ErrorCode::EmptyCohort,
                "no WSIs scanned with " + std::string(to_string(scanner)));
  }
  std::vector<std::string> cohort = canonical_cohort(std::move(ids));
  Rng rng(seed);
  rng.shuffle(cohort);
  const auto groups = equal_groups(cohort, n_cv, "validation");

  FoldPlan plan;
  plan.mode = PlanMode::scanner_cv;
  plan.seed = seed;
  plan.scanner = scanner;
  for (int v = 0; v < n_cv; ++v) {
    RunSpec run;
    run.name = run_name(0, v);
    run.val_wsis = sorted(groups[static_cast<std::size_t>(v)]);
    for (int u = 0; u < n_cv; ++u) {
      if (u == v) continue;
      const auto& g = groups[static_cast<std::size_t>(u)];
      run.train_wsis.insert(run.train_wsis.end(), g.begin(), g.end());
    }
    run.train_wsis = sorted(std::move(run.train_wsis));
    plan.runs.push_back(std::move(run));
  }
  return plan;
}

std::vector<Violation> verify_plan(const FoldPlan& plan,
                                   std::span<const ManifestRecord> manifest) {
  std::vector<Violation> out;
  std::set<std::string> cohort;
  for (const auto& run : plan.runs) {
    for (const auto* split : {&run.test_wsis, &run.val_wsis, &run.train_wsis}) {
      cohort.insert(split->begin(), split->end());
    }
  }

  std::set<std::string> names;
  for (const auto& run : plan.runs) {
    if (!is_valid_run_name(run.name) || !names.insert(run.name).second) {
      out.push_back({ViolationRule::bad_run_name, run.name, "", "",
                     "run name is malformed or repeated"});
    }
    std::map<std::string, int> seen;
    for (const auto* split : {&run.test_wsis, &run.val_wsis, &run.train_wsis}) {
      for (const auto& id : *split) ++seen[id];
    }
    for (const auto& id : cohort) {
      const int n = seen.count(id) ? seen[id] : 0;
      if (n > 1) {
        out.push_back({ViolationRule::overlapping_splits, run.name, id, "",
                       id + " appears in " + std::to_string(n) + " splits"});
      } else if (n == 0) {
        out.push_back({ViolationRule::incomplete_run, run.name, id, "",
                       id + " is not assigned to any split"});
      }
    }
  }

  // patch_id -> split, per run, for duplicate detection.
  std::map<std::string, std::map<std::string, std::string>> placed;
  for (const auto& row : manifest) {
    if (!row.run) {
      for (const auto& run : plan.runs) {
        if (!run.split_of(row.wsi_id)) {
          out.push_back({ViolationRule::unassigned_wsi, run.name, row.wsi_id, row.patch_id,
                         row.wsi_id + " has patches but no split"});
        }
      }
      continue;
    }
    const RunSpec* run = plan.find(*row.run);
    if (!run) {
      out.push_back({ViolationRule::unknown_run, *row.run, row.wsi_id, row.patch_id,
                     "run not present in plan"});
      continue;
    }
    const std::string split_name = row.split.value_or("");
    if (!split_from_string(split_name)) {
      out.push_back({ViolationRule::unknown_split, run->name, row.wsi_id, row.patch_id,
                     "split '" + split_name + "' is not train/val/test"});
      continue;
    }
    const auto expected = run->split_of(row.wsi_id);
    if (!expected) {
      out.push_back({ViolationRule::unassigned_wsi, run->name, row.wsi_id, row.patch_id,
                     row.wsi_id + " is not part of this run"});
    } else if (to_string(*expected) != split_name) {
      out.push_back({ViolationRule::split_leak, run->name, row.wsi_id, row.patch_id,
                     "patch placed in " + split_name + " but " + row.wsi_id + " belongs to " +
                         std::string(to_string(*expected))});
    }
    if (row.augmentation_tag != "none" && !run->augments(split_name)) {
      out.push_back({ViolationRule::augmented_outside_augment_splits, run->name, row.wsi_id,
                     row.patch_id,
                     "augmented patch (" + row.augmentation_tag + ") in " + split_name});
    }
    auto& run_placed = placed[run->name];
    auto [it, inserted] = run_placed.emplace(row.patch_id, split_name);
    if (!inserted && it->second != split_name) {
      out.push_back({ViolationRule::duplicate_patch, run->name, row.wsi_id, row.patch_id,
                     "patch listed in both " + it->second + " and " + split_name});
    }
  }
  return out;
}

std::vector<ManifestRecord> split_listing(const RunSpec& run,
                                          std::span<const ManifestRecord> manifest) {
  std::vector<ManifestRecord> out;
  for (const auto& row : manifest) {
    const auto split = run.split_of(row.wsi_id);
    if (!split) continue;
    const std::string name(to_string(*split));
    if (row.augmentation_tag != "none" && !run.augments(name)) continue;
    ManifestRecord r = row;
    r.run = run.name;
    r.split = name;
    out.push_back(std::move(r));
  }
  return out;
}

nlohmann::ordered_json to_json(const FoldPlan& plan) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(plan.mode);
  j["seed"] = plan.seed;
  if (plan.scanner) j["scanner"] = to_string(*plan.scanner);
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : plan.runs) {
    nlohmann::ordered_json jr;
    jr["name"] = r.name;
    jr["test"] = r.test_wsis;
    jr["val"] = r.val_wsis;
    jr["train"] = r.train_wsis;
    jr["augment_splits"] = r.augment_splits;
    j["runs"].push_back(std::move(jr));
  }
  return j;
}

FoldPlan fold_plan_from_json(const nlohmann::json& j) {
  try {
    FoldPlan plan;
    plan.mode = plan_mode_from_string(j.at("mode").get<std::string>());
    plan.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("scanner")) plan.scanner = scanner_from_string(j["scanner"].get<std::string>());
    for (const auto& jr : j.at("runs")) {
      RunSpec r;
      r.name = jr.at("name").get<std::string>();
      r.test_wsis = jr.at("test").get<std::vector<std::string>>();
      r.val_wsis = jr.at("val").get<std::vector<std::string>>();
      r.train_wsis = jr.at("train").get<std::vector<std::string>>();
      r.augment_splits = jr.value("augment_splits", std::vector<std::string>{"train"});
      plan.runs.push_back(std::move(r));
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("fold plan: ") + e.what());
  }
}

void write_fold_plan(const std::filesystem::path& path, const FoldPlan& plan) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << to_json(plan).dump(2) << "\n";
}

FoldPlan read_fold_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  try {
    return fold_plan_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace npseg
