#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace npseg {

// One JSON-lines row of the patch manifest. Paths are relative to the
// manifest's directory so artifact trees can be moved or compared.
struct ManifestRecord {
  std::string patch_id;
  std::string wsi_id;
  std::string scanner;
  double origin_x = 0.0;
  double origin_y = 0.0;
  int level = 0;
  int size = 0;
  double context_ratio = 0.0;
  std::string augmentation_tag = "none";
  std::string normalization_tag = "raw";
  std::string image_path;
  std::string mask_path;
  // Provenance beyond the core fields: the ROI the patch was placed around and
  // every ROI it overlaps (more than one marks a shared/duplicate object).
  std::string seed_roi_id;
  std::vector<std::string> source_rois;
  // Present only in per-run split listings.
  std::optional<std::string> run;
  std::optional<std::string> split;

  bool operator==(const ManifestRecord&) const = default;
};

std::string make_patch_id(const std::string& wsi_id, const std::string& seed, int size,
                          const std::string& augmentation_tag);

nlohmann::ordered_json to_json(const ManifestRecord& record);
ManifestRecord manifest_record_from_json(const nlohmann::json& j);

std::string format_manifest(std::span<const ManifestRecord> records);
std::vector<ManifestRecord> parse_manifest(std::string_view text);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

}  // namespace npseg
