#include "npseg/manifest.hpp"

#include <fstream>
#include <sstream>

#include "npseg/error.hpp"

namespace npseg {

std::string make_patch_id(const std::string& wsi_id, const std::string& seed, int size,
                          const std::string& augmentation_tag) {
  return wsi_id + "__" + seed + "__s" + std::to_string(size) + "__" + augmentation_tag;
}

nlohmann::ordered_json to_json(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["patch_id"] = r.patch_id;
  j["wsi_id"] = r.wsi_id;
  j["scanner"] = r.scanner;
  j["origin_x"] = r.origin_x;
  j["origin_y"] = r.origin_y;
  j["level"] = r.level;
  j["size"] = r.size;
  j["context_ratio"] = r.context_ratio;
  j["augmentation_tag"] = r.augmentation_tag;
  j["normalization_tag"] = r.normalization_tag;
  j["image_path"] = r.image_path;
  j["mask_path"] = r.mask_path;
  j["seed_roi_id"] = r.seed_roi_id;
  j["source_rois"] = r.source_rois;
  if (r.run) j["run"] = *r.run;
  if (r.split) j["split"] = *r.split;
  return j;
}

ManifestRecord manifest_record_from_json(const nlohmann::json& j) {
  try {
    ManifestRecord r;
    r.patch_id = j.at("patch_id").get<std::string>();
    r.wsi_id = j.at("wsi_id").get<std::string>();
    r.scanner = j.value("scanner", "");
    r.origin_x = j.at("origin_x").get<double>();
    r.origin_y = j.at("origin_y").get<double>();
    r.level = j.at("level").get<int>();
    r.size = j.at("size").get<int>();
    r.context_ratio = j.at("context_ratio").get<double>();
    r.augmentation_tag = j.value("augmentation_tag", "none");
    r.normalization_tag = j.value("normalization_tag", "raw");
    r.image_path = j.value("image_path", "");
    r.mask_path = j.value("mask_path", "");
    r.seed_roi_id = j.value("seed_roi_id", "");
    if (j.contains("source_rois")) r.source_rois = j["source_rois"].get<std::vector<std::string>>();
    if (j.contains("run")) r.run = j["run"].get<std::string>();
    if (j.contains("split")) r.split = j["split"].get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("manifest record: ") + e.what());
  }
}

std::string format_manifest(std::span<const ManifestRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<ManifestRecord> parse_manifest(std::string_view text) {
  std::vector<ManifestRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(manifest_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::ParseError,
                  "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << format_manifest(records);
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

}  // namespace npseg
