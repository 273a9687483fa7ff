#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "npseg/annotations.hpp"
#include "npseg/image.hpp"
#include "npseg/pyramid.hpp"

namespace npseg {

enum class AugmentationTag { none, corner_TL, corner_TR, corner_BL, corner_BR };
enum class NormalizationTag { raw, macenko, vahadane };

std::string_view to_string(AugmentationTag tag);
std::string_view to_string(NormalizationTag tag);
AugmentationTag augmentation_tag_from_string(std::string_view s);
NormalizationTag normalization_tag_from_string(std::string_view s);

inline constexpr int kSmallPatch = 128;
inline constexpr int kLargePatch = 256;
inline constexpr double kWorkingMagnification = 20.0;

bool is_supported_patch_size(int size);

struct PatchSpec {
  std::string wsi_id;
  Point origin;  // level-0 px
  int size = kSmallPatch;
  int working_level = 0;
  // ROI the patch was placed around; empty for background samples.
  std::string seed_roi_id;
  // Every ROI whose outline reaches into the patch, sorted by id.
  std::vector<std::string> source_rois;

  bool operator==(const PatchSpec&) const = default;
};

struct PatchSample {
  PatchSpec spec;
  RgbImage image;
  Mask mask;
  double context_ratio = 0.0;
  AugmentationTag augmentation = AugmentationTag::none;
  NormalizationTag normalization = NormalizationTag::raw;
};

// Top-left of the patch in working-level pixels.
std::pair<int, int> working_origin(const PatchSpec& spec, const WsiRecord& wsi);

// Pixel (col, row) is foreground iff its centre lies inside some ROI under the
// even-odd rule. ROIs are in level-0 px; ROIs from other slides are ignored.
Mask rasterize_mask(std::span<const PolygonRoi> rois, const PatchSpec& spec, const WsiRecord& wsi);

// Same fill rule over an arbitrary width x height window whose top-left is
// (x, y) in `level` pixels.
Mask rasterize_window(std::span<const PolygonRoi> rois, const WsiRecord& wsi, int level, int x,
                      int y, int width, int height);

// Foreground pixel box of a single ROI in global `level` pixels.
PixelBox roi_pixel_box(const PolygonRoi& roi, const WsiRecord& wsi, int level);

// IDs of ROIs whose working-level bounding box overlaps the patch's pixel centres.
std::vector<std::string> intersecting_rois(std::span<const PolygonRoi> rois,
                                           const PatchSpec& spec, const WsiRecord& wsi);

double context_ratio(const Mask& mask);

using SourceFactory = std::function<std::unique_ptr<PyramidSource>()>;

// Opens the on-disk tiled pyramid named by wsi.image_path.
SourceFactory tiled_source(const WsiRecord& wsi);
// Shares an in-memory pyramid between workers (reads are const).
SourceFactory shared_source(std::shared_ptr<const InMemoryPyramid> pyramid);

// Reads the image window for `spec` and rasterizes its mask over all ROIs.
PatchSample extract_sample(PyramidSource& source, const WsiRecord& wsi,
                           std::span<const PolygonRoi> rois, PatchSpec spec);

struct SamplingReport {
  std::vector<PatchSample> samples;
  // RoiLargerThanPatch notices; those patches are still emitted.
  std::vector<std::string> warnings;
};

// One patch per ROI, centred on the ROI centroid and clamped into the slide.
// Output is ordered by roi_id and identical for any worker count.
SamplingReport sample_patches(const SourceFactory& source, const WsiRecord& wsi,
                              std::span<const PolygonRoi> rois, int size, int level,
                              int workers = 1);

// Background patches with an all-zero mask at seeded random positions.
// Fewer than `count` are returned if free space cannot be found.
std::vector<PatchSample> sample_negative_patches(const SourceFactory& source,
                                                 const WsiRecord& wsi,
                                                 std::span<const PolygonRoi> rois, int size,
                                                 int level, int count, std::uint64_t seed);

}  // namespace npseg
