#include "npseg/tiling.hpp"

#include <algorithm>
#include <cmath>

#include "npseg/error.hpp"
#include "npseg/parallel.hpp"
#include "npseg/rng.hpp"

namespace npseg {

std::string_view to_string(AugmentationTag tag) {
  switch (tag) {
    case AugmentationTag::none: return "none";
    case AugmentationTag::corner_TL: return "corner_TL";
    case AugmentationTag::corner_TR: return "corner_TR";
    case AugmentationTag::corner_BL: return "corner_BL";
    case AugmentationTag::corner_BR: return "corner_BR";
  }
  return "none";
}

std::string_view to_string(NormalizationTag tag) {
  switch (tag) {
    case NormalizationTag::raw: return "raw";
    case NormalizationTag::macenko: return "macenko";
    case NormalizationTag::vahadane: return "vahadane";
  }
  return "raw";
}

AugmentationTag augmentation_tag_from_string(std::string_view s) {
  for (auto tag : {AugmentationTag::none, AugmentationTag::corner_TL, AugmentationTag::corner_TR,
                   AugmentationTag::corner_BL, AugmentationTag::corner_BR}) {
    if (to_string(tag) == s) return tag;
  }
  throw Error(ErrorCode::ParseError, "unknown augmentation tag '" + std::string(s) + "'");
}

NormalizationTag normalization_tag_from_string(std::string_view s) {
  for (auto tag : {NormalizationTag::raw, NormalizationTag::macenko, NormalizationTag::vahadane}) {
    if (to_string(tag) == s) return tag;
  }
  throw Error(ErrorCode::ParseError, "unknown normalization tag '" + std::string(s) + "'");
}

bool is_supported_patch_size(int size) { return size == kSmallPatch || size == kLargePatch; }

std::pair<int, int> working_origin(const PatchSpec& spec, const WsiRecord& wsi) {
  return level0_to_level(wsi, spec.working_level, spec.origin);
}

namespace {

// Fills the pixels of one row whose centres fall inside the polygon.
void fill_row(std::span<const Point> v, double center_y, double origin_x, int width,
              std::vector<double>& crossings, std::uint8_t* row) {
  crossings.clear();
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > center_y) != (v[j].y > center_y)) {
      crossings.push_back(v[i].x + (center_y - v[i].y) * (v[j].x - v[i].x) / (v[j].y - v[i].y));
    }
  }
  std::sort(crossings.begin(), crossings.end());
  // Inside iff an odd number of crossings lie strictly right of the centre,
  // i.e. the centre is in [c[2k], c[2k+1]).
  for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
    const double a = crossings[k];
    const double b = crossings[k + 1];
    const int first = std::max(0, static_cast<int>(std::floor(a - origin_x - 0.5)) - 1);
    const int last = std::min(width - 1, static_cast<int>(std::ceil(b - origin_x - 0.5)) + 1);
    for (int col = first; col <= last; ++col) {
      const double cx = origin_x + col + 0.5;
      if (a <= cx && cx < b) row[col] = 1;
    }
  }
}

struct LevelRoi {
  const PolygonRoi* roi;
  PolygonRoi scaled;
  Bounds box;
};

std::vector<LevelRoi> rois_in_window(std::span<const PolygonRoi> rois, const WsiRecord& wsi,
                                     int level, int ox, int oy, int width, int height) {
  std::vector<LevelRoi> out;
  for (const PolygonRoi& roi : rois) {
    if (roi.wsi_id != wsi.wsi_id || roi.vertices.size() < 3) continue;
    PolygonRoi scaled = scale_to_level(roi, 0, level, wsi);
    const Bounds box = bounding_box(scaled);
    // Reject boxes that cannot contain any pixel centre of the window.
    if (box.x1 < ox + 0.5 || box.x0 > ox + width - 0.5 || box.y1 < oy + 0.5 ||
        box.y0 > oy + height - 0.5) {
      continue;
    }
    out.push_back({&roi, std::move(scaled), box});
  }
  return out;
}

}  // namespace

Mask rasterize_window(std::span<const PolygonRoi> rois, const WsiRecord& wsi, int level, int x,
                      int y, int width, int height) {
  Mask mask(width, height);
  std::vector<double> crossings;
  for (const LevelRoi& lr : rois_in_window(rois, wsi, level, x, y, width, height)) {
    const int row0 = std::max(0, static_cast<int>(std::floor(lr.box.y0 - y - 0.5)));
    const int row1 = std::min(height - 1, static_cast<int>(std::ceil(lr.box.y1 - y - 0.5)));
    for (int row = row0; row <= row1; ++row) {
      fill_row(lr.scaled.vertices, y + row + 0.5, x, width, crossings,
               mask.data.data() + static_cast<std::size_t>(row) * width);
    }
  }
  return mask;
}

Mask rasterize_mask(std::span<const PolygonRoi> rois, const PatchSpec& spec,
                    const WsiRecord& wsi) {
  if (spec.wsi_id != wsi.wsi_id) return Mask(spec.size, spec.size);
  const auto [ox, oy] = working_origin(spec, wsi);
  return rasterize_window(rois, wsi, spec.working_level, ox, oy, spec.size, spec.size);
}

PixelBox roi_pixel_box(const PolygonRoi& roi, const WsiRecord& wsi, int level) {
  const Bounds b = bounding_box(scale_to_level(roi, 0, level, wsi));
  const int x = static_cast<int>(std::floor(b.x0)) - 1;
  const int y = static_cast<int>(std::floor(b.y0)) - 1;
  const int w = static_cast<int>(std::ceil(b.x1)) + 1 - x;
  const int h = static_cast<int>(std::ceil(b.y1)) + 1 - y;
  PolygonRoi only = roi;
  only.wsi_id = wsi.wsi_id;
  PixelBox box = foreground_box(rasterize_window(std::span(&only, 1), wsi, level, x, y, w, h));
  if (box.empty()) return box;
  return {box.x0 + x, box.y0 + y, box.x1 + x, box.y1 + y};
}

std::vector<std::string> intersecting_rois(std::span<const PolygonRoi> rois,
                                           const PatchSpec& spec, const WsiRecord& wsi) {
  std::vector<std::string> ids;
  if (spec.wsi_id != wsi.wsi_id) return ids;
  const auto [ox, oy] = working_origin(spec, wsi);
  for (const LevelRoi& lr : rois_in_window(rois, wsi, spec.working_level, ox, oy, spec.size,
                                           spec.size)) {
    ids.push_back(lr.roi->roi_id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

double context_ratio(const Mask& mask) {
  if (mask.pixel_count() == 0) return 0.0;
  return static_cast<double>(population_count(mask)) / static_cast<double>(mask.pixel_count());
}

SourceFactory tiled_source(const WsiRecord& wsi) {
  return [wsi]() -> std::unique_ptr<PyramidSource> { return TiledPyramid::open(wsi); };
}

namespace {

class SharedView final : public PyramidSource {
 public:
  explicit SharedView(std::shared_ptr<const InMemoryPyramid> p) : p_(std::move(p)) {}
  int level_count() const override { return p_->level_count(); }
  LevelSize level_size(int level) const override { return p_->level_size(level); }
  RgbImage read_window(int level, int x, int y, int w, int h) override {
    const RgbImage& img = p_->level_image(level);
    RgbImage out(w, h);
    for (int row = 0; row < h; ++row) {
      std::copy_n(img.data.begin() + static_cast<std::ptrdiff_t>(img.index(x, y + row)),
                  static_cast<std::ptrdiff_t>(w) * 3,
                  out.data.begin() + static_cast<std::ptrdiff_t>(out.index(0, row)));
    }
    return out;
  }

 private:
  std::shared_ptr<const InMemoryPyramid> p_;
};

}  // namespace

SourceFactory shared_source(std::shared_ptr<const InMemoryPyramid> pyramid) {
  return [pyramid]() -> std::unique_ptr<PyramidSource> {
    return std::make_unique<SharedView>(pyramid);
  };
}

PatchSample extract_sample(PyramidSource& source, const WsiRecord& wsi,
                           std::span<const PolygonRoi> rois, PatchSpec spec) {
  PatchSample sample;
  sample.spec = std::move(spec);
  sample.spec.source_rois = intersecting_rois(rois, sample.spec, wsi);
  sample.image = read_region(source, wsi, sample.spec.origin, sample.spec.size,
                             sample.spec.working_level);
  sample.mask = rasterize_mask(rois, sample.spec, wsi);
  sample.context_ratio = context_ratio(sample.mask);
  return sample;
}

SamplingReport sample_patches(const SourceFactory& source, const WsiRecord& wsi,
                              std::span<const PolygonRoi> rois, int size, int level,
                              int workers) {
  if (!is_supported_patch_size(size)) {
    throw Error(ErrorCode::InvalidRecord, "patch size must be 128 or 256, got " +
                                              std::to_string(size));
  }
  const LevelSize extent = wsi.level(level);
  if (extent.width < size || extent.height < size) {
    throw Error(ErrorCode::OutOfBounds, wsi.wsi_id + ": level " + std::to_string(level) +
                                            " is smaller than a " + std::to_string(size) +
                                            "px patch");
  }

  std::vector<const PolygonRoi*> seeds;
  for (const PolygonRoi& roi : rois) {
    if (roi.wsi_id == wsi.wsi_id) seeds.push_back(&roi);
  }
  std::sort(seeds.begin(), seeds.end(),
            [](const PolygonRoi* a, const PolygonRoi* b) { return a->roi_id < b->roi_id; });

  SamplingReport report;
  report.samples.resize(seeds.size());
  std::vector<std::string> notices(seeds.size());
  std::vector<std::unique_ptr<PyramidSource>> handles(
      static_cast<std::size_t>(std::max(1, workers)));

  parallel_for(seeds.size(), workers, [&](std::size_t i, int worker) {
    auto& handle = handles[static_cast<std::size_t>(worker)];
    if (!handle) handle = source();
    const PolygonRoi scaled = scale_to_level(*seeds[i], 0, level, wsi);
    const Point c = centroid(scaled);
    const Bounds box = bounding_box(scaled);
    if (box.width() > size || box.height() > size) {
      notices[i] = std::string(to_string(ErrorCode::RoiLargerThanPatch)) + ": " +
                   seeds[i]->roi_id + " spans " + std::to_string(box.width()) + "x" +
                   std::to_string(box.height()) + " px at level " + std::to_string(level);
    }
    const int ox = std::clamp(static_cast<int>(std::llround(c.x - size / 2.0)), 0,
                              extent.width - size);
    const int oy = std::clamp(static_cast<int>(std::llround(c.y - size / 2.0)), 0,
                              extent.height - size);
    PatchSpec spec;
    spec.wsi_id = wsi.wsi_id;
    spec.origin = level_to_level0(wsi, level, ox, oy);
    spec.size = size;
    spec.working_level = level;
    spec.seed_roi_id = seeds[i]->roi_id;
    report.samples[i] = extract_sample(*handle, wsi, rois, std::move(spec));
  });

  for (auto& n : notices) {
    if (!n.empty()) report.warnings.push_back(std::move(n));
  }
  return report;
}

std::vector<PatchSample> sample_negative_patches(const SourceFactory& source,
                                                 const WsiRecord& wsi,
                                                 std::span<const PolygonRoi> rois, int size,
                                                 int level, int count, std::uint64_t seed) {
  const LevelSize extent = wsi.level(level);
  std::vector<PatchSample> out;
  if (count <= 0 || extent.width < size || extent.height < size) return out;
  auto handle = source();
  Rng rng(seed);
  const int max_attempts = 50 * count;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < count;
       ++attempt) {
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(extent.width - size + 1)));
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(extent.height - size + 1)));
    PatchSpec spec;
    spec.wsi_id = wsi.wsi_id;
    spec.origin = level_to_level0(wsi, level, ox, oy);
    spec.size = size;
    spec.working_level = level;
    if (!intersecting_rois(rois, spec, wsi).empty()) continue;
    out.push_back(extract_sample(*handle, wsi, rois, std::move(spec)));
  }
  return out;
}

}  // namespace npseg
