#include "npseg/augmentation.hpp"

#include <algorithm>

#include "npseg/error.hpp"

namespace npseg {

std::string_view to_string(Corner corner) {
  switch (corner) {
    case Corner::TL: return "TL";
    case Corner::TR: return "TR";
    case Corner::BL: return "BL";
    case Corner::BR: return "BR";
  }
  return "TL";
}

AugmentationTag corner_tag(Corner corner) {
  switch (corner) {
    case Corner::TL: return AugmentationTag::corner_TL;
    case Corner::TR: return AugmentationTag::corner_TR;
    case Corner::BL: return AugmentationTag::corner_BL;
    case Corner::BR: return AugmentationTag::corner_BR;
  }
  return AugmentationTag::none;
}

Offset shift_offset_for_corner(const PixelBox& box, int size, Corner corner, int margin) {
  if (margin < 0) throw Error(ErrorCode::BBoxTooLarge, "negative corner margin");
  if (box.empty() || box.width() + margin > size || box.height() + margin > size) {
    throw Error(ErrorCode::BBoxTooLarge,
                "box " + std::to_string(box.width()) + "x" + std::to_string(box.height()) +
                    " with margin " + std::to_string(margin) + " does not fit a " +
                    std::to_string(size) + "px patch");
  }
  const bool left = corner == Corner::TL || corner == Corner::BL;
  const bool top = corner == Corner::TL || corner == Corner::TR;
  return {left ? margin - box.x0 : (size - margin) - box.x1,
          top ? margin - box.y0 : (size - margin) - box.y1};
}

ShiftResult roi_shift_variants(const PatchSample& sample, PyramidSource& source,
                               const WsiRecord& wsi, std::span<const PolygonRoi> rois,
                               int margin) {
  const PatchSpec& spec = sample.spec;
  if (sample.augmentation != AugmentationTag::none) {
    throw Error(ErrorCode::AlreadyAugmented,
                spec.wsi_id + "/" + spec.seed_roi_id + " is already tagged " +
                    std::string(to_string(sample.augmentation)));
  }
  if (spec.seed_roi_id.empty() || population_count(sample.mask) == 0) {
    throw Error(ErrorCode::EmptyMask, spec.wsi_id + ": patch has no object to shift");
  }
  const auto seed = std::find_if(rois.begin(), rois.end(), [&](const PolygonRoi& r) {
    return r.roi_id == spec.seed_roi_id && r.wsi_id == spec.wsi_id;
  });
  if (seed == rois.end()) {
    throw Error(ErrorCode::InvalidRecord, "seed roi " + spec.seed_roi_id + " not supplied");
  }

  const auto [ox, oy] = working_origin(spec, wsi);
  const PixelBox global = roi_pixel_box(*seed, wsi, spec.working_level);
  const PixelBox local{global.x0 - ox, global.y0 - oy, global.x1 - ox, global.y1 - oy};
  const LevelSize extent = wsi.level(spec.working_level);

  ShiftResult result;
  for (Corner corner : kCorners) {
    const Offset off = shift_offset_for_corner(local, spec.size, corner, margin);
    const int nx = ox - off.dx;
    const int ny = oy - off.dy;
    if (nx < 0 || ny < 0 || nx + spec.size > extent.width || ny + spec.size > extent.height) {
      result.dropped.push_back(
          {corner, std::string(to_string(ErrorCode::OutOfBounds)) + ": " + spec.wsi_id + "/" +
                       spec.seed_roi_id + " corner " + std::string(to_string(corner)) +
                       " window at (" + std::to_string(nx) + ", " + std::to_string(ny) +
                       ") leaves the slide"});
      continue;
    }
    PatchSpec shifted = spec;
    shifted.origin = level_to_level0(wsi, spec.working_level, nx, ny);
    PatchSample variant = extract_sample(source, wsi, rois, std::move(shifted));
    variant.augmentation = corner_tag(corner);
    result.variants.push_back(std::move(variant));
  }
  return result;
}

}  // namespace npseg
