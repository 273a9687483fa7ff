#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "npseg/tiling.hpp"

namespace npseg {

enum class Corner { TL, TR, BL, BR };

inline constexpr std::array<Corner, 4> kCorners{Corner::TL, Corner::TR, Corner::BL, Corner::BR};

std::string_view to_string(Corner corner);
AugmentationTag corner_tag(Corner corner);

struct Offset {
  int dx = 0;
  int dy = 0;
  bool operator==(const Offset&) const = default;
};

// Translation that moves `roi_box` (patch pixel coordinates, half-open) flush
// against `corner`, inset by `margin` pixels. Throws BBoxTooLarge when the box
// plus margin does not fit in a size x size patch.
Offset shift_offset_for_corner(const PixelBox& roi_box, int size, Corner corner, int margin = 0);

struct DroppedVariant {
  Corner corner;
  std::string reason;
};

struct ShiftResult {
  std::vector<PatchSample> variants;  // TL, TR, BL, BR order, minus drops
  std::vector<DroppedVariant> dropped;
};

// Re-windows the slide so the seed ROI sits in each corner of the patch. The
// image is re-read at the shifted origin and the mask re-rasterized over every
// ROI. Variants whose window would leave the slide are dropped, not clamped.
ShiftResult roi_shift_variants(const PatchSample& sample, PyramidSource& source,
                               const WsiRecord& wsi, std::span<const PolygonRoi> rois,
                               int margin = 0);

}  // namespace npseg
