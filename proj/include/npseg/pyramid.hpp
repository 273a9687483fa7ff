#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <tuple>
#include <vector>

#include "npseg/annotations.hpp"
#include "npseg/image.hpp"

namespace npseg {

// Random access to a multi-resolution RGB pyramid. Implementations are not
// required to be thread-safe; give each worker its own handle.
class PyramidSource {
 public:
  virtual ~PyramidSource() = default;
  virtual int level_count() const = 0;
  virtual LevelSize level_size(int level) const = 0;
  // Window in the level's own pixel grid. Callers guarantee it is in bounds.
  virtual RgbImage read_window(int level, int x, int y, int width, int height) = 0;
};

// Holds every level in memory; level k+1 is a 2x2 box average of level k.
class InMemoryPyramid final : public PyramidSource {
 public:
  InMemoryPyramid(RgbImage level0, int levels);

  int level_count() const override { return static_cast<int>(levels_.size()); }
  LevelSize level_size(int level) const override;
  RgbImage read_window(int level, int x, int y, int width, int height) override;
  const RgbImage& level_image(int level) const { return levels_.at(static_cast<std::size_t>(level)); }

 private:
  std::vector<RgbImage> levels_;
};

RgbImage downsample_2x(const RgbImage& image);

// On-disk layout: <dir>/level_<k>/<tx>_<ty>.png tiles plus <dir>/tiles.meta
// recording the tile size. Level sizes come from the WSI record.
class TiledPyramid final : public PyramidSource {
 public:
  static std::unique_ptr<TiledPyramid> open(const WsiRecord& wsi);

  int level_count() const override { return static_cast<int>(levels_.size()); }
  LevelSize level_size(int level) const override;
  RgbImage read_window(int level, int x, int y, int width, int height) override;
  int tile_size() const { return tile_size_; }

 private:
  TiledPyramid(std::filesystem::path dir, std::vector<LevelSize> levels, int tile_size);
  const RgbImage& tile(int level, int tx, int ty);

  std::filesystem::path dir_;
  std::vector<LevelSize> levels_;
  int tile_size_;
  std::map<std::tuple<int, int, int>, RgbImage> cache_;
  std::vector<std::tuple<int, int, int>> cache_order_;
};

void write_tiled_pyramid(const std::filesystem::path& dir, const InMemoryPyramid& pyramid,
                         int tile_size, int png_compression = 6);

// size x size window at `level` whose top-left corner is `origin` in level-0
// pixels. Throws OutOfBounds when the window leaves the level, UnknownLevel for
// a missing level and UnreadableImage when pixel data cannot be decoded.
RgbImage read_region(PyramidSource& source, const WsiRecord& wsi, Point origin, int size,
                     int level);
RgbImage read_region(const WsiRecord& wsi, Point origin, int size, int level);

// Level-0 origin of a level pixel position, and the inverse.
Point level_to_level0(const WsiRecord& wsi, int level, int x, int y);
std::pair<int, int> level0_to_level(const WsiRecord& wsi, int level, Point origin);

}  // namespace npseg
