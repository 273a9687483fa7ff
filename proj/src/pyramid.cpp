#include "npseg/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "npseg/error.hpp"

namespace npseg {

RgbImage downsample_2x(const RgbImage& image) {
  const int w = std::max(1, image.width / 2);
  const int h = std::max(1, image.height / 2);
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    const int y0 = std::min(2 * y, image.height - 1);
    const int y1 = std::min(2 * y + 1, image.height - 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::min(2 * x, image.width - 1);
      const int x1 = std::min(2 * x + 1, image.width - 1);
      Rgb c{};
      for (int ch = 0; ch < 3; ++ch) {
        const int sum = image.data[image.index(x0, y0) + ch] + image.data[image.index(x1, y0) + ch] +
                        image.data[image.index(x0, y1) + ch] + image.data[image.index(x1, y1) + ch];
        c[ch] = static_cast<std::uint8_t>((sum + 2) / 4);
      }
      out.set(x, y, c);
    }
  }
  return out;
}

namespace {

RgbImage crop(const RgbImage& src, int x, int y, int width, int height) {
  RgbImage out(width, height);
  for (int row = 0; row < height; ++row) {
    std::copy_n(src.data.begin() + static_cast<std::ptrdiff_t>(src.index(x, y + row)),
                static_cast<std::ptrdiff_t>(width) * 3,
                out.data.begin() + static_cast<std::ptrdiff_t>(out.index(0, row)));
  }
  return out;
}

}  // namespace

InMemoryPyramid::InMemoryPyramid(RgbImage level0, int levels) {
  if (levels < 1) throw Error(ErrorCode::InvalidRecord, "pyramid needs at least one level");
  levels_.push_back(std::move(level0));
  for (int k = 1; k < levels; ++k) levels_.push_back(downsample_2x(levels_.back()));
}

LevelSize InMemoryPyramid::level_size(int level) const {
  if (level < 0 || level >= level_count()) {
    throw Error(ErrorCode::UnknownLevel, "pyramid has no level " + std::to_string(level));
  }
  const RgbImage& img = levels_[static_cast<std::size_t>(level)];
  return {img.width, img.height};
}

RgbImage InMemoryPyramid::read_window(int level, int x, int y, int width, int height) {
  return crop(levels_.at(static_cast<std::size_t>(level)), x, y, width, height);
}

TiledPyramid::TiledPyramid(std::filesystem::path dir, std::vector<LevelSize> levels,
                           int tile_size)
    : dir_(std::move(dir)), levels_(std::move(levels)), tile_size_(tile_size) {}

std::unique_ptr<TiledPyramid> TiledPyramid::open(const WsiRecord& wsi) {
  const auto meta = wsi.image_path / "tiles.meta";
  std::ifstream in(meta);
  if (!in) throw Error(ErrorCode::UnreadableImage, "missing tile layout " + meta.string());
  int tile_size = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key, eq;
    int value = 0;
    if (ls >> key >> eq >> value && key == "tile_size" && eq == "=") tile_size = value;
  }
  if (tile_size <= 0) throw Error(ErrorCode::UnreadableImage, "bad tile_size in " + meta.string());
  return std::unique_ptr<TiledPyramid>(
      new TiledPyramid(wsi.image_path, wsi.level_dimensions, tile_size));
}

LevelSize TiledPyramid::level_size(int level) const {
  if (level < 0 || level >= level_count()) {
    throw Error(ErrorCode::UnknownLevel, "pyramid has no level " + std::to_string(level));
  }
  return levels_[static_cast<std::size_t>(level)];
}

const RgbImage& TiledPyramid::tile(int level, int tx, int ty) {
  const auto key = std::make_tuple(level, tx, ty);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;

  constexpr std::size_t kMaxCachedTiles = 64;
  if (cache_order_.size() >= kMaxCachedTiles) {
    cache_.erase(cache_order_.front());
    cache_order_.erase(cache_order_.begin());
  }
  const auto path = dir_ / ("level_" + std::to_string(level)) /
                    (std::to_string(tx) + "_" + std::to_string(ty) + ".png");
  RgbImage img = read_png_rgb(path);
  const LevelSize size = level_size(level);
  const int expect_w = std::min(tile_size_, size.width - tx * tile_size_);
  const int expect_h = std::min(tile_size_, size.height - ty * tile_size_);
  if (img.width != expect_w || img.height != expect_h) {
    throw Error(ErrorCode::UnreadableImage, "tile has unexpected size: " + path.string());
  }
  cache_order_.push_back(key);
  return cache_.emplace(key, std::move(img)).first->second;
}

RgbImage TiledPyramid::read_window(int level, int x, int y, int width, int height) {
  RgbImage out(width, height);
  const int tx0 = x / tile_size_, tx1 = (x + width - 1) / tile_size_;
  const int ty0 = y / tile_size_, ty1 = (y + height - 1) / tile_size_;
  for (int ty = ty0; ty <= ty1; ++ty) {
    for (int tx = tx0; tx <= tx1; ++tx) {
      const RgbImage& t = tile(level, tx, ty);
      const int gx0 = std::max(x, tx * tile_size_);
      const int gy0 = std::max(y, ty * tile_size_);
      const int gx1 = std::min(x + width, tx * tile_size_ + t.width);
      const int gy1 = std::min(y + height, ty * tile_size_ + t.height);
      for (int gy = gy0; gy < gy1; ++gy) {
        std::copy_n(t.data.begin() +
                        static_cast<std::ptrdiff_t>(t.index(gx0 - tx * tile_size_, gy - ty * tile_size_)),
                    static_cast<std::ptrdiff_t>(gx1 - gx0) * 3,
                    out.data.begin() + static_cast<std::ptrdiff_t>(out.index(gx0 - x, gy - y)));
      }
    }
  }
  return out;
}

void write_tiled_pyramid(const std::filesystem::path& dir, const InMemoryPyramid& pyramid,
                         int tile_size, int png_compression) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream meta(dir / "tiles.meta");
    if (!meta) throw Error(ErrorCode::IoFailure, "cannot write " + (dir / "tiles.meta").string());
    meta << "tile_size = " << tile_size << "\nformat = png\n";
  }
  for (int level = 0; level < pyramid.level_count(); ++level) {
    const RgbImage& img = pyramid.level_image(level);
    const auto level_dir = dir / ("level_" + std::to_string(level));
    std::filesystem::create_directories(level_dir);
    for (int ty = 0; ty * tile_size < img.height; ++ty) {
      for (int tx = 0; tx * tile_size < img.width; ++tx) {
        const int w = std::min(tile_size, img.width - tx * tile_size);
        const int h = std::min(tile_size, img.height - ty * tile_size);
        write_png(level_dir / (std::to_string(tx) + "_" + std::to_string(ty) + ".png"),
                  crop(img, tx * tile_size, ty * tile_size, w, h), png_compression);
      }
    }
  }
}

Point level_to_level0(const WsiRecord& wsi, int level, int x, int y) {
  return {x * downsample_x(wsi, level), y * downsample_y(wsi, level)};
}

std::pair<int, int> level0_to_level(const WsiRecord& wsi, int level, Point origin) {
  return {static_cast<int>(std::llround(origin.x / downsample_x(wsi, level))),
          static_cast<int>(std::llround(origin.y / downsample_y(wsi, level)))};
}

RgbImage read_region(PyramidSource& source, const WsiRecord& wsi, Point origin, int size,
                     int level) {
  const LevelSize extent = wsi.level(level);
  if (size <= 0) throw Error(ErrorCode::OutOfBounds, "region size must be positive");
  const auto [x, y] = level0_to_level(wsi, level, origin);
  if (origin.x < 0.0 || origin.y < 0.0 || x + size > extent.width || y + size > extent.height) {
    throw Error(ErrorCode::OutOfBounds,
                wsi.wsi_id + ": region " + std::to_string(size) + "px at level " +
                    std::to_string(level) + " origin (" + std::to_string(x) + ", " +
                    std::to_string(y) + ") exceeds " + std::to_string(extent.width) + "x" +
                    std::to_string(extent.height));
  }
  if (source.level_count() <= level || source.level_size(level) != extent) {
    throw Error(ErrorCode::UnreadableImage,
                wsi.wsi_id + ": image pyramid does not match metadata at level " +
                    std::to_string(level));
  }
  return source.read_window(level, x, y, size, size);
}

RgbImage read_region(const WsiRecord& wsi, Point origin, int size, int level) {
  auto source = TiledPyramid::open(wsi);
  return read_region(*source, wsi, origin, size, level);
}

}  // namespace npseg
