#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace npseg {

using Rgb = std::array<std::uint8_t, 3>;

// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h, Rgb fill = {0, 0, 0});

  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width + x) * 3;
  }
  Rgb at(int x, int y) const {
    const auto i = index(x, y);
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set(int x, int y, Rgb c) {
    const auto i = index(x, y);
    data[i] = c[0];
    data[i + 1] = c[1];
    data[i + 2] = c[2];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  bool operator==(const RgbImage&) const = default;
};

// Binary mask, one byte per pixel holding 0 or 1.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  void set(int x, int y, std::uint8_t v) { data[static_cast<std::size_t>(y) * width + x] = v; }
  std::size_t pixel_count() const { return data.size(); }

  bool operator==(const Mask&) const = default;
};

std::size_t population_count(const Mask& mask);

// Half-open pixel bounding box of the foreground, {x0, y0, x1, y1}.
struct PixelBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool operator==(const PixelBox&) const = default;
};

// Empty box when the mask has no foreground.
PixelBox foreground_box(const Mask& mask);

// Real-valued single-channel buffer (probability maps).
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  FloatImage() = default;
  FloatImage(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

// PNG persistence. Masks are stored single-channel with values {0, 255}.
void write_png(const std::filesystem::path& path, const RgbImage& image, int compression = 6);
void write_png(const std::filesystem::path& path, const Mask& mask);
void write_gray_png(const std::filesystem::path& path, int width, int height,
                    const std::vector<std::uint8_t>& gray);

RgbImage read_png_rgb(const std::filesystem::path& path);
// Any nonzero gray value reads as foreground.
Mask read_png_mask(const std::filesystem::path& path);
// Gray values scaled to [0, 1].
FloatImage read_png_probability(const std::filesystem::path& path);

}  // namespace npseg
