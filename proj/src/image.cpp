#include "npseg/image.hpp"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "npseg/error.hpp"

namespace npseg {

RgbImage::RgbImage(int w, int h, Rgb fill) : width(w), height(h) {
  data.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < data.size(); i += 3) {
    data[i] = fill[0];
    data[i + 1] = fill[1];
    data[i + 2] = fill[2];
  }
}

std::size_t population_count(const Mask& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.data.begin(), mask.data.end(), [](std::uint8_t v) { return v != 0; }));
}

PixelBox foreground_box(const Mask& mask) {
  PixelBox box{mask.width, mask.height, 0, 0};
  bool any = false;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      any = true;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x + 1);
      box.y1 = std::max(box.y1, y + 1);
    }
  }
  return any ? box : PixelBox{};
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_raw(const std::filesystem::path& path, int width, int height, int color_type,
               int channels, const std::uint8_t* pixels, int compression) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorCode::IoFailure, "cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoFailure, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoFailure, "png encode failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, compression);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels + stride * y));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Decodes any 8-bit-representable PNG to gray (1) or RGB (3) channels.
Decoded read_raw(const std::filesystem::path& path, bool want_rgb) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error(ErrorCode::UnreadableImage, "cannot open: " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorCode::UnreadableImage, "not a PNG file: " + path.string());
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::UnreadableImage, "libpng initialisation failed");
  }
  Decoded out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::UnreadableImage, "png decode failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool is_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (want_rgb && is_gray) png_set_gray_to_rgb(png);
  if (!want_rgb && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.pixels.resize(stride * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image, int compression) {
  write_raw(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 3, image.data.data(),
            compression);
}

void write_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> gray(mask.data.size());
  std::transform(mask.data.begin(), mask.data.end(), gray.begin(),
                 [](std::uint8_t v) { return v ? std::uint8_t{255} : std::uint8_t{0}; });
  write_raw(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, 1, gray.data(), 6);
}

void write_gray_png(const std::filesystem::path& path, int width, int height,
                    const std::vector<std::uint8_t>& gray) {
  if (gray.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::ShapeMismatch, "gray buffer size does not match dimensions");
  }
  write_raw(path, width, height, PNG_COLOR_TYPE_GRAY, 1, gray.data(), 6);
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  Decoded d = read_raw(path, true);
  RgbImage img;
  img.width = d.width;
  img.height = d.height;
  img.data = std::move(d.pixels);
  return img;
}

Mask read_png_mask(const std::filesystem::path& path) {
  Decoded d = read_raw(path, false);
  Mask m(d.width, d.height);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = d.pixels[i] ? 1 : 0;
  return m;
}

FloatImage read_png_probability(const std::filesystem::path& path) {
  Decoded d = read_raw(path, false);
  FloatImage f(d.width, d.height);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = d.pixels[i] / 255.0;
  return f;
}

}  // namespace npseg
