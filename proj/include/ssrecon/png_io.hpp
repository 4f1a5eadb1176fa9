#pragma once

#include <png.h>

#include <cstdio>
#include <string>
#include <vector>

#include "array.hpp"

// 8-bit PNG I/O via libpng. Images are [H,W,3], masks [H,W], values in [0,1].

namespace ssr::render {

namespace detail {

struct FileCloser {
  std::FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

inline unsigned char to_byte(double x) {
  int v = static_cast<int>(std::lround(x * 255.0));
  return static_cast<unsigned char>(std::min(255, std::max(0, v)));
}

inline void write_png_impl(const std::string& path, const Array& img, int channels) {
  const int h = img.dim(0), w = img.dim(1);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  SSR_CHECK(f != nullptr, "write_png: cannot open " << path);
  FileCloser closer{f};

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  SSR_CHECK(png, "write_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    SSR_CHECK(false, "write_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    SSR_CHECK(false, "write_png: libpng error writing " << path);
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<size_t>(w) * channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        row[static_cast<size_t>(x) * channels + c] =
            to_byte(img[(static_cast<int64_t>(y) * w + x) * channels + c]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline void write_png_rgb(const std::string& path, const Array& img) {
  SSR_CHECK(img.ndim() == 3 && img.dim(2) == 3, "write_png_rgb: want [H,W,3]");
  detail::write_png_impl(path, img, 3);
}

inline void write_png_gray(const std::string& path, const Array& img) {
  SSR_CHECK(img.ndim() == 2, "write_png_gray: want [H,W]");
  detail::write_png_impl(path, img, 1);
}

// Reads 8/16-bit gray or color PNG; returns [H,W,3] for color input and
// [H,W] for grayscale, values in [0,1].
inline Array read_png(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  SSR_CHECK(f != nullptr, "read_png: cannot open " << path);
  detail::FileCloser closer{f};

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  SSR_CHECK(png, "read_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    SSR_CHECK(false, "read_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    SSR_CHECK(false, "read_png: libpng error reading " << path);
  }
  png_init_io(png, f);
  png_read_info(png, info);

  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = static_cast<int>(png_get_channels(png, info));
  SSR_CHECK(channels == 1 || channels == 3, "read_png: unsupported channel count " << channels);

  std::vector<unsigned char> data(static_cast<size_t>(h) * w * channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = data.data() + static_cast<size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Array out(channels == 3 ? Shape{static_cast<int>(h), static_cast<int>(w), 3}
                          : Shape{static_cast<int>(h), static_cast<int>(w)});
  for (size_t i = 0; i < data.size(); ++i) out[static_cast<int64_t>(i)] = data[i] / 255.0;
  return out;
}

}  // namespace ssr::render
