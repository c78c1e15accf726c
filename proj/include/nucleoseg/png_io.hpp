#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/image.hpp"

namespace nseg {

namespace detail {

struct PngFile {
  std::FILE* fp = nullptr;
  explicit PngFile(const std::filesystem::path& path, const char* mode) {
    fp = std::fopen(path.string().c_str(), mode);
    if (!fp) throw DataError("cannot open " + path.string());
  }
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
  PngFile(const PngFile&) = delete;
  PngFile& operator=(const PngFile&) = delete;
};

}  // namespace detail

// Reads an 8-bit PNG as RGB; palette and gray inputs are expanded and
// alpha is dropped.
inline ImageU8 read_png_rgb8(const std::filesystem::path& path) {
  detail::PngFile f(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng init failed");
  }
  ImageU8 img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, f.fp);
  png_read_info(png, info);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  img.h = png_get_image_height(png, info);
  img.w = png_get_image_width(png, info);
  img.channels = 3;
  if (png_get_rowbytes(png, info) != std::size_t(img.w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unexpected row layout in " + path.string());
  }
  img.data.resize(std::size_t(img.h) * img.w * 3);
  std::vector<png_bytep> rows(img.h);
  for (std::uint32_t y = 0; y < img.h; ++y)
    rows[y] = img.data.data() + std::size_t(y) * img.w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png_rgb8(const std::filesystem::path& path, const ImageU8& img) {
  if (img.channels != 3) throw ShapeError("write_png_rgb8 wants 3 channels");
  detail::PngFile f(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG write failed: " + path.string());
  }
  png_init_io(png, f.fp);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.h);
  for (std::uint32_t y = 0; y < img.h; ++y)
    rows[y] = const_cast<png_bytep>(img.data.data() + std::size_t(y) * img.w * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_png_gray8(const std::filesystem::path& path, const ImageU8& img) {
  if (img.channels != 1) throw ShapeError("write_png_gray8 wants 1 channel");
  detail::PngFile f(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG write failed: " + path.string());
  }
  png_init_io(png, f.fp);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.h);
  for (std::uint32_t y = 0; y < img.h; ++y)
    rows[y] = const_cast<png_bytep>(img.data.data() + std::size_t(y) * img.w);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Instance label maps travel as 16-bit grayscale PNGs. Byte order in
// the file is big endian per the PNG spec; conversion is done by hand
// so host endianness never matters.
inline void write_png_label16(const std::filesystem::path& path, const LabelMap& lm) {
  if (lm.max_id() > 0xffff) throw DataError("label id exceeds 16-bit range");
  detail::PngFile f(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG write failed: " + path.string());
  }
  png_init_io(png, f.fp);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, lm.w, lm.h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(std::size_t(lm.w) * 2);
  for (std::uint32_t y = 0; y < lm.h; ++y) {
    for (std::uint32_t x = 0; x < lm.w; ++x) {
      std::uint32_t v = lm.at(y, x);
      row[2 * x] = std::uint8_t(v >> 8);
      row[2 * x + 1] = std::uint8_t(v & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline LabelMap read_png_label16(const std::filesystem::path& path) {
  detail::PngFile f(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, f.fp);
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY ||
      png_get_bit_depth(png, info) != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("label map must be 16-bit grayscale: " + path.string());
  }
  LabelMap lm(png_get_image_height(png, info), png_get_image_width(png, info));
  std::vector<std::uint8_t> row(std::size_t(lm.w) * 2);
  for (std::uint32_t y = 0; y < lm.h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (std::uint32_t x = 0; x < lm.w; ++x)
      lm.at(y, x) = (std::uint32_t(row[2 * x]) << 8) | row[2 * x + 1];
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return lm;
}

}  // namespace nseg
