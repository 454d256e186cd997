// Image container and file I/O: PNG read/write (libpng) and read-only import
// of uncompressed 24-bit BMP. Pixels are 8-bit RGB, interleaved; tensor
// conversions produce planar 3 x h x w in [0, 255].
#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "leukonet/tensor.hpp"

namespace leukonet {

struct ImageU8 {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, height*width*3

  static ImageU8 blank(std::int64_t h, std::int64_t w, std::uint8_t value = 255) {
    ImageU8 img;
    img.height = h;
    img.width = w;
    img.rgb.assign(static_cast<std::size_t>(h * w * 3), value);
    return img;
  }
};

inline Tensor tensor_from_image(const ImageU8& img) {
  const std::int64_t h = img.height, w = img.width, plane = h * w;
  std::vector<Real> v(static_cast<std::size_t>(3 * plane));
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      v[static_cast<std::size_t>(c * plane + i)] =
          static_cast<Real>(img.rgb[static_cast<std::size_t>(3 * i + c)]);
  return Tensor::from_data({3, h, w}, std::move(v));
}

// Values are clamped to [0, 255] and rounded half away from zero.
inline ImageU8 image_from_tensor(const Tensor& t) {
  if (t.ndim() != 3 || t.dim(0) != 3)
    throw ShapeError("image_from_tensor: expected 3 x h x w, got " + shape_str(t.shape()));
  const std::int64_t h = t.dim(1), w = t.dim(2), plane = h * w;
  ImageU8 img;
  img.height = h;
  img.width = w;
  img.rgb.resize(static_cast<std::size_t>(3 * plane));
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      Real v = t.data()[c * plane + i];
      v = v < 0 ? 0 : (v > 255 ? 255 : v);
      img.rgb[static_cast<std::size_t>(3 * i + c)] =
          static_cast<std::uint8_t>(std::lround(v));
    }
  return img;
}

inline void write_png(const std::string& path, const ImageU8& img) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng write failed for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (std::int64_t r = 0; r < img.height; ++r)
    rows[static_cast<std::size_t>(r)] =
        const_cast<png_bytep>(img.rgb.data() + r * img.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline ImageU8 read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("not a readable PNG: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  // Normalize anything reasonable to 8-bit RGB.
  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_channels(png, info) == 4) png_set_strip_alpha(png);

  ImageU8 img;
  img.height = static_cast<std::int64_t>(png_get_image_height(png, info));
  img.width = static_cast<std::int64_t>(png_get_image_width(png, info));
  img.rgb.resize(static_cast<std::size_t>(img.height * img.width * 3));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (std::int64_t r = 0; r < img.height; ++r)
    rows[static_cast<std::size_t>(r)] = img.rgb.data() + r * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// Uncompressed 24-bit BI_RGB bitmaps only (the capture format of the source
// microscopes); both bottom-up and top-down row orders are handled.
inline ImageU8 read_bmp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() < 54 || bytes[0] != 'B' || bytes[1] != 'M')
    throw IoError("not a BMP file: " + path);
  auto u32 = [&](std::size_t off) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
  };
  auto s32 = [&](std::size_t off) {
    std::int32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
  };
  auto u16 = [&](std::size_t off) {
    std::uint16_t v;
    std::memcpy(&v, bytes.data() + off, 2);
    return v;
  };
  const std::uint32_t data_offset = u32(10);
  const std::int32_t width = s32(18);
  const std::int32_t height = s32(22);
  if (u16(28) != 24 || u32(30) != 0)
    throw IoError("unsupported BMP (need uncompressed 24-bit): " + path);
  if (width <= 0 || height == 0) throw IoError("bad BMP dimensions: " + path);

  const bool top_down = height < 0;
  const std::int64_t h = top_down ? -height : height;
  const std::int64_t w = width;
  const std::int64_t row_bytes = ((w * 3 + 3) / 4) * 4;
  if (bytes.size() < data_offset + static_cast<std::size_t>(row_bytes * h))
    throw IoError("truncated BMP: " + path);

  ImageU8 img;
  img.height = h;
  img.width = w;
  img.rgb.resize(static_cast<std::size_t>(h * w * 3));
  for (std::int64_t r = 0; r < h; ++r) {
    const std::int64_t src_row = top_down ? r : h - 1 - r;
    const auto* src = reinterpret_cast<const std::uint8_t*>(
        bytes.data() + data_offset + src_row * row_bytes);
    for (std::int64_t c = 0; c < w; ++c) {
      // BMP stores BGR
      img.rgb[static_cast<std::size_t>((r * w + c) * 3 + 0)] = src[c * 3 + 2];
      img.rgb[static_cast<std::size_t>((r * w + c) * 3 + 1)] = src[c * 3 + 1];
      img.rgb[static_cast<std::size_t>((r * w + c) * 3 + 2)] = src[c * 3 + 0];
    }
  }
  return img;
}

// Dispatch on extension; BMP import is read-only.
inline ImageU8 read_image(const std::string& path) {
  auto ends_with = [&](const char* suf) {
    const std::size_t n = std::strlen(suf);
    return path.size() >= n &&
           std::equal(path.end() - static_cast<std::ptrdiff_t>(n), path.end(), suf,
                      [](char a, char b) { return std::tolower(a) == std::tolower(b); });
  };
  if (ends_with(".bmp")) return read_bmp(path);
  return read_png(path);
}

}  // namespace leukonet
