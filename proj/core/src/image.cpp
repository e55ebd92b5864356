// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "facevl/errors.hpp"

namespace facevl {

Image::Image(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), pixels_(height * width * 3, fill) {}

Image::Image(std::size_t height, std::size_t width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (pixels_.size() != height * width * 3) throw DimensionError("image: pixel count mismatch");
}

void Image::validate() const {
  for (double v : pixels_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw InputError("image values must lie in [0, 1]");
  }
}

double sample_bilinear(const Image& image, double x, double y, std::size_t channel) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const double ax = x - fx;
  const double ay = y - fy;
  const long x0 = static_cast<long>(fx);
  const long y0 = static_cast<long>(fy);
  const long w = static_cast<long>(image.width());
  const long h = static_cast<long>(image.height());
  auto fetch = [&](long yy, long xx) {
    if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
    return image.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), channel);
  };
  return (1 - ay) * ((1 - ax) * fetch(y0, x0) + ax * fetch(y0, x0 + 1)) +
         ay * ((1 - ax) * fetch(y0 + 1, x0) + ax * fetch(y0 + 1, x0 + 1));
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

// Decodes any PNG into 8-bit rows with `channels` (1 or 3) channels.
std::vector<std::uint8_t> decode_png(const std::filesystem::path& path, int channels,
                                     std::size_t& height, std::size_t& width) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("malformed PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool is_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (channels == 3 && is_gray) png_set_gray_to_rgb(png);
  if (channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != width * static_cast<std::size_t>(channels)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG layout: " + path.string());
  }
  buffer.resize(stride * height);
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return buffer;
}

void encode_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& data,
                std::size_t height, std::size_t width, int channels) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data.data() + y * width * static_cast<std::size_t>(channels)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  std::size_t h = 0;
  std::size_t w = 0;
  const auto bytes = decode_png(path, 3, h, w);
  std::vector<double> pixels(bytes.size());
  std::transform(bytes.begin(), bytes.end(), pixels.begin(),
                 [](std::uint8_t b) { return static_cast<double>(b) / 255.0; });
  return Image(h, w, std::move(pixels));
}

void write_png(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> bytes(image.pixels().size());
  std::transform(image.pixels().begin(), image.pixels().end(), bytes.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  encode_png(path, bytes, image.height(), image.width(), 3);
}

LabelMap read_label_png(const std::filesystem::path& path) {
  LabelMap out;
  const auto bytes = decode_png(path, 1, out.height, out.width);
  out.labels.assign(bytes.begin(), bytes.end());
  return out;
}

void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
  std::vector<std::uint8_t> bytes(labels.labels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (labels.labels[i] < 0 || labels.labels[i] > 255) throw InputError("label out of 8-bit range");
    bytes[i] = static_cast<std::uint8_t>(labels.labels[i]);
  }
  encode_png(path, bytes, labels.height, labels.width, 1);
}

}  // namespace facevl
