// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace facevl {

/// H x W x 3 image, interleaved RGB, values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, double fill = 0.0);
  Image(std::size_t height, std::size_t width, std::vector<double> pixels);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  bool empty() const noexcept { return pixels_.empty(); }

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels_[(y * width_ + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels_[(y * width_ + x) * 3 + c];
  }
  const std::vector<double>& pixels() const noexcept { return pixels_; }
  std::vector<double>& pixels() noexcept { return pixels_; }

  /// Throws InputError unless every value is finite and in [0, 1].
  void validate() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

/// Per-pixel class indices.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;

  std::int32_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::int32_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Bilinear sample with zero padding outside the frame; (x, y) in pixel
/// coordinates where pixel centres sit at integers.
double sample_bilinear(const Image& image, double x, double y, std::size_t channel);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
/// Label maps are stored as 8-bit grayscale PNGs.
LabelMap read_label_png(const std::filesystem::path& path);
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace facevl
