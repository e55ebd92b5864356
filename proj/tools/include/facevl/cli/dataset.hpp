// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "facevl/downstream.hpp"
#include "facevl/geometry.hpp"
#include "facevl/image.hpp"

namespace facevl::cli {

/// One line of a downstream dataset file. Paths are relative to the file's
/// directory unless absolute; "synthetic:..." references render on the fly.
struct DatasetEntry {
  std::string id;
  std::string image;
  std::optional<std::string> labels;  // 8-bit label PNG
  std::optional<Landmarks> landmarks;
  std::optional<std::vector<bool>> attributes;
  std::optional<std::array<double, 2>> box;  // face box width, height
  std::optional<std::string> group;

  std::string to_json_line() const;
  static DatasetEntry from_json_line(const std::string& line);
};

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const std::vector<DatasetEntry>& entries);

/// Loads a PNG path (relative to `base`) or renders a synthetic reference.
Image load_image_ref(const std::string& ref, const std::filesystem::path& base);
std::filesystem::path resolve(const std::string& ref, const std::filesystem::path& base);

/// A dataset entry resampled into the encoder frame, plus the map back.
struct FramedSample {
  DownstreamSample sample;
  SimilarityTransform transform;  // original pixels -> encoder frame
  WarpConfig warp;
  std::size_t height = 0;  // original size
  std::size_t width = 0;
};

/// Resizes to `size` x `size`; parsing samples also go through the tanh warp
/// when `warp.enabled`.
FramedSample frame_sample(const DatasetEntry& entry, const std::filesystem::path& base, Task task,
                          std::size_t size, const WarpConfig& warp);
/// Maps a prediction made in the encoder frame back to the original image.
Prediction unframe_prediction(const Prediction& prediction, const FramedSample& framed);

/// Predictions file: one JSON object per line. Label maps go to
/// "<stem>.<id>.labels.png" next to the file.
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

}  // namespace facevl::cli
