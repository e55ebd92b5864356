// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "facevl/encoders.hpp"
#include "facevl/image.hpp"
#include "facevl/tokenizer.hpp"

namespace facevl {

/// Activation at the first LayerNorm output of the last image block, its
/// gradient with respect to the image-text similarity, and the similarity.
struct GradCamTrace {
  Tensor activation;  // (1 + N) x W
  Tensor gradient;    // (1 + N) x W
  double score = 0.0;
};

/// Runs the image tower with the tap installed and back-propagates e_I . e_T.
/// With `override_activation`, the tapped tensor is replaced before the rest
/// of the block runs (used to probe the score as a function of the tap).
/// Parameter gradients of `model` are cleared before returning.
GradCamTrace trace_similarity(const DualEncoder& model, const Image& image, const TextTokens& tokens,
                              const std::optional<Tensor>& override_activation = std::nullopt);

/// g x g saliency in [0, 1], row-major over the patch grid.
struct SaliencyMap {
  std::size_t grid = 0;
  std::vector<double> values;
  bool degenerate = false;  // constant map; values are all zero
  double score = 0.0;

  double at(std::size_t y, std::size_t x) const { return values[y * grid + x]; }
  /// One row per line, space-separated, fixed 6 decimals.
  std::string to_text() const;
};

/// Channel weights are the mean gradient over patch tokens; the map is the
/// rectified weighted activation sum, min-max normalised.
SaliencyMap saliency_from_trace(const GradCamTrace& trace);
SaliencyMap gradcam(const DualEncoder& model, const Image& image, const TextTokens& tokens);
SaliencyMap gradcam(const DualEncoder& model, const Image& image, const std::string& text,
                    const Vocabulary& vocabulary);

/// Bilinearly upsamples the map onto the image and blends a heat colour ramp.
Image saliency_overlay(const Image& image, const SaliencyMap& map, double opacity = 0.5);
void write_saliency_text(const std::filesystem::path& path, const SaliencyMap& map);

}  // namespace facevl
