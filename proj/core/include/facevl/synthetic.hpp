// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "facevl/data.hpp"
#include "facevl/geometry.hpp"
#include "facevl/image.hpp"
#include "facevl/nn.hpp"

// Procedural fixtures: cartoon faces with known landmarks, part labels,
// attributes and captions, plus face-free scenes. Everything is a pure
// function of its seed so manifests can refer to images by name.
namespace facevl {

inline constexpr std::size_t kSyntheticFaceClasses = 6;  // background, skin, hair, eye, mouth, glasses
inline constexpr std::size_t kSyntheticFactors = 5;
inline constexpr std::size_t kSyntheticAttributes = 40;

struct SyntheticFace {
  std::size_t hair = 0;        // 0 black, 1 brown, 2 blond, 3 red, 4 gray
  std::size_t skin = 0;        // 0 pale, 1 medium, 2 dark
  std::size_t background = 0;  // 0 dark, 1 light, 2 green, 3 blue
  bool glasses = false;
  bool smiling = false;
  bool woman = false;
  Landmarks five;  // eyes, nose tip, mouth corners (pixel coordinates)

  /// Binary visual factors: glasses, smiling, dark hair, light background, pale skin.
  std::array<bool, kSyntheticFactors> factors() const;
  /// 40 bits; bit k is factor k mod 5, negated on odd multiples of 5.
  std::vector<bool> attributes() const;
  std::string caption() const;
};

/// Random appearance; the landmarks are the mean face under a small random
/// similarity in a size x size frame.
SyntheticFace random_face(Rng& rng, std::size_t size);
/// Deterministic appearance cycling through the factors by index.
SyntheticFace indexed_face(std::size_t index, std::size_t size);

struct RenderedFace {
  Image image;
  LabelMap labels;
};
RenderedFace render_face(const SyntheticFace& face, std::size_t size);
/// Face-free scene of random rectangles.
Image render_scene(std::uint64_t seed, std::size_t size);

/// Native resolution of images named by synthetic manifest references.
inline constexpr std::size_t kSyntheticNativeSize = 64;

/// "synthetic:face:<seed>" or "synthetic:scene:<seed>".
std::string synthetic_ref(bool face, std::uint64_t seed);
bool is_synthetic_ref(const std::string& ref);
/// Renders a synthetic reference at kSyntheticNativeSize.
Image render_synthetic_ref(const std::string& ref);

/// `count` raw records: faces with scores spread over [0.5, 1), some
/// multi-face, plus face-free scenes with low scores.
std::vector<ManifestRecord> synthetic_manifest(std::size_t count, std::uint64_t seed, double face_fraction = 0.75);

/// Images tiled by patch with one class per patch; the class sets the colour.
struct GridParsingSample {
  Image image;
  LabelMap labels;
};
GridParsingSample grid_parsing_sample(std::size_t size, std::size_t patch, std::size_t classes, Rng& rng);

/// Landmarks of `face` mapped into a heatmap_size frame.
Landmarks to_heatmap_frame(const Landmarks& points, std::size_t image_size, std::size_t heatmap_size);
Landmarks from_heatmap_frame(const Landmarks& points, std::size_t image_size, std::size_t heatmap_size);

}  // namespace facevl
