// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "facevl/image.hpp"
#include "facevl/nn.hpp"

namespace facevl {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// L x 2 pixel coordinates; pixel centres sit at integer coordinates.
using Landmarks = std::vector<Point2>;

/// 2x3 matrix [s*R | t] mapping source pixels into the aligned frame.
class SimilarityTransform {
 public:
  SimilarityTransform() = default;
  explicit SimilarityTransform(const std::array<double, 6>& row_major) : m_(row_major) {}

  static SimilarityTransform from_params(double scale, double rotation_rad, double tx, double ty);

  Point2 apply(Point2 p) const noexcept;
  /// Throws SingularityError when the linear block is (near) singular.
  SimilarityTransform inverse() const;
  /// (*this)(other(p)).
  SimilarityTransform after(const SimilarityTransform& other) const noexcept;

  double scale() const noexcept;
  double rotation() const noexcept;
  const std::array<double, 6>& matrix() const noexcept { return m_; }
  /// Frobenius norm of the element-wise difference.
  double distance(const SimilarityTransform& other) const noexcept;

 private:
  std::array<double, 6> m_{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
};

/// Least-squares similarity minimising sum |T(src_i) - dst_i|^2 (closed form).
/// Throws SingularityError when the source points coincide.
SimilarityTransform estimate_similarity(std::span<const Point2> src, std::span<const Point2> dst);

/// Scale matrix taking a width x height image onto a size x size frame.
SimilarityTransform resize_transform(std::size_t height, std::size_t width, std::size_t size);

struct AugmentRanges {
  double rotation_deg = 18.0;    // uniform in [-r, r]
  double scale_delta = 0.1;      // uniform in [1 - d, 1 + d]
  double translation_frac = 0.01;  // uniform in [-f*s, f*s] per axis

  static AugmentRanges parsing() { return {18.0, 0.1, 0.01}; }
  static AugmentRanges alignment() { return {10.0, 0.1, 0.01}; }
  static AugmentRanges none() { return {0.0, 0.0, 0.0}; }
};

struct AugmentSample {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

/// Draws rotation/scale about the target-frame centre plus a translation and
/// composes it after `t`. The drawn values are reported through `sample`.
SimilarityTransform augment_transform(const SimilarityTransform& t, Rng& rng,
                                      const AugmentRanges& ranges, std::size_t target_size,
                                      AugmentSample* sample = nullptr);

/// Identity on [-1+alpha, 1-alpha], alpha*tanh tails outside; alpha in (0, 1].
double tanh_alpha(double x, double alpha);
/// Inverse on (-1, 1); returns +-infinity at the open ends.
double tanh_alpha_inverse(double y, double alpha);

struct WarpConfig {
  double alpha = 0.8;
  std::size_t target_size = 224;
  bool enabled = true;

  void validate() const;
};

/// Output pixel q -> normalise -> inverse tanh_alpha -> denormalise -> T^-1,
/// then bilinear sampling with zero padding.
Image warp_image(const Image& image, const SimilarityTransform& t, const WarpConfig& cfg);
/// Same mapping with nearest-neighbour sampling; outside pixels get `fill`.
LabelMap warp_labels(const LabelMap& labels, const SimilarityTransform& t, const WarpConfig& cfg,
                     std::int32_t fill = 0);
/// Forward point map used by warp_image: T, then tanh_alpha in the normalised frame.
Landmarks transform_points(std::span<const Point2> points, const SimilarityTransform& t,
                           const WarpConfig& cfg);
Landmarks inverse_transform_points(std::span<const Point2> points, const SimilarityTransform& t,
                                   const WarpConfig& cfg);

/// L x size x size Gaussian maps, channel-major.
struct Heatmap {
  std::size_t channels = 0;
  std::size_t size = 0;
  std::vector<double> values;

  Heatmap() = default;
  Heatmap(std::size_t channels, std::size_t size) : channels(channels), size(size), values(channels * size * size) {}
  double& at(std::size_t l, std::size_t y, std::size_t x) { return values[(l * size + y) * size + x]; }
  double at(std::size_t l, std::size_t y, std::size_t x) const { return values[(l * size + y) * size + x]; }
};

inline constexpr std::size_t kHeatmapSize = 128;

/// exp(-|p - pt|^2 / 2) per channel (sigma = 1 px, unit peak).
Heatmap render_heatmap(std::span<const Point2> points, std::size_t size = kHeatmapSize);

/// How decode_heatmap turns map values into softmax logits.
enum class HeatmapScale {
  kProbability,  // values in [0, 1]; logit = log(value)
  kLogit,        // raw network logits
};

struct DecodedLandmark {
  Point2 point;
  bool degenerate = false;
};

/// Argmax per channel refined by the softmax-weighted mean coordinate over the
/// 5x5 window around it. Constant channels return the first pixel, flagged.
std::vector<DecodedLandmark> decode_heatmap(const Heatmap& heatmap,
                                            HeatmapScale scale = HeatmapScale::kProbability);

/// One face per line, comma-separated x,y pairs.
std::vector<Landmarks> read_landmarks_file(const std::filesystem::path& path);
void write_landmarks_file(const std::filesystem::path& path, std::span<const Landmarks> faces);
/// Six reals, row-major 2x3.
SimilarityTransform read_transform_file(const std::filesystem::path& path);
void write_transform_file(const std::filesystem::path& path, const SimilarityTransform& t);

/// Five-point mean face (eyes, nose tip, mouth corners) in unit coordinates,
/// read from the shipped template file.
const Landmarks& mean_face_unit();
/// The template scaled to a size x size frame.
Landmarks mean_face(std::size_t size);

}  // namespace facevl
