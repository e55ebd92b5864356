// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "facevl/encoders.hpp"
#include "facevl/geometry.hpp"
#include "facevl/nn.hpp"

namespace facevl {

/// Shared hyper-parameters for every downstream head, whatever backbone feeds it.
struct HeadConfig {
  std::vector<std::size_t> layers{4, 6, 8, 12};  // selected Transformer layers K, 1-based
  std::size_t trunk_width = 256;                 // pyramid channels
  std::vector<std::size_t> pool_scales{1, 2, 3, 6};
  std::size_t parsing_classes = 11;  // 11 LaPa, 19 CelebAMask-HQ
  std::size_t output_size = 224;     // parsing logits are output_size^2
  std::size_t landmarks = 19;        // 19 AFLW, 68 300W, 98 WFLW
  std::size_t heatmap_size = kHeatmapSize;
  std::size_t attributes = 40;
  std::uint64_t seed = 0;

  void validate(std::size_t backbone_depth) const;
};

/// Features of the selected layers: cls rows and patch tokens as grid x grid maps
/// (stored pixels x channels, row-major over the grid).
struct MultiLevelFeatures {
  std::size_t grid = 0;
  std::vector<ag::Var> cls;     // 1 x W per selected layer
  std::vector<ag::Var> tokens;  // grid^2 x W per selected layer
};

/// From detached backbone features (frozen probing).
MultiLevelFeatures select_layers(const LayerFeatures& features, const std::vector<std::size_t>& layers);
/// From live block outputs (fine-tuning keeps the graph into the backbone).
MultiLevelFeatures select_layers(const std::vector<ag::Var>& block_outputs,
                                 const std::vector<std::size_t>& layers);

/// Bilinear (half-pixel centres, edge clamp) resampling map between grids.
ag::RowMap bilinear_resize_map(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w);
/// Adaptive average pooling map (bins may overlap when upsizing).
ag::RowMap adaptive_pool_map(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w);

/// 3x3 same-padding convolution over a height x width map.
class Conv3x3 {
 public:
  Conv3x3() = default;
  Conv3x3(std::size_t in, std::size_t out, Rng& rng);
  ag::Var forward(const ag::Var& x, std::size_t height, std::size_t width) const;
  void collect(ParamList& params, const std::string& prefix) const { proj_.collect(params, prefix); }

 private:
  nn::Linear proj_;
};

/// UperNet-style fusion of four ViT levels: the levels are rescaled to a
/// 4x/2x/1x/0.5x pyramid, the coarsest goes through a pyramid-pooling
/// context module, laterals are merged top-down, refined by 3x3 convolutions,
/// upsampled to the finest level and fused.
class FusionTrunk {
 public:
  FusionTrunk() = default;
  FusionTrunk(std::size_t in_width, std::size_t grid, const HeadConfig& config, Rng& rng);

  /// output_grid()^2 x trunk_width.
  ag::Var forward(const MultiLevelFeatures& features) const;
  std::size_t output_grid() const noexcept { return level_sizes_.front(); }
  void collect(ParamList& params, const std::string& prefix) const;

 private:
  std::size_t grid_ = 0;
  std::vector<std::size_t> level_sizes_;
  std::vector<std::size_t> pool_scales_;
  std::vector<nn::Linear> laterals_;      // levels 0..2
  std::vector<nn::Linear> ppm_branches_;  // one per pool scale
  Conv3x3 ppm_bottleneck_;
  std::vector<Conv3x3> fpn_convs_;  // levels 0..2
  Conv3x3 fuse_;
};

class ParsingHead {
 public:
  ParsingHead() = default;
  ParsingHead(std::size_t in_width, std::size_t grid, const HeadConfig& config);

  /// output_size^2 x classes logits (pixels row-major).
  ag::Var forward(const MultiLevelFeatures& features) const;
  ParamList parameters() const;
  const HeadConfig& config() const noexcept { return config_; }

 private:
  HeadConfig config_;
  FusionTrunk trunk_;
  nn::Linear classifier_;  // 1x1 conv
};

/// Mean per-pixel cross-entropy, background included as a class.
ag::Var parsing_loss(const ag::Var& logits, const LabelMap& labels);
/// Per-pixel argmax of output_size^2 x C logits.
LabelMap logits_to_labels(const Tensor& logits, std::size_t size);

class AlignmentHead {
 public:
  AlignmentHead() = default;
  AlignmentHead(std::size_t in_width, std::size_t grid, const HeadConfig& config);

  /// heatmap_size^2 x landmarks logits. Each trunk cell predicts, per
  /// landmark, an offset, a linear slope and shares a learned curvature, so
  /// the logit inside the cell is a concave quadratic in the pixel offset
  /// from the cell centre.
  ag::Var forward(const MultiLevelFeatures& features) const;
  ParamList parameters() const;
  const HeadConfig& config() const noexcept { return config_; }

 private:
  HeadConfig config_;
  FusionTrunk trunk_;
  nn::Linear cell_;     // trunk width -> 3 x landmarks (offset, x slope, y slope)
  ag::Var curvature_;  // 1 x landmarks
  ag::RowMap nearest_;
  ag::Var du_;
  ag::Var dv_;
  ag::Var radius_;
};

struct SoftLabelLoss {
  ag::Var loss;
  std::size_t excluded_channels = 0;  // all-zero targets left out of the mean
};

/// Per channel: normalise the target to sum 1 over all pixels and take
/// -sum t(p) log softmax(logits)(p) over pixels; mean over channels.
/// `logits` is pixels x channels in the heatmap's row-major pixel order.
SoftLabelLoss soft_label_ce(const ag::Var& logits, const Heatmap& target);
/// Pixels x channels logits -> channel-major heatmap for decoding.
Heatmap logits_to_heatmap(const Tensor& logits, std::size_t size);

class AttributeHead {
 public:
  AttributeHead() = default;
  AttributeHead(std::size_t in_width, const HeadConfig& config);

  /// The 3|K| layer-normalised vectors (cls, token mean, token max per layer).
  ag::Var pooled(const MultiLevelFeatures& features) const;
  /// 1 x attributes logits.
  ag::Var forward(const MultiLevelFeatures& features) const;
  ParamList parameters() const;
  const HeadConfig& config() const noexcept { return config_; }

 private:
  HeadConfig config_;
  ag::Var mix_;  // 1 x 3|K| linear combination weights
  nn::Linear classifier_;
};

/// Attribute bits as a 1 x A {0,1} tensor.
Tensor attribute_targets(const std::vector<bool>& bits);

/// Optimiser settings for one head; cosine decays the rate to zero over `epochs`.
struct HeadTrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  bool cosine = false;

  static HeadTrainConfig parsing() { return {1e-3, 1e-5, 100, 8, false}; }
  static HeadTrainConfig alignment() { return {1e-2, 1e-5, 100, 8, false}; }
  static HeadTrainConfig attributes() { return {0.3, 1e-5, 100, 8, true}; }

  /// Rate for a fractional epoch position t in [0, epochs].
  double lr_at(double epoch) const;
  void validate() const;
};

}  // namespace facevl
