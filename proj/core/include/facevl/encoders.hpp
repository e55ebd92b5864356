// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "facevl/autograd.hpp"
#include "facevl/image.hpp"
#include "facevl/nn.hpp"
#include "facevl/tokenizer.hpp"

namespace facevl {

struct ImageTowerConfig {
  std::size_t depth = 12;
  std::size_t width = 768;
  std::size_t heads = 12;
  std::size_t patch = 16;
  std::size_t image_size = 224;
  std::size_t mlp_ratio = 4;

  std::size_t grid() const noexcept { return image_size / patch; }
  std::size_t patch_count() const noexcept { return grid() * grid(); }
};

struct TextTowerConfig {
  std::size_t depth = 12;
  std::size_t width = 512;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
  std::size_t vocab_size = 0;  // 0 = size of the builtin vocabulary
};

struct EncoderConfig {
  ImageTowerConfig image;
  TextTowerConfig text;
  std::size_t embed_dim = 512;
  /// Linear layers in each projection head (1 = single bias-free map).
  std::size_t projection_depth = 1;
  std::uint64_t seed = 0;

  /// ViT-B/16 image tower and the 12-layer 512-wide text tower.
  static EncoderConfig base();
  /// Depth 2, width 64, 32x32 inputs; used for gradient checks and overfit runs.
  static EncoderConfig miniature();
  void validate() const;
};

/// Block outputs of every Transformer layer, each tokens x width.
struct LayerFeatures {
  std::vector<Tensor> layers;

  std::size_t depth() const noexcept { return layers.size(); }
  std::size_t tokens() const { return layers.empty() ? 0 : layers.front().rows(); }
  std::size_t width() const { return layers.empty() ? 0 : layers.front().cols(); }
  /// Layer k counted from 1.
  const Tensor& layer(std::size_t k) const;
};

/// Non-overlapping patch x patch tiles, row-major over the grid; each row is
/// the tile flattened as (channel, dy, dx). Throws DimensionError when the
/// image side is not a multiple of `patch`.
Tensor patchify_pixels(const Image& image, std::size_t patch);

/// Keeps the cls row and bicubically resamples the square source grid of a
/// (1 + g*g) x C positional table to target_grid x target_grid.
Tensor interpolate_pos_embeddings(const Tensor& table, std::size_t target_grid);

struct ImageForwardOptions {
  /// Number of blocks to run; 0 runs all of them.
  std::size_t depth = 0;
  /// Tap on the first LayerNorm output of the final executed block.
  nn::ActivationHook last_block_norm1;
};

/// Vision Transformer: linear patch embedding, cls token, learned positions,
/// pre-LayerNorm, pre-norm blocks, post-LayerNorm on the pooled cls row.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const ImageTowerConfig& config, Rng& rng);

  /// Patch embeddings with cls prepended and no positional term: (N+1) x W.
  ag::Var embed_patches(const Image& image) const;
  ag::Var add_positional(const ag::Var& tokens) const;
  /// embed_patches followed by add_positional.
  ag::Var patchify(const Image& image) const { return add_positional(embed_patches(image)); }

  /// Runs the blocks over a positioned token sequence; one output per block.
  std::vector<ag::Var> forward_tokens(const ag::Var& tokens,
                                      const ImageForwardOptions& options = {}) const;
  std::vector<ag::Var> forward(const Image& image, const ImageForwardOptions& options = {}) const;
  /// Inference-mode features of every layer.
  LayerFeatures encode(const Image& image) const;
  /// Post-normalised cls feature (1 x W) of a final-layer output.
  ag::Var pooled(const ag::Var& last_layer) const;

  /// Re-grids the positional table for a new input size (e.g. 224 -> 448).
  void resize_input(std::size_t image_size);

  const ImageTowerConfig& config() const noexcept { return config_; }
  const ag::Var& positional() const noexcept { return positional_; }
  void collect(ParamList& params, const std::string& prefix) const;

 private:
  ImageTowerConfig config_;
  nn::Linear patch_embed_;
  ag::Var cls_token_;
  ag::Var positional_;
  nn::LayerNorm ln_pre_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_post_;
};

/// Causal text Transformer read out at the eos position.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextTowerConfig& config, Rng& rng);

  std::vector<ag::Var> forward(const TextTokens& tokens, std::size_t depth = 0) const;
  LayerFeatures encode(const TextTokens& tokens) const;
  /// Final-normalised eos feature (1 x W).
  ag::Var pooled(const ag::Var& last_layer, const TextTokens& tokens) const;

  const TextTowerConfig& config() const noexcept { return config_; }
  void collect(ParamList& params, const std::string& prefix) const;

 private:
  TextTowerConfig config_;
  ag::Var token_embedding_;  // vocab x W
  ag::Var positional_;       // 77 x W
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_final_;
};

/// Maps a pooled feature to the shared metric space and L2-normalises it.
/// Depth 1 is a bias-free linear map; deeper heads interleave GELU.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(std::size_t in, std::size_t out, std::size_t depth, Rng& rng);

  /// Rows of `features` -> unit rows. Throws NumericalError on a zero row.
  ag::Var forward(const ag::Var& features) const;
  void collect(ParamList& params, const std::string& prefix) const;

 private:
  std::vector<nn::Linear> layers_;
};

/// Image tower, text tower and both projection heads. Copies share
/// parameters (Vars are handles).
class DualEncoder {
 public:
  DualEncoder() = default;
  explicit DualEncoder(const EncoderConfig& config);

  ag::Var embed_image(const Image& image) const;
  ag::Var embed_text(const TextTokens& tokens) const;

  const EncoderConfig& config() const noexcept { return config_; }
  /// Re-grids the image tower for a new input size and records it in config().
  void resize_image_input(std::size_t image_size) {
    image_.resize_input(image_size);
    config_.image.image_size = image_size;
  }
  ImageEncoder& image() noexcept { return image_; }
  const ImageEncoder& image() const noexcept { return image_; }
  const TextEncoder& text() const noexcept { return text_; }
  const ProjectionHead& image_projection() const noexcept { return image_proj_; }
  const ProjectionHead& text_projection() const noexcept { return text_proj_; }

  /// Names prefixed "visual.", "text.", "image_proj.", "text_proj.".
  ParamList parameters() const;
  ParamList image_parameters() const;

 private:
  EncoderConfig config_;
  ImageEncoder image_;
  TextEncoder text_;
  ProjectionHead image_proj_;
  ProjectionHead text_proj_;
};

}  // namespace facevl
