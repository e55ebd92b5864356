// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/encoders.hpp"

#include <array>
#include <cassert>
#include <cmath>

#include "facevl/errors.hpp"

namespace facevl {

EncoderConfig EncoderConfig::base() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::miniature() {
  EncoderConfig c;
  c.image = {.depth = 2, .width = 64, .heads = 4, .patch = 16, .image_size = 32, .mlp_ratio = 4};
  c.text = {.depth = 2, .width = 64, .heads = 4, .mlp_ratio = 4, .vocab_size = 0};
  c.embed_dim = 32;
  return c;
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("encoder config: " + msg); };
  if (image.depth == 0 || text.depth == 0) fail("depth must be positive");
  if (image.patch == 0 || image.image_size % image.patch != 0) {
    fail("image_size must be a multiple of patch");
  }
  if (image.heads == 0 || image.width % image.heads != 0) fail("image width not divisible by heads");
  if (text.heads == 0 || text.width % text.heads != 0) fail("text width not divisible by heads");
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (projection_depth == 0) fail("projection_depth must be positive");
  if (image.mlp_ratio == 0 || text.mlp_ratio == 0) fail("mlp_ratio must be positive");
}

const Tensor& LayerFeatures::layer(std::size_t k) const {
  if (k == 0 || k > layers.size()) {
    throw InputError("layer index " + std::to_string(k) + " outside 1.." + std::to_string(layers.size()));
  }
  return layers[k - 1];
}

Tensor patchify_pixels(const Image& image, std::size_t patch) {
  if (patch == 0 || image.height() % patch != 0 || image.width() % patch != 0) {
    throw DimensionError("image " + std::to_string(image.height()) + "x" +
                         std::to_string(image.width()) + " not divisible by patch " +
                         std::to_string(patch));
  }
  const std::size_t gh = image.height() / patch;
  const std::size_t gw = image.width() / patch;
  Tensor out(gh * gw, 3 * patch * patch);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      double* row = out.data() + (py * gw + px) * out.cols();
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t dy = 0; dy < patch; ++dy)
          for (std::size_t dx = 0; dx < patch; ++dx)
            *row++ = image.at(py * patch + dy, px * patch + dx, c);
    }
  }
  return out;
}

namespace {

// Keys cubic convolution kernel (a = -0.75), the usual bicubic choice.
std::array<double, 4> cubic_weights(double t) {
  constexpr double a = -0.75;
  auto near = [](double x) { return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0; };
  auto far = [](double x) { return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a; };
  return {far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)};
}

std::size_t exact_sqrt(std::size_t n) {
  const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return r * r == n ? r : 0;
}

}  // namespace

Tensor interpolate_pos_embeddings(const Tensor& table, std::size_t target_grid) {
  if (table.rows() < 2) throw InputError("positional table needs a cls row and a grid");
  const std::size_t src = exact_sqrt(table.rows() - 1);
  if (src == 0) throw InputError("positional grid is not square");
  if (target_grid < src) throw InputError("target grid must not be smaller than the source grid");
  const std::size_t channels = table.cols();
  Tensor out(1 + target_grid * target_grid, channels);
  for (std::size_t c = 0; c < channels; ++c) out(0, c) = table(0, c);

  const double ratio = static_cast<double>(src) / static_cast<double>(target_grid);
  struct Taps {
    std::array<std::size_t, 4> index;
    std::array<double, 4> weight;
  };
  std::vector<Taps> taps(target_grid);
  for (std::size_t i = 0; i < target_grid; ++i) {
    const double pos = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    const double base = std::floor(pos);
    taps[i].weight = cubic_weights(pos - base);
    for (int k = 0; k < 4; ++k) {
      const long idx = static_cast<long>(base) - 1 + k;
      taps[i].index[static_cast<std::size_t>(k)] =
          static_cast<std::size_t>(std::clamp<long>(idx, 0, static_cast<long>(src) - 1));
    }
  }
  for (std::size_t y = 0; y < target_grid; ++y) {
    for (std::size_t x = 0; x < target_grid; ++x) {
      double* dst = out.data() + (1 + y * target_grid + x) * channels;
      for (int ky = 0; ky < 4; ++ky) {
        for (int kx = 0; kx < 4; ++kx) {
          const double w = taps[y].weight[static_cast<std::size_t>(ky)] * taps[x].weight[static_cast<std::size_t>(kx)];
          const std::size_t row = 1 + taps[y].index[static_cast<std::size_t>(ky)] * src +
                                  taps[x].index[static_cast<std::size_t>(kx)];
          const double* s = table.data() + row * channels;
          for (std::size_t c = 0; c < channels; ++c) dst[c] += w * s[c];
        }
      }
    }
  }
  return out;
}

// ---- ImageEncoder -------------------------------------------------------------

ImageEncoder::ImageEncoder(const ImageTowerConfig& config, Rng& rng)
    : config_(config),
      patch_embed_(3 * config.patch * config.patch, config.width, rng, true),
      cls_token_(ag::Var::parameter(normal_tensor(1, config.width, 0.02, rng))),
      positional_(ag::Var::parameter(normal_tensor(config.patch_count() + 1, config.width, 0.02, rng))),
      ln_pre_(config.width),
      ln_post_(config.width) {
  blocks_.reserve(config.depth);
  for (std::size_t i = 0; i < config.depth; ++i) {
    blocks_.emplace_back(config.width, config.heads, config.mlp_ratio, rng);
  }
}

ag::Var ImageEncoder::embed_patches(const Image& image) const {
  if (image.height() != config_.image_size || image.width() != config_.image_size) {
    throw DimensionError("image encoder expects " + std::to_string(config_.image_size) + "x" +
                         std::to_string(config_.image_size) + " input, got " +
                         std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
  const ag::Var pixels = ag::Var::constant(patchify_pixels(image, config_.patch));
  return ag::concat_rows({cls_token_, patch_embed_.forward(pixels)});
}

ag::Var ImageEncoder::add_positional(const ag::Var& tokens) const {
  if (tokens.rows() != positional_.rows() || tokens.cols() != positional_.cols()) {
    throw DimensionError("token sequence " + tokens.value().shape_string() +
                         " does not match positional table " + positional_.value().shape_string());
  }
  return ag::add(tokens, positional_);
}

std::vector<ag::Var> ImageEncoder::forward_tokens(const ag::Var& tokens,
                                                  const ImageForwardOptions& options) const {
  const std::size_t depth = options.depth == 0 ? blocks_.size() : options.depth;
  if (depth > blocks_.size()) throw InputError("requested depth exceeds encoder depth");
  std::vector<ag::Var> outputs;
  outputs.reserve(depth);
  ag::Var x = ln_pre_.forward(tokens);
  for (std::size_t i = 0; i < depth; ++i) {
    const bool last = i + 1 == depth;
    x = blocks_[i].forward(x, false, last ? options.last_block_norm1 : nn::ActivationHook{});
    assert(x.rows() == config_.patch_count() + 1 && x.cols() == config_.width);
    outputs.push_back(x);
  }
  return outputs;
}

std::vector<ag::Var> ImageEncoder::forward(const Image& image, const ImageForwardOptions& options) const {
  return forward_tokens(patchify(image), options);
}

LayerFeatures ImageEncoder::encode(const Image& image) const {
  ag::NoGradGuard guard;
  LayerFeatures out;
  for (auto& v : forward(image)) out.layers.push_back(v.value());
  return out;
}

ag::Var ImageEncoder::pooled(const ag::Var& last_layer) const {
  return ln_post_.forward(ag::slice_rows(last_layer, 0, 1));
}

void ImageEncoder::resize_input(std::size_t image_size) {
  if (image_size % config_.patch != 0) throw DimensionError("image size not divisible by patch");
  const std::size_t grid = image_size / config_.patch;
  positional_ = ag::Var::parameter(interpolate_pos_embeddings(positional_.value(), grid));
  config_.image_size = image_size;
}

void ImageEncoder::collect(ParamList& params, const std::string& prefix) const {
  patch_embed_.collect(params, prefix + ".patch_embed");
  params.add(prefix + ".cls_token", cls_token_, false);
  params.add(prefix + ".positional_embedding", positional_, false);
  ln_pre_.collect(params, prefix + ".ln_pre");
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(params, prefix + ".blocks." + std::to_string(i));
  }
  ln_post_.collect(params, prefix + ".ln_post");
}

// ---- TextEncoder --------------------------------------------------------------

TextEncoder::TextEncoder(const TextTowerConfig& config, Rng& rng)
    : config_(config),
      ln_final_(config.width) {
  if (config_.vocab_size == 0) config_.vocab_size = Vocabulary::builtin().size();
  token_embedding_ = ag::Var::parameter(normal_tensor(config_.vocab_size, config.width, 0.02, rng));
  positional_ = ag::Var::parameter(normal_tensor(kContextLength, config.width, 0.01, rng));
  blocks_.reserve(config.depth);
  for (std::size_t i = 0; i < config.depth; ++i) {
    blocks_.emplace_back(config.width, config.heads, config.mlp_ratio, rng);
  }
}

std::vector<ag::Var> TextEncoder::forward(const TextTokens& tokens, std::size_t depth) const {
  if (tokens.eos_position >= kContextLength) throw InputError("eos_position beyond context length");
  std::vector<std::size_t> ids(kContextLength);
  for (std::size_t i = 0; i < kContextLength; ++i) {
    if (tokens.ids[i] < 0 || static_cast<std::size_t>(tokens.ids[i]) >= config_.vocab_size) {
      throw InputError("token id " + std::to_string(tokens.ids[i]) + " outside vocabulary");
    }
    ids[i] = static_cast<std::size_t>(tokens.ids[i]);
  }
  const std::size_t n = depth == 0 ? blocks_.size() : depth;
  if (n > blocks_.size()) throw InputError("requested depth exceeds encoder depth");
  ag::Var x = ag::add(ag::gather_rows(token_embedding_, ids), positional_);
  std::vector<ag::Var> outputs;
  outputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    x = blocks_[i].forward(x, true);
    outputs.push_back(x);
  }
  return outputs;
}

LayerFeatures TextEncoder::encode(const TextTokens& tokens) const {
  ag::NoGradGuard guard;
  LayerFeatures out;
  for (auto& v : forward(tokens)) out.layers.push_back(v.value());
  return out;
}

ag::Var TextEncoder::pooled(const ag::Var& last_layer, const TextTokens& tokens) const {
  if (tokens.eos_position >= last_layer.rows()) throw InputError("eos_position beyond sequence");
  return ln_final_.forward(ag::slice_rows(last_layer, tokens.eos_position, tokens.eos_position + 1));
}

void TextEncoder::collect(ParamList& params, const std::string& prefix) const {
  params.add(prefix + ".token_embedding", token_embedding_, false);
  params.add(prefix + ".positional_embedding", positional_, false);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(params, prefix + ".blocks." + std::to_string(i));
  }
  ln_final_.collect(params, prefix + ".ln_final");
}

// ---- ProjectionHead -------------------------------------------------------------

ProjectionHead::ProjectionHead(std::size_t in, std::size_t out, std::size_t depth, Rng& rng) {
  if (depth == 0) throw ConfigError("projection depth must be positive");
  const double std0 = 1.0 / std::sqrt(static_cast<double>(in));
  for (std::size_t i = 0; i < depth; ++i) {
    const bool last = i + 1 == depth;
    layers_.emplace_back(i == 0 ? in : out, out, rng, !last, std0);
  }
}

ag::Var ProjectionHead::forward(const ag::Var& features) const {
  ag::Var x = features;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(x);
    if (i + 1 < layers_.size()) x = ag::gelu(x);
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sq = 0.0;
    for (double v : x.value().row_span(r)) sq += v * v;
    if (!(sq > 1e-24) || !std::isfinite(sq)) {
      throw NumericalError("projection produced a zero or non-finite vector; cannot normalise");
    }
  }
  return ag::l2_normalize_rows(x);
}

void ProjectionHead::collect(ParamList& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect(params, prefix + ".layers." + std::to_string(i));
  }
}

// ---- DualEncoder --------------------------------------------------------------

DualEncoder::DualEncoder(const EncoderConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  image_ = ImageEncoder(config_.image, rng);
  text_ = TextEncoder(config_.text, rng);
  config_.text.vocab_size = text_.config().vocab_size;
  image_proj_ = ProjectionHead(config_.image.width, config_.embed_dim, config_.projection_depth, rng);
  text_proj_ = ProjectionHead(config_.text.width, config_.embed_dim, config_.projection_depth, rng);
}

ag::Var DualEncoder::embed_image(const Image& image) const {
  auto layers = image_.forward(image);
  return image_proj_.forward(image_.pooled(layers.back()));
}

ag::Var DualEncoder::embed_text(const TextTokens& tokens) const {
  auto layers = text_.forward(tokens);
  return text_proj_.forward(text_.pooled(layers.back(), tokens));
}

ParamList DualEncoder::parameters() const {
  ParamList params;
  image_.collect(params, "visual");
  text_.collect(params, "text");
  image_proj_.collect(params, "image_proj");
  text_proj_.collect(params, "text_proj");
  return params;
}

ParamList DualEncoder::image_parameters() const {
  ParamList params;
  image_.collect(params, "visual");
  return params;
}

}  // namespace facevl
