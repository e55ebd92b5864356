// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/heads.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <tuple>

#include "facevl/errors.hpp"
#include "facevl/log.hpp"

namespace facevl {
namespace {

constexpr std::size_t kTrunkLevels = 4;

std::size_t grid_side(std::size_t tokens) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (side * side != tokens) {
    throw DimensionError("patch token count " + std::to_string(tokens) + " is not a square");
  }
  return side;
}

void require_levels(const MultiLevelFeatures& f, std::size_t expected) {
  if (f.tokens.size() != expected || f.cls.size() != expected) {
    throw ConfigError("head expects " + std::to_string(expected) + " feature levels, got " +
                      std::to_string(f.tokens.size()));
  }
}

ag::RowMap resize(std::size_t from, std::size_t to) { return bilinear_resize_map(from, from, to, to); }

}  // namespace

void HeadConfig::validate(std::size_t backbone_depth) const {
  auto fail = [](const std::string& msg) { throw ConfigError("head config: " + msg); };
  if (layers.size() != 4) fail("exactly 4 layers must be selected");
  for (std::size_t k : layers) {
    if (k == 0 || k > backbone_depth) {
      fail("layer " + std::to_string(k) + " outside 1.." + std::to_string(backbone_depth));
    }
  }
  if (trunk_width == 0) fail("trunk_width must be positive");
  if (pool_scales.empty()) fail("pool_scales must not be empty");
  for (std::size_t s : pool_scales)
    if (s == 0) fail("pool scales must be positive");
  if (parsing_classes < 2) fail("parsing_classes must be at least 2");
  if (output_size == 0) fail("output_size must be positive");
  if (landmarks == 0) fail("landmarks must be positive");
  if (heatmap_size == 0) fail("heatmap_size must be positive");
  if (attributes == 0) fail("attributes must be positive");
}

MultiLevelFeatures select_layers(const LayerFeatures& features, const std::vector<std::size_t>& layers) {
  MultiLevelFeatures out;
  for (std::size_t k : layers) {
    const Tensor& t = features.layer(k);
    if (t.rows() < 2) throw DimensionError("layer features hold no patch tokens");
    const ag::Var all = ag::Var::constant(t);
    out.cls.push_back(ag::slice_rows(all, 0, 1));
    out.tokens.push_back(ag::slice_rows(all, 1, t.rows()));
  }
  if (!out.tokens.empty()) out.grid = grid_side(out.tokens.front().rows());
  return out;
}

MultiLevelFeatures select_layers(const std::vector<ag::Var>& block_outputs,
                                 const std::vector<std::size_t>& layers) {
  MultiLevelFeatures out;
  for (std::size_t k : layers) {
    if (k == 0 || k > block_outputs.size()) {
      throw InputError("layer index " + std::to_string(k) + " outside 1.." +
                       std::to_string(block_outputs.size()));
    }
    const ag::Var& all = block_outputs[k - 1];
    if (all.rows() < 2) throw DimensionError("layer features hold no patch tokens");
    out.cls.push_back(ag::slice_rows(all, 0, 1));
    out.tokens.push_back(ag::slice_rows(all, 1, all.rows()));
  }
  if (!out.tokens.empty()) out.grid = grid_side(out.tokens.front().rows());
  return out;
}

ag::RowMap bilinear_resize_map(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w) {
  if (in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) throw DimensionError("empty resize grid");
  auto axis = [](std::size_t in, std::size_t out, std::size_t i) {
    double src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    return std::tuple{lo, hi, src - static_cast<double>(lo)};
  };
  ag::RowMap map;
  map.source_rows = in_h * in_w;
  map.taps.resize(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = axis(in_h, out_h, y);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = axis(in_w, out_w, x);
      auto& taps = map.taps[y * out_w + x];
      const std::array<ag::RowMap::Tap, 4> corners{{
          {y0 * in_w + x0, (1.0 - fy) * (1.0 - fx)},
          {y0 * in_w + x1, (1.0 - fy) * fx},
          {y1 * in_w + x0, fy * (1.0 - fx)},
          {y1 * in_w + x1, fy * fx},
      }};
      for (const auto& c : corners)
        if (c.weight != 0.0) taps.push_back(c);
    }
  }
  return map;
}

ag::RowMap adaptive_pool_map(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w) {
  if (in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) throw DimensionError("empty pooling grid");
  auto bin = [](std::size_t in, std::size_t out, std::size_t i) {
    const std::size_t begin = i * in / out;
    const std::size_t end = ((i + 1) * in + out - 1) / out;
    return std::pair{begin, end};
  };
  ag::RowMap map;
  map.source_rows = in_h * in_w;
  map.taps.resize(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1] = bin(in_h, out_h, y);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1] = bin(in_w, out_w, x);
      const double w = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
      auto& taps = map.taps[y * out_w + x];
      for (std::size_t sy = y0; sy < y1; ++sy)
        for (std::size_t sx = x0; sx < x1; ++sx) taps.push_back({sy * in_w + sx, w});
    }
  }
  return map;
}

Conv3x3::Conv3x3(std::size_t in, std::size_t out, Rng& rng)
    : proj_(9 * in, out, rng, true, std::sqrt(2.0 / static_cast<double>(9 * in))) {}

ag::Var Conv3x3::forward(const ag::Var& x, std::size_t height, std::size_t width) const {
  return proj_.forward(ag::im2col3x3(x, height, width));
}

FusionTrunk::FusionTrunk(std::size_t in_width, std::size_t grid, const HeadConfig& config, Rng& rng)
    : grid_(grid), pool_scales_(config.pool_scales) {
  if (grid == 0) throw DimensionError("fusion trunk needs a non-empty grid");
  const std::size_t c = config.trunk_width;
  const double lateral_std = std::sqrt(2.0 / static_cast<double>(in_width));
  level_sizes_ = {4 * grid, 2 * grid, grid, std::max<std::size_t>(1, grid / 2)};
  for (std::size_t i = 0; i + 1 < kTrunkLevels; ++i) {
    laterals_.emplace_back(in_width, c, rng, true, lateral_std);
    fpn_convs_.emplace_back(c, c, rng);
  }
  for (std::size_t s = 0; s < pool_scales_.size(); ++s) {
    ppm_branches_.emplace_back(in_width, c, rng, true, lateral_std);
  }
  ppm_bottleneck_ = Conv3x3(in_width + pool_scales_.size() * c, c, rng);
  fuse_ = Conv3x3(kTrunkLevels * c, c, rng);
}

ag::Var FusionTrunk::forward(const MultiLevelFeatures& features) const {
  require_levels(features, kTrunkLevels);
  if (features.grid != grid_) {
    throw DimensionError("fusion trunk built for a " + std::to_string(grid_) + " grid, got " +
                         std::to_string(features.grid));
  }
  // Rescale every level onto its pyramid resolution.
  std::vector<ag::Var> levels;
  for (std::size_t i = 0; i < kTrunkLevels; ++i) {
    const std::size_t size = level_sizes_[i];
    const ag::Var& t = features.tokens[i];
    if (size == grid_) {
      levels.push_back(t);
    } else if (size > grid_) {
      levels.push_back(ag::apply_row_map(t, resize(grid_, size)));
    } else {
      levels.push_back(ag::apply_row_map(t, adaptive_pool_map(grid_, grid_, size, size)));
    }
  }

  std::vector<ag::Var> lateral(kTrunkLevels);
  for (std::size_t i = 0; i + 1 < kTrunkLevels; ++i) {
    lateral[i] = ag::relu(laterals_[i].forward(levels[i]));
  }
  // Pyramid pooling over the coarsest level.
  const std::size_t top = level_sizes_.back();
  std::vector<ag::Var> context{levels.back()};
  for (std::size_t s = 0; s < pool_scales_.size(); ++s) {
    const std::size_t scale = pool_scales_[s];
    ag::Var pooled = ag::apply_row_map(levels.back(), adaptive_pool_map(top, top, scale, scale));
    pooled = ag::relu(ppm_branches_[s].forward(pooled));
    context.push_back(ag::apply_row_map(pooled, resize(scale, top)));
  }
  lateral.back() = ag::relu(ppm_bottleneck_.forward(ag::concat_cols(context), top, top));

  for (std::size_t i = kTrunkLevels - 1; i-- > 0;) {
    const ag::Var up = ag::apply_row_map(lateral[i + 1], resize(level_sizes_[i + 1], level_sizes_[i]));
    lateral[i] = ag::add(lateral[i], up);
  }

  const std::size_t fine = level_sizes_.front();
  std::vector<ag::Var> outputs;
  for (std::size_t i = 0; i < kTrunkLevels; ++i) {
    const std::size_t size = level_sizes_[i];
    ag::Var o = i + 1 < kTrunkLevels ? ag::relu(fpn_convs_[i].forward(lateral[i], size, size)) : lateral[i];
    if (size != fine) o = ag::apply_row_map(o, resize(size, fine));
    outputs.push_back(o);
  }
  return ag::relu(fuse_.forward(ag::concat_cols(outputs), fine, fine));
}

void FusionTrunk::collect(ParamList& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < laterals_.size(); ++i) {
    laterals_[i].collect(params, prefix + ".lateral." + std::to_string(i));
  }
  for (std::size_t i = 0; i < ppm_branches_.size(); ++i) {
    ppm_branches_[i].collect(params, prefix + ".ppm." + std::to_string(i));
  }
  ppm_bottleneck_.collect(params, prefix + ".ppm_bottleneck");
  for (std::size_t i = 0; i < fpn_convs_.size(); ++i) {
    fpn_convs_[i].collect(params, prefix + ".fpn." + std::to_string(i));
  }
  fuse_.collect(params, prefix + ".fuse");
}

// ---- parsing ---------------------------------------------------------------------

ParsingHead::ParsingHead(std::size_t in_width, std::size_t grid, const HeadConfig& config)
    : config_(config) {
  Rng rng(config.seed);
  trunk_ = FusionTrunk(in_width, grid, config, rng);
  classifier_ = nn::Linear(config.trunk_width, config.parsing_classes, rng, true,
                           std::sqrt(1.0 / static_cast<double>(config.trunk_width)));
}

ag::Var ParsingHead::forward(const MultiLevelFeatures& features) const {
  const ag::Var fused = trunk_.forward(features);
  const ag::Var logits = classifier_.forward(fused);
  return ag::apply_row_map(logits, resize(trunk_.output_grid(), config_.output_size));
}

ParamList ParsingHead::parameters() const {
  ParamList params;
  trunk_.collect(params, "parsing.trunk");
  classifier_.collect(params, "parsing.classifier");
  return params;
}

ag::Var parsing_loss(const ag::Var& logits, const LabelMap& labels) {
  if (logits.rows() != labels.labels.size()) {
    throw DimensionError("parsing_loss: " + std::to_string(logits.rows()) + " logit rows for " +
                         std::to_string(labels.labels.size()) + " pixels");
  }
  std::vector<std::size_t> index(labels.labels.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::int32_t l = labels.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= logits.cols()) {
      throw InputError("parsing_loss: label " + std::to_string(l) + " outside 0.." +
                       std::to_string(logits.cols() - 1));
    }
    index[i] = static_cast<std::size_t>(l);
  }
  return ag::neg(ag::mean(ag::pick(ag::log_softmax_rows(logits), index)));
}

LabelMap logits_to_labels(const Tensor& logits, std::size_t size) {
  if (logits.rows() != size * size) throw DimensionError("logits_to_labels: row count != size^2");
  LabelMap out{size, size, std::vector<std::int32_t>(size * size)};
  for (std::size_t p = 0; p < logits.rows(); ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(p, c) > logits(p, best)) best = c;
    out.labels[p] = static_cast<std::int32_t>(best);
  }
  return out;
}

// ---- alignment -------------------------------------------------------------------

AlignmentHead::AlignmentHead(std::size_t in_width, std::size_t grid, const HeadConfig& config)
    : config_(config) {
  Rng rng(config.seed);
  trunk_ = FusionTrunk(in_width, grid, config, rng);
  const std::size_t c = config.trunk_width;
  cell_ = nn::Linear(c, 3 * config.landmarks, rng, true, std::sqrt(1.0 / static_cast<double>(c)));
  curvature_ = ag::Var::parameter(Tensor(1, config.landmarks, 0.5));
  const std::size_t size = config.heatmap_size;
  const std::size_t cells = trunk_.output_grid();
  const double pitch = static_cast<double>(size) / static_cast<double>(cells);
  nearest_.source_rows = cells * cells;
  nearest_.taps.resize(size * size);
  Tensor du(size * size, config.landmarks);
  Tensor dv(size * size, config.landmarks);
  Tensor radius(size * size, 1);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const auto cy = std::min(cells - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) / pitch));
      const auto cx = std::min(cells - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) / pitch));
      const double ox = static_cast<double>(x) - ((static_cast<double>(cx) + 0.5) * pitch - 0.5);
      const double oy = static_cast<double>(y) - ((static_cast<double>(cy) + 0.5) * pitch - 0.5);
      const std::size_t p = y * size + x;
      nearest_.taps[p] = {{cy * cells + cx, 1.0}};
      for (std::size_t l = 0; l < config.landmarks; ++l) {
        du(p, l) = ox;
        dv(p, l) = oy;
      }
      radius(p, 0) = ox * ox + oy * oy;
    }
  }
  du_ = ag::Var::constant(std::move(du));
  dv_ = ag::Var::constant(std::move(dv));
  radius_ = ag::Var::constant(std::move(radius));
}

ag::Var AlignmentHead::forward(const MultiLevelFeatures& features) const {
  const std::size_t l = config_.landmarks;
  const ag::Var coeffs = ag::apply_row_map(cell_.forward(trunk_.forward(features)), nearest_);
  const ag::Var linear = ag::add(ag::mul(ag::slice_cols(coeffs, l, 2 * l), du_),
                                 ag::mul(ag::slice_cols(coeffs, 2 * l, 3 * l), dv_));
  const ag::Var bowl = ag::matmul(radius_, curvature_);
  return ag::sub(ag::add(ag::slice_cols(coeffs, 0, l), linear), bowl);
}

ParamList AlignmentHead::parameters() const {
  ParamList params;
  trunk_.collect(params, "alignment.trunk");
  cell_.collect(params, "alignment.cell");
  params.add("alignment.curvature", curvature_, false);
  return params;
}

SoftLabelLoss soft_label_ce(const ag::Var& logits, const Heatmap& target) {
  const std::size_t pixels = target.size * target.size;
  if (logits.rows() != pixels || logits.cols() != target.channels) {
    throw DimensionError("soft_label_ce: logits " + logits.value().shape_string() + " vs heatmap " +
                         std::to_string(target.channels) + "x" + std::to_string(target.size) + "^2");
  }
  Tensor weights(target.channels, pixels);
  SoftLabelLoss out;
  for (std::size_t l = 0; l < target.channels; ++l) {
    double total = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
      const double v = target.values[l * pixels + p];
      if (!std::isfinite(v) || v < 0.0) throw InputError("soft_label_ce: target values must be finite and >= 0");
      total += v;
    }
    if (total <= 0.0) {
      ++out.excluded_channels;
      continue;
    }
    for (std::size_t p = 0; p < pixels; ++p) weights(l, p) = target.values[l * pixels + p] / total;
  }
  const std::size_t used = target.channels - out.excluded_channels;
  if (used == 0) throw InputError("soft_label_ce: every target channel is all-zero");
  if (out.excluded_channels > 0) {
    warn("soft_label_ce: " + std::to_string(out.excluded_channels) +
         " all-zero target channel(s) excluded from the mean");
  }
  const ag::Var log_probs = ag::log_softmax_rows(ag::transpose(logits));  // channels x pixels
  const ag::Var weighted = ag::mul(log_probs, ag::Var::constant(std::move(weights)));
  out.loss = ag::scale(ag::sum(weighted), -1.0 / static_cast<double>(used));
  return out;
}

Heatmap logits_to_heatmap(const Tensor& logits, std::size_t size) {
  if (logits.rows() != size * size) throw DimensionError("logits_to_heatmap: row count != size^2");
  Heatmap h(logits.cols(), size);
  for (std::size_t p = 0; p < logits.rows(); ++p)
    for (std::size_t l = 0; l < logits.cols(); ++l) h.values[l * size * size + p] = logits(p, l);
  return h;
}

// ---- attributes ------------------------------------------------------------------

AttributeHead::AttributeHead(std::size_t in_width, const HeadConfig& config) : config_(config) {
  Rng rng(config.seed);
  const std::size_t vectors = 3 * config.layers.size();
  mix_ = ag::Var::parameter(Tensor(1, vectors, 1.0 / static_cast<double>(vectors)));
  classifier_ = nn::Linear(in_width, config.attributes, rng, true, 0.02);
}

ag::Var AttributeHead::pooled(const MultiLevelFeatures& features) const {
  require_levels(features, config_.layers.size());
  std::vector<ag::Var> rows;
  for (std::size_t k = 0; k < features.tokens.size(); ++k) {
    rows.push_back(features.cls[k]);
    rows.push_back(ag::mean_rows(features.tokens[k]));
    rows.push_back(ag::max_rows(features.tokens[k]));
  }
  return ag::layer_norm(ag::concat_rows(rows), ag::Var(), ag::Var());
}

ag::Var AttributeHead::forward(const MultiLevelFeatures& features) const {
  return classifier_.forward(ag::matmul(mix_, pooled(features)));
}

ParamList AttributeHead::parameters() const {
  ParamList params;
  params.add("attributes.mix", mix_, false);
  classifier_.collect(params, "attributes.classifier");
  return params;
}

Tensor attribute_targets(const std::vector<bool>& bits) {
  Tensor t(1, bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) t(0, i) = bits[i] ? 1.0 : 0.0;
  return t;
}

double HeadTrainConfig::lr_at(double epoch) const {
  if (!cosine) return lr;
  const double t = std::clamp(epoch / static_cast<double>(epochs), 0.0, 1.0);
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * t));
}

void HeadTrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("head train config: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("head train config: weight_decay must be >= 0");
  if (epochs == 0) throw ConfigError("head train config: epochs must be positive");
  if (batch_size == 0) throw ConfigError("head train config: batch_size must be positive");
}

}  // namespace facevl
