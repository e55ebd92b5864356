// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include "facevl/errors.hpp"
#include "facevl/heads.hpp"

namespace facevl {

GradCamTrace trace_similarity(const DualEncoder& model, const Image& image, const TextTokens& tokens,
                              const std::optional<Tensor>& override_activation) {
  const ParamList params = model.parameters();
  std::vector<Tensor> saved;
  saved.reserve(params.size());
  for (const auto& p : params.entries()) saved.push_back(std::exchange(p.var.node()->grad, Tensor()));
  ag::Var tapped;
  ImageForwardOptions options;
  options.last_block_norm1 = [&](const ag::Var& a) {
    if (override_activation) {
      require_same_shape(a.value(), *override_activation, "gradcam override");
      tapped = ag::Var(*override_activation, true);
    } else {
      tapped = a;
    }
    return tapped;
  };
  const auto& image_tower = model.image();
  const auto layers = image_tower.forward(image, options);
  const ag::Var e_image = model.image_projection().forward(image_tower.pooled(layers.back()));
  const ag::Var e_text = model.embed_text(tokens);
  const ag::Var score = ag::sum(ag::mul(e_image, e_text));
  ag::backward(score);
  GradCamTrace trace{tapped.value(), tapped.grad(), score.item()};
  for (std::size_t i = saved.size(); i-- > 0;) params.entries()[i].var.node()->grad = std::move(saved[i]);
  return trace;
}

SaliencyMap saliency_from_trace(const GradCamTrace& trace) {
  const Tensor& a = trace.activation;
  const Tensor& g = trace.gradient;
  require_same_shape(a, g, "saliency_from_trace");
  const std::size_t patches = a.rows() - 1;
  const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(patches))));
  if (patches == 0 || grid * grid != patches) throw DimensionError("gradcam: patch tokens do not form a square grid");
  const std::size_t width = a.cols();
  std::vector<double> weights(width, 0.0);
  for (std::size_t i = 1; i <= patches; ++i)
    for (std::size_t c = 0; c < width; ++c) weights[c] += g(i, c);
  for (auto& w : weights) w /= static_cast<double>(patches);

  SaliencyMap map;
  map.grid = grid;
  map.score = trace.score;
  map.values.resize(patches);
  for (std::size_t i = 0; i < patches; ++i) {
    double v = 0.0;
    for (std::size_t c = 0; c < width; ++c) v += weights[c] * a(i + 1, c);
    map.values[i] = std::max(v, 0.0);
  }
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double range = *hi - *lo;
  if (!(range > 1e-12 * std::max(1.0, std::abs(*hi)))) {
    std::fill(map.values.begin(), map.values.end(), 0.0);
    map.degenerate = true;
    return map;
  }
  const double base = *lo;
  for (auto& v : map.values) v = (v - base) / range;
  return map;
}

SaliencyMap gradcam(const DualEncoder& model, const Image& image, const TextTokens& tokens) {
  return saliency_from_trace(trace_similarity(model, image, tokens));
}

SaliencyMap gradcam(const DualEncoder& model, const Image& image, const std::string& text,
                    const Vocabulary& vocabulary) {
  if (text.empty()) throw InputError("gradcam: empty text query");
  return gradcam(model, image, vocabulary.tokenize(text));
}

std::string SaliencyMap::to_text() const {
  std::ostringstream out;
  char buf[32];
  for (std::size_t y = 0; y < grid; ++y) {
    for (std::size_t x = 0; x < grid; ++x) {
      std::snprintf(buf, sizeof(buf), "%s%.6f", x == 0 ? "" : " ", at(y, x));
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

Image saliency_overlay(const Image& image, const SaliencyMap& map, double opacity) {
  if (map.grid == 0) throw InputError("saliency_overlay: empty map");
  const ag::RowMap up = bilinear_resize_map(map.grid, map.grid, image.height(), image.width());
  Image out = image;
  for (std::size_t p = 0; p < up.taps.size(); ++p) {
    double v = 0.0;
    for (const auto& tap : up.taps[p]) v += tap.weight * map.values[tap.source];
    const double heat[3] = {std::clamp(2.0 * v, 0.0, 1.0), std::clamp(2.0 * v - 1.0, 0.0, 1.0), 0.0};
    const std::size_t y = p / image.width();
    const std::size_t x = p % image.width();
    for (std::size_t c = 0; c < 3; ++c) {
      out.at(y, x, c) = (1.0 - opacity) * image.at(y, x, c) + opacity * heat[c];
    }
  }
  return out;
}

void write_saliency_text(const std::filesystem::path& path, const SaliencyMap& map) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << map.to_text();
}

}  // namespace facevl
