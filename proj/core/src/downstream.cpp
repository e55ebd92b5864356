// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "facevl/errors.hpp"
#include "facevl/synthetic.hpp"

namespace facevl {

Task parse_task(const std::string& name) {
  if (name == "parsing") return Task::kParsing;
  if (name == "alignment") return Task::kAlignment;
  if (name == "attributes") return Task::kAttributes;
  throw ConfigError("unknown task '" + name + "' (expected parsing, alignment or attributes)");
}

std::string task_name(Task task) {
  switch (task) {
    case Task::kParsing:
      return "parsing";
    case Task::kAlignment:
      return "alignment";
    case Task::kAttributes:
      return "attributes";
  }
  return "?";
}

DownstreamModel::DownstreamModel(DualEncoder backbone, Task task, const HeadConfig& config, bool finetune)
    : backbone_(std::move(backbone)), task_(task), config_(config), finetune_(finetune) {
  const auto& image = backbone_.config().image;
  config_.validate(image.depth);
  switch (task_) {
    case Task::kParsing:
      parsing_ = ParsingHead(image.width, image.grid(), config_);
      break;
    case Task::kAlignment:
      alignment_ = AlignmentHead(image.width, image.grid(), config_);
      break;
    case Task::kAttributes:
      attributes_ = AttributeHead(image.width, config_);
      break;
  }
}

MultiLevelFeatures DownstreamModel::features(const Image& image) const {
  if (finetune_) return select_layers(backbone_.image().forward(image), config_.layers);
  return select_layers(backbone_.image().encode(image), config_.layers);
}

ag::Var DownstreamModel::forward(const MultiLevelFeatures& features) const {
  switch (task_) {
    case Task::kParsing:
      return parsing_.forward(features);
    case Task::kAlignment:
      return alignment_.forward(features);
    case Task::kAttributes:
      return attributes_.forward(features);
  }
  throw ConfigError("unknown task");
}

ag::Var DownstreamModel::loss(const MultiLevelFeatures& features, const DownstreamSample& sample) const {
  const ag::Var out = forward(features);
  switch (task_) {
    case Task::kParsing:
      if (!sample.labels) throw InputError("sample '" + sample.id + "' has no label map");
      return parsing_loss(out, *sample.labels);
    case Task::kAlignment: {
      if (!sample.landmarks) throw InputError("sample '" + sample.id + "' has no landmarks");
      const Landmarks target =
          to_heatmap_frame(*sample.landmarks, sample.image.width(), config_.heatmap_size);
      return soft_label_ce(out, render_heatmap(target, config_.heatmap_size)).loss;
    }
    case Task::kAttributes:
      if (!sample.attributes) throw InputError("sample '" + sample.id + "' has no attributes");
      return ag::bce_with_logits(out, attribute_targets(*sample.attributes));
  }
  throw ConfigError("unknown task");
}

Prediction DownstreamModel::predict(const DownstreamSample& sample) const {
  ag::NoGradGuard guard;
  const ag::Var out = forward(select_layers(backbone_.image().encode(sample.image), config_.layers));
  Prediction p;
  p.id = sample.id;
  switch (task_) {
    case Task::kParsing:
      p.labels = logits_to_labels(out.value(), config_.output_size);
      break;
    case Task::kAlignment: {
      Landmarks pts;
      for (const auto& d : decode_heatmap(logits_to_heatmap(out.value(), config_.heatmap_size), HeatmapScale::kLogit)) {
        pts.push_back(d.point);
      }
      p.landmarks = from_heatmap_frame(pts, sample.image.width(), config_.heatmap_size);
      break;
    }
    case Task::kAttributes: {
      std::vector<bool> bits(out.cols());
      for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = out.value()(0, i) > 0.0;
      p.attributes = bits;
      break;
    }
  }
  return p;
}

ParamList DownstreamModel::head_parameters() const {
  switch (task_) {
    case Task::kParsing:
      return parsing_.parameters();
    case Task::kAlignment:
      return alignment_.parameters();
    case Task::kAttributes:
      return attributes_.parameters();
  }
  return {};
}

ParamList DownstreamModel::trainable() const {
  ParamList params = head_parameters();
  if (finetune_) params.append(backbone_.image_parameters());
  return params;
}

std::vector<double> train_downstream(DownstreamModel& model, std::span<const DownstreamSample> samples,
                                     const DownstreamTrainOptions& options) {
  if (samples.empty()) throw InputError("train_downstream: no samples");
  options.train.validate();
  const std::size_t batch = std::min(options.train.batch_size, samples.size());
  const std::size_t per_epoch = (samples.size() + batch - 1) / batch;
  const std::size_t steps = options.steps ? options.steps : options.train.epochs * per_epoch;

  std::vector<std::optional<MultiLevelFeatures>> cache(samples.size());
  auto features_of = [&](std::size_t i) {
    if (model.finetune()) return model.features(samples[i].image);
    if (!cache[i]) cache[i] = model.features(samples[i].image);
    return *cache[i];
  };

  const ParamList params = model.trainable();
  AdamW optimizer(params, AdamWConfig{.beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8,
                                      .weight_decay = options.train.weight_decay});
  Rng rng(options.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> losses;
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < steps; ++step) {
    optimizer.zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      const ag::Var l = ag::scale(model.loss(features_of(i), samples[i]), 1.0 / static_cast<double>(batch));
      if (!std::isfinite(l.item())) {
        throw NumericalError("non-finite head loss at step " + std::to_string(step) + " on sample '" +
                             samples[i].id + "'");
      }
      ag::backward(l);
      total += l.item();
    }
    if (options.grad_clip_norm > 0.0) clip_grad_norm(params, options.grad_clip_norm);
    // The schedule spans the whole run whatever its length.
    const double position = static_cast<double>(options.train.epochs) * static_cast<double>(step) /
                            static_cast<double>(steps);
    optimizer.step(options.train.lr_at(position));
    losses.push_back(total);
  }
  return losses;
}

}  // namespace facevl
