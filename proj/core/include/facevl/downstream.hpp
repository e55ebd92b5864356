// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "facevl/encoders.hpp"
#include "facevl/geometry.hpp"
#include "facevl/heads.hpp"
#include "facevl/optim.hpp"

namespace facevl {

enum class Task { kParsing, kAlignment, kAttributes };

Task parse_task(const std::string& name);
std::string task_name(Task task);

/// One downstream example; only the field matching the task is required.
struct DownstreamSample {
  std::string id;
  Image image;  // encoder input size
  std::optional<LabelMap> labels;
  std::optional<Landmarks> landmarks;  // image pixel coordinates
  std::optional<std::vector<bool>> attributes;
};

struct Prediction {
  std::string id;
  std::optional<LabelMap> labels;
  std::optional<Landmarks> landmarks;
  std::optional<std::vector<bool>> attributes;
};

/// A backbone plus one task head. In probe mode the backbone runs without a
/// graph and only head parameters train; in fine-tune mode gradients flow
/// into the image tower as well.
class DownstreamModel {
 public:
  DownstreamModel(DualEncoder backbone, Task task, const HeadConfig& config, bool finetune);

  MultiLevelFeatures features(const Image& image) const;
  /// Head output for prepared features.
  ag::Var forward(const MultiLevelFeatures& features) const;
  ag::Var loss(const MultiLevelFeatures& features, const DownstreamSample& sample) const;
  Prediction predict(const DownstreamSample& sample) const;

  /// Head parameters, plus image-tower parameters when fine-tuning.
  ParamList trainable() const;
  ParamList head_parameters() const;
  const DualEncoder& backbone() const noexcept { return backbone_; }
  Task task() const noexcept { return task_; }
  bool finetune() const noexcept { return finetune_; }
  const HeadConfig& config() const noexcept { return config_; }

 private:
  DualEncoder backbone_;
  Task task_;
  HeadConfig config_;
  bool finetune_;
  ParsingHead parsing_;
  AlignmentHead alignment_;
  AttributeHead attributes_;
};

struct DownstreamTrainOptions {
  HeadTrainConfig train;
  std::size_t steps = 0;  // 0 = epochs x ceil(n / batch_size)
  std::uint64_t seed = 0;
  double grad_clip_norm = 0.0;  // 0 disables clipping
};

/// Mini-batch AdamW over shuffled samples; returns the mean loss per step.
/// Frozen features are computed once per sample.
std::vector<double> train_downstream(DownstreamModel& model, std::span<const DownstreamSample> samples,
                                     const DownstreamTrainOptions& options);

}  // namespace facevl
