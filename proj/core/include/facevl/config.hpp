// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "facevl/encoders.hpp"
#include "facevl/geometry.hpp"
#include "facevl/heads.hpp"
#include "facevl/optim.hpp"
#include "facevl/pretraining.hpp"

namespace facevl {

struct DataConfig {
  std::string manifest;          // curated or raw NDJSON manifest
  std::string nonface_manifest;  // pool for face-ratio mixing
  std::string image_root;        // base directory for relative image_ref paths
  std::string dataset;           // downstream samples (NDJSON)
  std::string output;            // primary artifact path
  double threshold = 0.9;
  std::size_t target_size = 0;
  double face_ratio = 1.0;
  std::size_t mix_size = 0;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct PretrainRunConfig {
  PretrainToggles toggles;
  ScheduleConfig schedule;
  AdamWConfig optimizer;
  std::size_t max_masked = 75;  // capped at the patch count
  std::size_t steps_per_epoch = 0;  // 0 = ceil(records / batch_size)
  std::size_t steps = 0;            // 0 = total_epochs * steps_per_epoch
};

/// Everything a command reads; every field has a default so a config file
/// only lists what it changes. Unknown keys are rejected.
struct RunConfig {
  EncoderConfig encoder = EncoderConfig::base();
  PretrainRunConfig pretrain;
  WarpConfig warp;
  HeadConfig heads;
  HeadTrainConfig parsing = HeadTrainConfig::parsing();
  HeadTrainConfig alignment = HeadTrainConfig::alignment();
  HeadTrainConfig attributes = HeadTrainConfig::attributes();
  DataConfig data;
  std::string task = "attributes";  // parsing | alignment | attributes
  std::string mode = "probe";       // probe (frozen backbone) | finetune
  std::size_t resolution = 0;       // 0 = encoder image_size; 448 re-grids positions
  std::size_t head_steps = 0;       // 0 = epochs x batches
  std::uint64_t seed = 0;
  bool deterministic = false;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

/// Parses JSON text; `source` names the origin in diagnostics.
RunConfig parse_run_config(std::string_view text, const std::string& source = "config");
RunConfig load_run_config(const std::filesystem::path& path);
/// Full tree with every field, keys in declaration order, 2-space indent.
std::string serialize_run_config(const RunConfig& config);

/// Encoder section alone (stored in checkpoint metadata).
std::string serialize_encoder_config(const EncoderConfig& config);
EncoderConfig parse_encoder_config(std::string_view text);

}  // namespace facevl
