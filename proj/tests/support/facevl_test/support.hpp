// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "facevl/autograd.hpp"
#include "facevl/downstream.hpp"
#include "facevl/geometry.hpp"
#include "facevl/image.hpp"
#include "facevl/metrics.hpp"
#include "facevl/pretraining.hpp"

namespace facevl::testing {

// ---- finite differences -------------------------------------------------------------

struct GradCheckResult {
  double relative_error = 0.0;  // |analytic - numeric| / max(|analytic|, |numeric|) over probed entries
  std::size_t probes = 0;
  double analytic_norm = 0.0;
};

/// Compares the reverse-mode gradient of `loss` (rebuilt on every call) with
/// central differences at up to `probes_per_input` random entries of each input.
GradCheckResult check_gradients(const std::function<ag::Var()>& loss, const std::vector<ag::Var>& inputs,
                                std::size_t probes_per_input, std::uint64_t seed, double step = 1e-5);

// ---- brute-force metric oracles --------------------------------------------------

struct F1Oracle {
  std::vector<std::optional<double>> per_class;
  std::optional<double> mean;
  std::vector<std::uint64_t> tp, fp, fn;
};
F1Oracle f1_oracle(const LabelMap& pred, const LabelMap& gt, std::size_t classes);
double nme_oracle(const Landmarks& pred, const Landmarks& gt, NmeNormalizer normalizer,
                  const NmeReference& reference);
double failure_rate_oracle(const std::vector<double>& nmes, double tau);
/// Piecewise-constant integration of the sorted empirical CED.
double auc_oracle(const std::vector<double>& nmes, double tau);
double mean_accuracy_oracle(const std::vector<std::vector<bool>>& pred, const std::vector<std::vector<bool>>& gt);
double pooled_accuracy_oracle(const std::map<std::string, GroupAccuracy>& groups,
                              const std::vector<std::string>& pooled);

// ---- training fixtures -------------------------------------------------------------

/// Miniature backbone with the heads wired to layers {1, 2, 2, 2}.
HeadConfig miniature_head_config(std::size_t image_size = 32);

struct HeadOverfitResult {
  std::vector<double> losses;
  double pixel_accuracy = 0.0;      // parsing
  double error_image_px = 0.0;      // alignment, mean point error in image pixels
  double error_heatmap_px = 0.0;    // alignment, same error in heatmap pixels
  double mean_accuracy = 0.0;       // attributes, percent
  double seconds = 0.0;
};
/// Frozen miniature backbone, one head trained full-batch on a few synthetic samples.
HeadOverfitResult overfit_parsing(std::size_t samples, std::size_t steps);
HeadOverfitResult overfit_alignment(std::size_t samples, std::size_t steps);
HeadOverfitResult overfit_attributes(std::size_t samples, std::size_t steps);

struct PretrainOverfitResult {
  std::vector<LossRecord> records;
  double seconds = 0.0;
};
/// Repeats one batch of `pairs` indexed synthetic faces and their captions.
PretrainOverfitResult overfit_pretraining(const std::string& toggles, std::size_t pairs, std::size_t steps);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace facevl::testing
