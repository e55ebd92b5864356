// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "facevl/geometry.hpp"
#include "facevl/image.hpp"

namespace facevl {

/// Per-class pixel counts; merge() is associative and commutative.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(std::size_t num_classes = 0);

  void add(const LabelMap& pred, const LabelMap& gt);
  void merge(const ConfusionAccumulator& other);

  std::size_t num_classes() const noexcept { return tp_.size(); }
  std::uint64_t true_positives(std::size_t c) const { return tp_.at(c); }
  std::uint64_t false_positives(std::size_t c) const { return fp_.at(c); }
  std::uint64_t false_negatives(std::size_t c) const { return fn_.at(c); }
  std::uint64_t pixels() const noexcept { return pixels_; }

 private:
  std::vector<std::uint64_t> tp_;
  std::vector<std::uint64_t> fp_;
  std::vector<std::uint64_t> fn_;
  std::uint64_t pixels_ = 0;
};

struct F1Report {
  std::vector<std::optional<double>> per_class;  // percent; nullopt when absent in pred and gt
  std::optional<double> mean;                    // over defined foreground classes (class 0 excluded)
};

F1Report f1_scores(const ConfusionAccumulator& acc);
F1Report f1_scores(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes);

enum class NmeNormalizer { kDiagonal, kBox, kInterOcular };

struct BoundingBox {
  double width = 0.0;
  double height = 0.0;
};

/// Normaliser inputs: the ground-truth box for kDiagonal/kBox, the two
/// outer-eye-corner landmark indices for kInterOcular.
struct NmeReference {
  BoundingBox box;
  std::size_t left_eye = 0;
  std::size_t right_eye = 0;
};

/// Mean point-to-point error divided by the normaliser (a ratio, not percent).
double nme(std::span<const Point2> pred, std::span<const Point2> gt, NmeNormalizer normalizer,
           const NmeReference& reference);
double nme_normalizer(std::span<const Point2> gt, NmeNormalizer normalizer, const NmeReference& reference);

/// Percent of images whose NME exceeds tau.
double failure_rate(std::span<const double> nmes, double tau);
/// Area under the empirical CED on [0, tau], divided by tau, in percent.
double auc_ced(std::span<const double> nmes, double tau);

/// B x A attribute predictions and labels, one vector<bool> per sample.
double mean_accuracy(const std::vector<std::vector<bool>>& pred, const std::vector<std::vector<bool>>& gt);
std::vector<double> attribute_accuracies(const std::vector<std::vector<bool>>& pred,
                                         const std::vector<std::vector<bool>>& gt);

struct GroupAccuracy {
  double accuracy = 0.0;  // percent
  std::size_t samples = 1;
};

struct GroupDiscrepancy {
  double pooled_accuracy = 0.0;
  double reference_accuracy = 0.0;
  double discrepancy = 0.0;  // pooled - reference
};

/// Sample-weighted accuracy over `pooled` minus the accuracy of `reference`.
GroupDiscrepancy group_discrepancy(const std::map<std::string, GroupAccuracy>& groups,
                                   const std::string& reference, const std::vector<std::string>& pooled);

/// Aggregate of one evaluation run; absent sections are omitted from output.
struct MetricReport {
  std::vector<std::string> class_names;
  std::optional<F1Report> f1;
  std::optional<std::string> nme_normalizer;
  std::optional<double> nme_mean;  // ratio
  std::optional<double> failure_rate_pct;
  std::optional<double> auc_pct;
  std::optional<double> tau;
  std::optional<double> mean_accuracy_pct;
  std::optional<GroupDiscrepancy> groups;
  std::vector<std::string> notes;

  /// Pretty-printed JSON with a fixed key order.
  std::string to_json() const;
  /// Fixed-width text tables in the usual benchmark column layout.
  std::string to_table() const;
};

}  // namespace facevl
