// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "facevl/errors.hpp"

namespace facevl {

ConfusionAccumulator::ConfusionAccumulator(std::size_t num_classes)
    : tp_(num_classes), fp_(num_classes), fn_(num_classes) {}

void ConfusionAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.labels.size() != gt.labels.size()) {
    throw DimensionError("confusion: prediction and ground truth shapes differ");
  }
  const auto n = static_cast<std::int32_t>(num_classes());
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const std::int32_t p = pred.labels[i];
    const std::int32_t g = gt.labels[i];
    if (p < 0 || p >= n || g < 0 || g >= n) throw InputError("confusion: label outside class range");
    if (p == g) {
      ++tp_[static_cast<std::size_t>(p)];
    } else {
      ++fp_[static_cast<std::size_t>(p)];
      ++fn_[static_cast<std::size_t>(g)];
    }
  }
  pixels_ += gt.labels.size();
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.num_classes() != num_classes()) throw InputError("confusion: class counts differ");
  for (std::size_t c = 0; c < num_classes(); ++c) {
    tp_[c] += other.tp_[c];
    fp_[c] += other.fp_[c];
    fn_[c] += other.fn_[c];
  }
  pixels_ += other.pixels_;
}

F1Report f1_scores(const ConfusionAccumulator& acc) {
  F1Report r;
  r.per_class.resize(acc.num_classes());
  double total = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < acc.num_classes(); ++c) {
    const std::uint64_t tp = acc.true_positives(c);
    const std::uint64_t denom = 2 * tp + acc.false_positives(c) + acc.false_negatives(c);
    if (denom == 0) continue;
    const double f1 = 100.0 * static_cast<double>(2 * tp) / static_cast<double>(denom);
    r.per_class[c] = f1;
    if (c > 0) {
      total += f1;
      ++defined;
    }
  }
  if (defined > 0) r.mean = total / static_cast<double>(defined);
  return r;
}

F1Report f1_scores(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes) {
  ConfusionAccumulator acc(num_classes);
  acc.add(pred, gt);
  return f1_scores(acc);
}

double nme_normalizer(std::span<const Point2> gt, NmeNormalizer normalizer, const NmeReference& reference) {
  switch (normalizer) {
    case NmeNormalizer::kDiagonal:
      return std::hypot(reference.box.width, reference.box.height);
    case NmeNormalizer::kBox:
      if (reference.box.width < 0.0 || reference.box.height < 0.0) return 0.0;
      return std::sqrt(reference.box.width * reference.box.height);
    case NmeNormalizer::kInterOcular: {
      if (reference.left_eye >= gt.size() || reference.right_eye >= gt.size()) {
        throw InputError("nme: eye-corner index outside the landmark set");
      }
      const Point2 a = gt[reference.left_eye];
      const Point2 b = gt[reference.right_eye];
      return std::hypot(a.x - b.x, a.y - b.y);
    }
  }
  return 0.0;
}

double nme(std::span<const Point2> pred, std::span<const Point2> gt, NmeNormalizer normalizer,
           const NmeReference& reference) {
  if (pred.size() != gt.size()) throw DimensionError("nme: landmark counts differ");
  if (gt.empty()) throw InputError("nme: no landmarks");
  const double d = nme_normalizer(gt, normalizer, reference);
  if (!(d > 0.0) || !std::isfinite(d)) throw InputError("nme: zero normaliser");
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) total += std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
  return total / static_cast<double>(gt.size()) / d;
}

namespace {

void require_curve_input(std::span<const double> nmes, double tau, const char* what) {
  if (nmes.empty()) throw InputError(std::string(what) + ": empty NME list");
  if (!(tau > 0.0)) throw InputError(std::string(what) + ": tau must be positive");
  for (double v : nmes)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InputError(std::string(what) + ": NME values must be finite and >= 0");
}

}  // namespace

double failure_rate(std::span<const double> nmes, double tau) {
  require_curve_input(nmes, tau, "failure_rate");
  const auto failures = std::count_if(nmes.begin(), nmes.end(), [tau](double v) { return v > tau; });
  return 100.0 * static_cast<double>(failures) / static_cast<double>(nmes.size());
}

double auc_ced(std::span<const double> nmes, double tau) {
  require_curve_input(nmes, tau, "auc_ced");
  // F(e) steps up by 1/n at each NME; its integral over [0, tau] is the sum of
  // (tau - nme_i) / n over the images below tau.
  double area = 0.0;
  for (double v : nmes)
    if (v < tau) area += tau - v;
  return 100.0 * area / (static_cast<double>(nmes.size()) * tau);
}

std::vector<double> attribute_accuracies(const std::vector<std::vector<bool>>& pred,
                                         const std::vector<std::vector<bool>>& gt) {
  if (gt.empty()) throw InputError("mean_accuracy: empty batch");
  if (pred.size() != gt.size()) throw DimensionError("mean_accuracy: batch sizes differ");
  const std::size_t attrs = gt.front().size();
  if (attrs == 0) throw InputError("mean_accuracy: no attributes");
  std::vector<std::size_t> correct(attrs, 0);
  for (std::size_t b = 0; b < gt.size(); ++b) {
    if (gt[b].size() != attrs || pred[b].size() != attrs) {
      throw DimensionError("mean_accuracy: attribute counts differ");
    }
    for (std::size_t a = 0; a < attrs; ++a)
      if (pred[b][a] == gt[b][a]) ++correct[a];
  }
  std::vector<double> acc(attrs);
  for (std::size_t a = 0; a < attrs; ++a) {
    acc[a] = 100.0 * static_cast<double>(correct[a]) / static_cast<double>(gt.size());
  }
  return acc;
}

double mean_accuracy(const std::vector<std::vector<bool>>& pred, const std::vector<std::vector<bool>>& gt) {
  const std::vector<double> acc = attribute_accuracies(pred, gt);
  double total = 0.0;
  for (double a : acc) total += a;
  return total / static_cast<double>(acc.size());
}

GroupDiscrepancy group_discrepancy(const std::map<std::string, GroupAccuracy>& groups,
                                   const std::string& reference, const std::vector<std::string>& pooled) {
  auto lookup = [&](const std::string& name) -> const GroupAccuracy& {
    const auto it = groups.find(name);
    if (it == groups.end()) throw InputError("group_discrepancy: unknown group '" + name + "'");
    if (it->second.samples == 0) throw InputError("group_discrepancy: group '" + name + "' is empty");
    return it->second;
  };
  if (pooled.empty()) throw InputError("group_discrepancy: empty pooled group set");
  double weighted = 0.0;
  double samples = 0.0;
  for (const auto& name : pooled) {
    const GroupAccuracy& g = lookup(name);
    weighted += g.accuracy * static_cast<double>(g.samples);
    samples += static_cast<double>(g.samples);
  }
  GroupDiscrepancy out;
  out.pooled_accuracy = weighted / samples;
  out.reference_accuracy = lookup(reference).accuracy;
  out.discrepancy = out.pooled_accuracy - out.reference_accuracy;
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  if (f1) {
    nlohmann::ordered_json classes = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < f1->per_class.size(); ++c) {
      nlohmann::ordered_json entry;
      entry["class"] = c < class_names.size() ? class_names[c] : std::to_string(c);
      entry["f1"] = f1->per_class[c] ? nlohmann::ordered_json(*f1->per_class[c]) : nlohmann::ordered_json();
      classes.push_back(entry);
    }
    j["f1"]["per_class"] = classes;
    j["f1"]["mean"] = f1->mean ? nlohmann::ordered_json(*f1->mean) : nlohmann::ordered_json();
  }
  if (nme_mean) {
    j["alignment"]["normalizer"] = nme_normalizer.value_or("");
    j["alignment"]["nme"] = *nme_mean;
    if (tau) j["alignment"]["tau"] = *tau;
    if (failure_rate_pct) j["alignment"]["failure_rate"] = *failure_rate_pct;
    if (auc_pct) j["alignment"]["auc"] = *auc_pct;
  }
  if (mean_accuracy_pct) j["attributes"]["mean_accuracy"] = *mean_accuracy_pct;
  if (groups) {
    j["groups"]["pooled"] = groups->pooled_accuracy;
    j["groups"]["reference"] = groups->reference_accuracy;
    j["groups"]["discrepancy"] = groups->discrepancy;
  }
  if (!notes.empty()) j["notes"] = notes;
  return j.dump(2) + "\n";
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  char buf[128];
  for (const auto& n : notes) out << "# " << n << '\n';
  if (f1) {
    out << "Parsing F1 (%)\n";
    for (std::size_t c = 1; c < f1->per_class.size(); ++c) {
      const std::string name = c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
      if (f1->per_class[c]) {
        std::snprintf(buf, sizeof(buf), "  %-16s %8.2f\n", name.c_str(), *f1->per_class[c]);
      } else {
        std::snprintf(buf, sizeof(buf), "  %-16s %8s\n", name.c_str(), "n/a");
      }
      out << buf;
    }
    if (f1->mean) {
      std::snprintf(buf, sizeof(buf), "  %-16s %8.2f\n", "mean", *f1->mean);
    } else {
      std::snprintf(buf, sizeof(buf), "  %-16s %8s\n", "mean", "n/a");
    }
    out << buf;
  }
  if (nme_mean) {
    out << "Alignment (" << nme_normalizer.value_or("?") << ")\n";
    std::snprintf(buf, sizeof(buf), "  %-16s %8.3f\n", "NME (%)", 100.0 * *nme_mean);
    out << buf;
    if (failure_rate_pct) {
      std::snprintf(buf, sizeof(buf), "  %-16s %8.2f\n", "FR (%)", *failure_rate_pct);
      out << buf;
    }
    if (auc_pct) {
      std::snprintf(buf, sizeof(buf), "  %-16s %8.2f\n", "AUC (%)", *auc_pct);
      out << buf;
    }
  }
  if (mean_accuracy_pct) {
    std::snprintf(buf, sizeof(buf), "Attributes\n  %-16s %8.2f\n", "mAcc (%)", *mean_accuracy_pct);
    out << buf;
  }
  if (groups) {
    std::snprintf(buf, sizeof(buf), "Groups\n  %-16s %8.2f\n  %-16s %8.2f\n  %-16s %+8.2f\n", "reference",
                  groups->reference_accuracy, "pooled", groups->pooled_accuracy, "discrepancy",
                  groups->discrepancy);
    out << buf;
  }
  return out.str();
}

}  // namespace facevl
