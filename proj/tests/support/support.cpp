// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl_test/support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "facevl/encoders.hpp"
#include "facevl/synthetic.hpp"
#include "facevl/tokenizer.hpp"

namespace facevl::testing {
namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<std::size_t> probe_indices(std::size_t size, std::size_t wanted, Rng& rng) {
  std::vector<std::size_t> all(size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (wanted >= size) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(wanted);
  return all;
}

HeadOverfitResult train_and_score(Task task, std::vector<DownstreamSample> samples, std::size_t steps,
                                  const HeadTrainConfig& train) {
  const EncoderConfig encoder = EncoderConfig::miniature();
  HeadConfig heads = miniature_head_config(encoder.image.image_size);
  DownstreamModel model(DualEncoder(encoder), task, heads, false);
  DownstreamTrainOptions options;
  options.train = train;
  options.train.batch_size = samples.size();
  options.steps = steps;

  HeadOverfitResult result;
  const auto start = std::chrono::steady_clock::now();
  result.losses = train_downstream(model, samples, options);
  result.seconds = seconds_since(start);

  std::size_t correct = 0;
  std::size_t pixels = 0;
  double error = 0.0;
  std::size_t points = 0;
  std::vector<std::vector<bool>> pred;
  std::vector<std::vector<bool>> gt;
  for (const auto& s : samples) {
    const Prediction p = model.predict(s);
    if (s.labels) {
      for (std::size_t i = 0; i < s.labels->labels.size(); ++i) correct += p.labels->labels[i] == s.labels->labels[i];
      pixels += s.labels->labels.size();
    }
    if (s.landmarks) {
      for (std::size_t i = 0; i < s.landmarks->size(); ++i) {
        error += std::hypot((*p.landmarks)[i].x - (*s.landmarks)[i].x, (*p.landmarks)[i].y - (*s.landmarks)[i].y);
        ++points;
      }
    }
    if (s.attributes) {
      pred.push_back(*p.attributes);
      gt.push_back(*s.attributes);
    }
  }
  if (pixels > 0) result.pixel_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(pixels);
  if (points > 0) {
    result.error_image_px = error / static_cast<double>(points);
    result.error_heatmap_px =
        result.error_image_px * static_cast<double>(heads.heatmap_size) / static_cast<double>(encoder.image.image_size);
  }
  if (!gt.empty()) result.mean_accuracy = mean_accuracy(pred, gt);
  return result;
}

}  // namespace

GradCheckResult check_gradients(const std::function<ag::Var()>& loss, const std::vector<ag::Var>& inputs,
                                std::size_t probes_per_input, std::uint64_t seed, double step) {
  std::vector<ag::Var> vars = inputs;
  for (auto& v : vars) v.zero_grad();
  ag::backward(loss());
  std::vector<Tensor> analytic;
  for (const auto& v : vars) analytic.push_back(v.grad());

  Rng rng(seed);
  double diff_sq = 0.0;
  double analytic_sq = 0.0;
  double numeric_sq = 0.0;
  GradCheckResult result;
  ag::NoGradGuard guard;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    Tensor& value = vars[k].mutable_value();
    for (std::size_t i : probe_indices(value.size(), probes_per_input, rng)) {
      const double saved = value[i];
      value[i] = saved + step;
      const double up = loss().item();
      value[i] = saved - step;
      const double down = loss().item();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      diff_sq += (a - numeric) * (a - numeric);
      analytic_sq += a * a;
      numeric_sq += numeric * numeric;
      ++result.probes;
    }
  }
  const double scale = std::sqrt(std::max({analytic_sq, numeric_sq, 1e-300}));
  result.relative_error = std::sqrt(diff_sq) / scale;
  result.analytic_norm = std::sqrt(analytic_sq);
  return result;
}

F1Oracle f1_oracle(const LabelMap& pred, const LabelMap& gt, std::size_t classes) {
  F1Oracle o;
  o.tp.assign(classes, 0);
  o.fp.assign(classes, 0);
  o.fn.assign(classes, 0);
  o.per_class.resize(classes);
  double total = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto label = static_cast<std::int32_t>(c);
    for (std::size_t y = 0; y < gt.height; ++y) {
      for (std::size_t x = 0; x < gt.width; ++x) {
        const bool in_pred = pred.at(y, x) == label;
        const bool in_gt = gt.at(y, x) == label;
        if (in_pred && in_gt) ++o.tp[c];
        if (in_pred && !in_gt) ++o.fp[c];
        if (!in_pred && in_gt) ++o.fn[c];
      }
    }
    const double precision_den = static_cast<double>(o.tp[c] + o.fp[c]);
    const double recall_den = static_cast<double>(o.tp[c] + o.fn[c]);
    if (precision_den == 0.0 && recall_den == 0.0) continue;
    double f1 = 0.0;
    if (o.tp[c] > 0) {
      const double precision = static_cast<double>(o.tp[c]) / precision_den;
      const double recall = static_cast<double>(o.tp[c]) / recall_den;
      f1 = 100.0 * 2.0 * precision * recall / (precision + recall);
    }
    o.per_class[c] = f1;
    if (c > 0) {
      total += f1;
      ++defined;
    }
  }
  if (defined > 0) o.mean = total / static_cast<double>(defined);
  return o;
}

double nme_oracle(const Landmarks& pred, const Landmarks& gt, NmeNormalizer normalizer,
                  const NmeReference& reference) {
  double d = 0.0;
  switch (normalizer) {
    case NmeNormalizer::kDiagonal:
      d = std::sqrt(reference.box.width * reference.box.width + reference.box.height * reference.box.height);
      break;
    case NmeNormalizer::kBox:
      d = std::sqrt(reference.box.width * reference.box.height);
      break;
    case NmeNormalizer::kInterOcular: {
      const double dx = gt[reference.left_eye].x - gt[reference.right_eye].x;
      const double dy = gt[reference.left_eye].y - gt[reference.right_eye].y;
      d = std::sqrt(dx * dx + dy * dy);
      break;
    }
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double dx = pred[i].x - gt[i].x;
    const double dy = pred[i].y - gt[i].y;
    sum += std::sqrt(dx * dx + dy * dy) / d;
  }
  return sum / static_cast<double>(gt.size());
}

double failure_rate_oracle(const std::vector<double>& nmes, double tau) {
  std::size_t failures = 0;
  for (double v : nmes) failures += v > tau ? 1 : 0;
  return 100.0 * static_cast<double>(failures) / static_cast<double>(nmes.size());
}

double auc_oracle(const std::vector<double>& nmes, double tau) {
  std::vector<double> cuts{0.0, tau};
  for (double v : nmes)
    if (v > 0.0 && v < tau) cuts.push_back(v);
  std::sort(cuts.begin(), cuts.end());
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    std::size_t below = 0;
    for (double v : nmes) below += v <= cuts[i] ? 1 : 0;
    area += (cuts[i + 1] - cuts[i]) * static_cast<double>(below) / static_cast<double>(nmes.size());
  }
  return 100.0 * area / tau;
}

double mean_accuracy_oracle(const std::vector<std::vector<bool>>& pred, const std::vector<std::vector<bool>>& gt) {
  const std::size_t attrs = gt.front().size();
  double total = 0.0;
  for (std::size_t a = 0; a < attrs; ++a) {
    std::size_t hits = 0;
    for (std::size_t b = 0; b < gt.size(); ++b) hits += pred[b][a] == gt[b][a] ? 1 : 0;
    total += 100.0 * static_cast<double>(hits) / static_cast<double>(gt.size());
  }
  return total / static_cast<double>(attrs);
}

double pooled_accuracy_oracle(const std::map<std::string, GroupAccuracy>& groups,
                              const std::vector<std::string>& pooled) {
  double correct = 0.0;
  double samples = 0.0;
  for (const auto& name : pooled) {
    const GroupAccuracy& g = groups.at(name);
    correct += g.accuracy / 100.0 * static_cast<double>(g.samples);
    samples += static_cast<double>(g.samples);
  }
  return 100.0 * correct / samples;
}

HeadConfig miniature_head_config(std::size_t image_size) {
  HeadConfig heads;
  heads.layers = {1, 2, 2, 2};
  heads.trunk_width = 16;
  heads.parsing_classes = 4;
  heads.landmarks = 5;
  heads.output_size = image_size;
  return heads;
}

HeadOverfitResult overfit_parsing(std::size_t samples, std::size_t steps) {
  const std::size_t size = EncoderConfig::miniature().image.image_size;
  Rng rng(7);
  std::vector<DownstreamSample> data;
  for (std::size_t i = 0; i < samples; ++i) {
    GridParsingSample g = grid_parsing_sample(size, 16, 4, rng);
    DownstreamSample s;
    s.id = "parsing" + std::to_string(i);
    s.image = std::move(g.image);
    s.labels = std::move(g.labels);
    data.push_back(std::move(s));
  }
  return train_and_score(Task::kParsing, std::move(data), steps, HeadTrainConfig::parsing());
}

HeadOverfitResult overfit_alignment(std::size_t samples, std::size_t steps) {
  const std::size_t size = EncoderConfig::miniature().image.image_size;
  Rng rng(7);
  std::vector<DownstreamSample> data;
  for (std::size_t i = 0; i < samples; ++i) {
    const SyntheticFace face = random_face(rng, size);
    DownstreamSample s;
    s.id = "alignment" + std::to_string(i);
    s.image = render_face(face, size).image;
    s.landmarks = face.five;
    data.push_back(std::move(s));
  }
  return train_and_score(Task::kAlignment, std::move(data), steps, HeadTrainConfig::alignment());
}

HeadOverfitResult overfit_attributes(std::size_t samples, std::size_t steps) {
  const std::size_t size = EncoderConfig::miniature().image.image_size;
  Rng rng(7);
  std::vector<DownstreamSample> data;
  for (std::size_t i = 0; i < samples; ++i) {
    const SyntheticFace face = random_face(rng, size);
    DownstreamSample s;
    s.id = "attributes" + std::to_string(i);
    s.image = render_face(face, size).image;
    s.attributes = face.attributes();
    data.push_back(std::move(s));
  }
  return train_and_score(Task::kAttributes, std::move(data), steps, HeadTrainConfig::attributes());
}

PretrainOverfitResult overfit_pretraining(const std::string& toggles, std::size_t pairs, std::size_t steps) {
  PretrainOptions options;
  options.encoder = EncoderConfig::miniature();
  options.toggles = PretrainToggles::parse(toggles);
  options.steps_per_epoch = 1;
  options.schedule.total_epochs = std::max(static_cast<double>(steps), 2.0);
  options.schedule.batch_size = pairs;
  const std::size_t size = options.encoder.image.image_size;
  options.max_masked = std::min(options.max_masked, options.encoder.image.patch_count());

  std::vector<PretrainSample> batch;
  for (std::size_t i = 0; i < pairs; ++i) {
    const SyntheticFace face = indexed_face(i, size);
    batch.push_back({"pair" + std::to_string(i), render_face(face, size).image,
                     Vocabulary::builtin().tokenize(face.caption())});
  }
  PretrainModel model(options);
  Pretrainer trainer(model, options);
  PretrainOverfitResult result;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < steps; ++s) result.records.push_back(trainer.step(batch, "overfit"));
  result.seconds = seconds_since(start);
  return result;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("facevl-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace facevl::testing
