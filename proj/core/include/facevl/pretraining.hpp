// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "facevl/encoders.hpp"
#include "facevl/optim.hpp"

namespace facevl {

// ---- contrastive objective ---------------------------------------------------------

/// Learnable temperature stored as log(sigma) so sigma stays positive.
class TemperatureParam {
 public:
  explicit TemperatureParam(double sigma = 0.07);

  double sigma() const { return std::exp(log_sigma_.item()); }
  const ag::Var& log_sigma() const noexcept { return log_sigma_; }

 private:
  ag::Var log_sigma_;
};

struct ItcLoss {
  ag::Var image_to_text;  // L_I: each image against every caption
  ag::Var text_to_image;  // L_T: each caption against every image
  ag::Var total() const { return ag::scale(ag::add(image_to_text, text_to_image), 0.5); }
};

/// Symmetric InfoNCE over the B x B cosine-similarity matrix scaled by 1/sigma.
/// Rows must be unit-norm; the batch must be the full logical batch (a
/// data-parallel caller all-gathers embeddings first).
ItcLoss itc_loss(const ag::Var& image_embeddings, const ag::Var& text_embeddings,
                 const TemperatureParam& temperature);

// ---- masked image modeling --------------------------------------------------------

/// Masked token positions, 1-based over the patch tokens (0 is the cls token).
struct MaskSet {
  std::vector<std::size_t> positions;  // sorted, unique

  std::size_t size() const noexcept { return positions.size(); }
  bool contains(std::size_t p) const;
};

/// |M| ~ U{1..max_masked}, positions drawn without replacement from 1..patches.
MaskSet sample_mask(std::size_t patches, std::size_t max_masked, Rng& rng);

/// Learnable replacement vector with the patch-embedding width.
class MaskToken {
 public:
  MaskToken() = default;
  MaskToken(std::size_t width, Rng& rng);

  const ag::Var& value() const noexcept { return m_; }

 private:
  ag::Var m_;
};

/// Replaces rows of a (cls + patches) x W sequence at M by the mask token.
/// An empty M returns the input unchanged; M holding 0 (cls) is an input error.
ag::Var apply_mask(const ag::Var& patches, const MaskSet& mask, const MaskToken& token);

/// Patch -> discrete index in [0, vocab_size).
class VisualTokenizer {
 public:
  virtual ~VisualTokenizer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<std::size_t> tokenize(const Image& image) const = 0;
};

/// Quantises each patch's mean RGB into a bins^3 colour grid; index =
/// (r * bins + g) * bins + b. The default 8 bins give |V| = 512.
class ColorGridTokenizer final : public VisualTokenizer {
 public:
  explicit ColorGridTokenizer(std::size_t patch = 16, std::size_t bins = 8);

  std::size_t vocab_size() const override { return bins_ * bins_ * bins_; }
  std::vector<std::size_t> tokenize(const Image& image) const override;

 private:
  std::size_t patch_;
  std::size_t bins_;
};

/// Small Transformer (1 block for MIM1, 6 for MIM6) plus a classifier over |V|.
class MimHead {
 public:
  MimHead() = default;
  MimHead(std::size_t width, std::size_t heads, std::size_t depth, std::size_t vocab_size, Rng& rng);

  /// Logits for every token of a (cls + patches) x W feature sequence.
  ag::Var forward(const ag::Var& features) const;
  std::size_t depth() const noexcept { return blocks_.size(); }
  void collect(ParamList& params, const std::string& prefix) const;

 private:
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm norm_;
  nn::Linear classifier_;
};

/// Mean negative log-likelihood of `targets` (one per patch) at the masked
/// rows of a (cls + patches) x |V| logit matrix.
ag::Var masked_token_nll(const ag::Var& logits, const MaskSet& mask,
                         std::span<const std::size_t> targets);

/// Runs the MIM head over last-layer features of the masked image and scores
/// the masked positions only.
ag::Var mim_forward_loss(const MimHead& head, const ag::Var& masked_features, const MaskSet& mask,
                         std::span<const std::size_t> targets);

// ---- schedule ----------------------------------------------------------------------

struct ScheduleConfig {
  double lr_init = 1e-6;
  double lr_peak = 1e-3;
  double lr_final = 9e-4;
  double warmup_epochs = 1.0;
  double total_epochs = 16.0;
  double weight_decay = 0.05;
  double grad_clip_norm = 1.0;
  std::size_t batch_size = 8;

  void validate() const;
};

/// Linear warmup from lr_init to lr_peak, then half-cosine to lr_final;
/// clamps to lr_final past the end.
double lr_at_step(std::size_t step, std::size_t steps_per_epoch, const ScheduleConfig& cfg);

// ---- training -------------------------------------------------------------------------

struct PretrainToggles {
  bool itc = true;
  bool mim = true;
  std::size_t mim_depth = 1;  // 1 or 6
  bool align = true;
  double mim_weight = 1.0;

  /// Parses "ITC", "ITC,MIM1", "ITC,MIM6,ALIGN", ... (case-insensitive).
  static PretrainToggles parse(const std::string& list);
  std::string to_string() const;
  void validate() const;
};

struct PretrainOptions {
  EncoderConfig encoder = EncoderConfig::base();
  PretrainToggles toggles;
  ScheduleConfig schedule;
  AdamWConfig optimizer;
  std::size_t max_masked = 75;
  std::size_t steps_per_epoch = 1;
  std::uint64_t seed = 0;
};

/// Encoders plus everything that only exists during pre-training.
class PretrainModel {
 public:
  explicit PretrainModel(const PretrainOptions& options);

  DualEncoder& encoders() noexcept { return encoders_; }
  const DualEncoder& encoders() const noexcept { return encoders_; }
  const TemperatureParam& temperature() const noexcept { return temperature_; }
  const MaskToken& mask_token() const noexcept { return mask_token_; }
  const MimHead& mim_head() const noexcept { return mim_; }

  /// Encoder parameters plus "logit_scale.log_sigma", "mask_token", "mim.*".
  ParamList parameters() const;

 private:
  DualEncoder encoders_;
  TemperatureParam temperature_;
  MaskToken mask_token_;
  MimHead mim_;
};

struct PretrainSample {
  std::string id;
  Image image;  // already aligned / cropped to the encoder input size
  TextTokens tokens;
};

struct LossRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss_image = 0.0;  // L_I
  double loss_text = 0.0;   // L_T
  std::optional<double> loss_mim;
  double total = 0.0;
  double grad_norm = 0.0;  // before clipping
  double sigma = 0.0;

  /// One newline-free JSON object; loss_mim is omitted when MIM is off.
  std::string to_json() const;
};

/// Single-writer training loop state: model, optimizer, RNG and step counter.
class Pretrainer {
 public:
  Pretrainer(PretrainModel& model, const PretrainOptions& options,
             std::shared_ptr<const VisualTokenizer> tokenizer = nullptr);

  /// One optimisation step on a batch. Non-finite losses abort the step
  /// (parameters untouched) with a NumericalError naming `batch_id`.
  LossRecord step(std::span<const PretrainSample> batch, const std::string& batch_id);

  std::size_t current_step() const noexcept { return step_; }
  const AdamW& optimizer() const noexcept { return optimizer_; }

 private:
  PretrainModel& model_;
  PretrainOptions options_;
  std::shared_ptr<const VisualTokenizer> tokenizer_;
  AdamW optimizer_;
  Rng rng_;
  std::size_t step_ = 0;
};

}  // namespace facevl
