// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/pretraining.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "facevl/errors.hpp"

namespace facevl {

// ---- contrastive ----------------------------------------------------------------------

TemperatureParam::TemperatureParam(double sigma) {
  if (!(sigma > 0.0)) throw InputError("temperature must be positive");
  log_sigma_ = ag::Var::parameter(Tensor::scalar(std::log(sigma)));
}

ItcLoss itc_loss(const ag::Var& image_embeddings, const ag::Var& text_embeddings,
                 const TemperatureParam& temperature) {
  if (image_embeddings.rows() == 0) throw InputError("itc_loss: empty batch");
  if (!image_embeddings.value().same_shape(text_embeddings.value())) {
    throw DimensionError("itc_loss: image batch " + image_embeddings.value().shape_string() +
                         " vs text batch " + text_embeddings.value().shape_string());
  }
  for (const ag::Var* batch : {&image_embeddings, &text_embeddings}) {
    for (std::size_t r = 0; r < batch->rows(); ++r) {
      double sq = 0.0;
      for (double v : batch->value().row_span(r)) sq += v * v;
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
        throw InputError("itc_loss: embeddings must be unit-normalised (row " + std::to_string(r) + ")");
      }
    }
  }
  const ag::Var inv_sigma = ag::exp(ag::neg(temperature.log_sigma()));
  const ag::Var logits = ag::scale_by(ag::matmul_nt(image_embeddings, text_embeddings), inv_sigma);
  for (double v : logits.value().values()) {
    if (!std::isfinite(v)) throw NumericalError("itc_loss: non-finite logits");
  }
  std::vector<std::size_t> diagonal(logits.rows());
  std::iota(diagonal.begin(), diagonal.end(), std::size_t{0});
  ItcLoss out;
  out.image_to_text = ag::neg(ag::mean(ag::pick(ag::log_softmax_rows(logits), diagonal)));
  out.text_to_image = ag::neg(ag::mean(ag::pick(ag::log_softmax_rows(ag::transpose(logits)), diagonal)));
  return out;
}

// ---- masking ------------------------------------------------------------------------

bool MaskSet::contains(std::size_t p) const {
  return std::binary_search(positions.begin(), positions.end(), p);
}

MaskSet sample_mask(std::size_t patches, std::size_t max_masked, Rng& rng) {
  if (max_masked == 0 || max_masked > patches) {
    throw InputError("sample_mask: max_masked must lie in 1.." + std::to_string(patches));
  }
  const std::size_t count = std::uniform_int_distribution<std::size_t>(1, max_masked)(rng);
  std::vector<std::size_t> pool(patches);
  std::iota(pool.begin(), pool.end(), std::size_t{1});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, patches - 1)(rng);
    std::swap(pool[i], pool[j]);
  }
  MaskSet mask{{pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count)}};
  std::sort(mask.positions.begin(), mask.positions.end());
  return mask;
}

MaskToken::MaskToken(std::size_t width, Rng& rng)
    : m_(ag::Var::parameter(normal_tensor(1, width, 0.02, rng))) {}

ag::Var apply_mask(const ag::Var& patches, const MaskSet& mask, const MaskToken& token) {
  for (std::size_t i = 0; i < mask.positions.size(); ++i) {
    const std::size_t p = mask.positions[i];
    if (p == 0) throw InputError("apply_mask: the cls token cannot be masked");
    if (p >= patches.rows()) throw InputError("apply_mask: position beyond sequence");
    if (i > 0 && mask.positions[i - 1] >= p) throw InputError("apply_mask: positions must be sorted and unique");
  }
  if (mask.positions.empty()) return patches;
  return ag::replace_rows(patches, mask.positions, token.value());
}

ColorGridTokenizer::ColorGridTokenizer(std::size_t patch, std::size_t bins) : patch_(patch), bins_(bins) {
  if (patch == 0 || bins == 0) throw InputError("ColorGridTokenizer: patch and bins must be positive");
}

std::vector<std::size_t> ColorGridTokenizer::tokenize(const Image& image) const {
  const Tensor tiles = patchify_pixels(image, patch_);
  const std::size_t area = patch_ * patch_;
  std::vector<std::size_t> out(tiles.rows());
  for (std::size_t r = 0; r < tiles.rows(); ++r) {
    std::size_t index = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (std::size_t k = 0; k < area; ++k) mean += tiles(r, c * area + k);
      mean /= static_cast<double>(area);
      const auto bin = std::min(bins_ - 1, static_cast<std::size_t>(std::max(0.0, mean) * static_cast<double>(bins_)));
      index = index * bins_ + bin;
    }
    out[r] = index;
  }
  return out;
}

MimHead::MimHead(std::size_t width, std::size_t heads, std::size_t depth, std::size_t vocab_size, Rng& rng)
    : norm_(width), classifier_(width, vocab_size, rng) {
  if (depth == 0) throw ConfigError("MIM head depth must be positive");
  for (std::size_t i = 0; i < depth; ++i) blocks_.emplace_back(width, heads, 4, rng);
}

ag::Var MimHead::forward(const ag::Var& features) const {
  ag::Var x = features;
  for (const auto& block : blocks_) x = block.forward(x, false);
  return classifier_.forward(norm_.forward(x));
}

void MimHead::collect(ParamList& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(params, prefix + ".blocks." + std::to_string(i));
  }
  norm_.collect(params, prefix + ".norm");
  classifier_.collect(params, prefix + ".classifier");
}

ag::Var masked_token_nll(const ag::Var& logits, const MaskSet& mask,
                         std::span<const std::size_t> targets) {
  if (mask.positions.empty()) throw InputError("MIM loss needs at least one masked position");
  if (targets.size() + 1 != logits.rows()) {
    throw DimensionError("MIM loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.rows()) + " token rows");
  }
  std::vector<std::size_t> picked;
  picked.reserve(mask.positions.size());
  for (std::size_t p : mask.positions) {
    if (p == 0 || p >= logits.rows()) throw InputError("MIM loss: invalid masked position");
    if (targets[p - 1] >= logits.cols()) throw InputError("MIM loss: target outside vocabulary");
    picked.push_back(targets[p - 1]);
  }
  const ag::Var log_probs = ag::log_softmax_rows(ag::gather_rows(logits, mask.positions));
  return ag::neg(ag::mean(ag::pick(log_probs, picked)));
}

ag::Var mim_forward_loss(const MimHead& head, const ag::Var& masked_features, const MaskSet& mask,
                         std::span<const std::size_t> targets) {
  if (mask.positions.empty()) throw InputError("MIM loss needs at least one masked position");
  return masked_token_nll(head.forward(masked_features), mask, targets);
}

// ---- schedule -------------------------------------------------------------------------

void ScheduleConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("schedule: " + m); };
  if (!(lr_init > 0 && lr_peak > 0 && lr_final > 0)) fail("learning rates must be positive");
  if (!(lr_init < lr_peak)) fail("lr_init must be below lr_peak");
  if (!(lr_final <= lr_peak)) fail("lr_final must not exceed lr_peak");
  if (!(warmup_epochs > 0 && total_epochs > warmup_epochs)) fail("need 0 < warmup_epochs < total_epochs");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(grad_clip_norm > 0)) fail("grad_clip_norm must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
}

double lr_at_step(std::size_t step, std::size_t steps_per_epoch, const ScheduleConfig& cfg) {
  if (steps_per_epoch == 0) throw InputError("steps_per_epoch must be positive");
  const double s = static_cast<double>(step);
  const double warmup = cfg.warmup_epochs * static_cast<double>(steps_per_epoch);
  const double total = cfg.total_epochs * static_cast<double>(steps_per_epoch);
  if (s <= warmup) return cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * (s / warmup);
  const double progress = std::min(1.0, (s - warmup) / (total - warmup));
  return cfg.lr_final + 0.5 * (cfg.lr_peak - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- toggles ---------------------------------------------------------------------------

PretrainToggles PretrainToggles::parse(const std::string& list) {
  PretrainToggles t{.itc = false, .mim = false, .mim_depth = 1, .align = false, .mim_weight = 1.0};
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }),
               item.end());
    std::transform(item.begin(), item.end(), item.begin(), [](unsigned char c) { return std::toupper(c); });
    if (item.empty()) continue;
    if (item == "ITC") {
      t.itc = true;
    } else if (item == "MIM" || item == "MIM1") {
      t.mim = true;
      t.mim_depth = 1;
    } else if (item == "MIM6") {
      t.mim = true;
      t.mim_depth = 6;
    } else if (item == "ALIGN") {
      t.align = true;
    } else {
      throw ConfigError("unknown toggle '" + item + "' (expected ITC, MIM1, MIM6, ALIGN)");
    }
  }
  t.validate();
  return t;
}

std::string PretrainToggles::to_string() const {
  std::string out = itc ? "ITC" : "";
  if (mim) out += (out.empty() ? "" : ",") + std::string(mim_depth == 6 ? "MIM6" : "MIM1");
  if (align) out += (out.empty() ? "" : ",") + std::string("ALIGN");
  return out;
}

void PretrainToggles::validate() const {
  if (!itc) throw ConfigError("toggles must include ITC");
  if (mim && mim_depth != 1 && mim_depth != 6) throw ConfigError("MIM head depth must be 1 or 6");
  if (!(mim_weight >= 0.0)) throw ConfigError("mim_weight must be non-negative");
}

// ---- model and trainer -------------------------------------------------------------

namespace {

std::size_t heads_for(std::size_t width) {
  for (std::size_t h : {12, 8, 4, 2}) {
    if (width % h == 0 && width / h >= 16) return h;
  }
  return 1;
}

}  // namespace

PretrainModel::PretrainModel(const PretrainOptions& options) : encoders_(options.encoder) {
  Rng rng(options.seed ^ 0x6d61736b5f6d696dULL);
  mask_token_ = MaskToken(options.encoder.image.width, rng);
  const std::size_t width = options.encoder.image.width;
  const std::size_t heads = options.encoder.image.heads ? options.encoder.image.heads : heads_for(width);
  mim_ = MimHead(width, heads, options.toggles.mim_depth, ColorGridTokenizer().vocab_size(), rng);
}

ParamList PretrainModel::parameters() const {
  ParamList params = encoders_.parameters();
  params.add("logit_scale.log_sigma", temperature_.log_sigma(), false);
  params.add("mask_token", mask_token_.value(), false);
  mim_.collect(params, "mim");
  return params;
}

std::string LossRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["lr"] = lr;
  j["L_I"] = loss_image;
  j["L_T"] = loss_text;
  if (loss_mim) j["L_MIM"] = *loss_mim;
  j["total"] = total;
  j["grad_norm"] = grad_norm;
  j["sigma"] = sigma;
  return j.dump();
}

Pretrainer::Pretrainer(PretrainModel& model, const PretrainOptions& options,
                       std::shared_ptr<const VisualTokenizer> tokenizer)
    : model_(model),
      options_(options),
      tokenizer_(tokenizer ? std::move(tokenizer)
                           : std::make_shared<ColorGridTokenizer>(options.encoder.image.patch)),
      optimizer_(model.parameters(),
                 AdamWConfig{options.optimizer.beta1, options.optimizer.beta2, options.optimizer.eps,
                             options.schedule.weight_decay}),
      rng_(options.seed) {
  options_.toggles.validate();
  options_.schedule.validate();
  if (tokenizer_->vocab_size() != ColorGridTokenizer().vocab_size()) {
    throw ConfigError("visual tokenizer vocabulary does not match the MIM classifier");
  }
}

LossRecord Pretrainer::step(std::span<const PretrainSample> batch, const std::string& batch_id) {
  if (batch.empty()) throw InputError("pretrain step on an empty batch (" + batch_id + ")");
  const auto& encoders = model_.encoders();
  const auto& image_encoder = encoders.image();
  const std::size_t patches = image_encoder.config().patch_count();

  optimizer_.zero_grad();
  std::vector<ag::Var> image_embeddings;
  std::vector<ag::Var> text_embeddings;
  std::vector<ag::Var> mim_losses;
  for (const auto& sample : batch) {
    // Contrastive pass on the clean crop.
    image_embeddings.push_back(encoders.embed_image(sample.image));
    text_embeddings.push_back(encoders.embed_text(sample.tokens));
    if (options_.toggles.mim) {
      // Independent second pass on the masked crop.
      const auto targets = tokenizer_->tokenize(sample.image);
      const MaskSet mask = sample_mask(patches, std::min(options_.max_masked, patches), rng_);
      const ag::Var masked = apply_mask(image_encoder.embed_patches(sample.image), mask, model_.mask_token());
      const auto layers = image_encoder.forward_tokens(image_encoder.add_positional(masked));
      mim_losses.push_back(mim_forward_loss(model_.mim_head(), layers.back(), mask, targets));
    }
  }
  const ItcLoss itc = itc_loss(ag::concat_rows(image_embeddings), ag::concat_rows(text_embeddings),
                               model_.temperature());
  ag::Var total = itc.total();
  LossRecord record;
  record.step = step_;
  record.loss_image = itc.image_to_text.item();
  record.loss_text = itc.text_to_image.item();
  if (options_.toggles.mim) {
    const ag::Var mim = ag::scale(ag::sum(ag::concat_rows(mim_losses)), 1.0 / static_cast<double>(mim_losses.size()));
    record.loss_mim = mim.item();
    total = ag::add(total, ag::scale(mim, options_.toggles.mim_weight));
  }
  record.total = total.item();
  if (!std::isfinite(record.total)) {
    throw NumericalError("non-finite pre-training loss on batch " + batch_id);
  }
  ag::backward(total);
  record.grad_norm = clip_grad_norm(optimizer_.params(), options_.schedule.grad_clip_norm);
  record.lr = lr_at_step(step_, options_.steps_per_epoch, options_.schedule);
  optimizer_.step(record.lr);
  record.sigma = model_.temperature().sigma();
  ++step_;
  return record;
}

}  // namespace facevl
