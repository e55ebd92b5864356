// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/config.hpp"

#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "facevl/errors.hpp"

namespace facevl {
namespace {

using Json = nlohmann::ordered_json;

/// Strict object reader: every key must be consumed.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        const Json& v = j_.at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
          throw ConfigError(field(key) + ": expected a non-negative integer");
        }
      }
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader child(const char* key) {
    seen_.insert(key);
    return Reader(j_.at(key), field(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(field(key.c_str()) + ": unknown key");
    }
  }

  std::string field(const char* key) const { return path_ + "." + key; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Json encoder_json(const EncoderConfig& c) {
  Json j;
  j["image"] = {{"depth", c.image.depth}, {"width", c.image.width},           {"heads", c.image.heads},
                {"patch", c.image.patch}, {"image_size", c.image.image_size}, {"mlp_ratio", c.image.mlp_ratio}};
  j["text"] = {{"depth", c.text.depth},
               {"width", c.text.width},
               {"heads", c.text.heads},
               {"mlp_ratio", c.text.mlp_ratio},
               {"vocab_size", c.text.vocab_size}};
  j["embed_dim"] = c.embed_dim;
  j["projection_depth"] = c.projection_depth;
  j["seed"] = c.seed;
  return j;
}

EncoderConfig read_encoder(Reader r) {
  std::string preset;
  r.get("preset", preset);
  EncoderConfig c = EncoderConfig::base();
  if (preset == "miniature") {
    c = EncoderConfig::miniature();
  } else if (!preset.empty() && preset != "base") {
    throw ConfigError(r.field("preset") + ": expected 'base' or 'miniature'");
  }
  if (r.has("image")) {
    Reader ri = r.child("image");
    ri.get("depth", c.image.depth);
    ri.get("width", c.image.width);
    ri.get("heads", c.image.heads);
    ri.get("patch", c.image.patch);
    ri.get("image_size", c.image.image_size);
    ri.get("mlp_ratio", c.image.mlp_ratio);
    ri.finish();
  }
  if (r.has("text")) {
    Reader rt = r.child("text");
    rt.get("depth", c.text.depth);
    rt.get("width", c.text.width);
    rt.get("heads", c.text.heads);
    rt.get("mlp_ratio", c.text.mlp_ratio);
    rt.get("vocab_size", c.text.vocab_size);
    rt.finish();
  }
  r.get("embed_dim", c.embed_dim);
  r.get("projection_depth", c.projection_depth);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

Json head_train_json(const HeadTrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"cosine", c.cosine}};
}

void read_head_train(Reader r, HeadTrainConfig& c) {
  r.get("lr", c.lr);
  r.get("weight_decay", c.weight_decay);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("cosine", c.cosine);
  r.finish();
}

Json to_json(const RunConfig& c) {
  Json j;
  j["encoder"] = encoder_json(c.encoder);
  const auto& p = c.pretrain;
  j["pretrain"] = {
      {"toggles", p.toggles.to_string()},
      {"mim_weight", p.toggles.mim_weight},
      {"max_masked", p.max_masked},
      {"steps_per_epoch", p.steps_per_epoch},
      {"steps", p.steps},
      {"schedule",
       {{"lr_init", p.schedule.lr_init},
        {"lr_peak", p.schedule.lr_peak},
        {"lr_final", p.schedule.lr_final},
        {"warmup_epochs", p.schedule.warmup_epochs},
        {"total_epochs", p.schedule.total_epochs},
        {"weight_decay", p.schedule.weight_decay},
        {"grad_clip_norm", p.schedule.grad_clip_norm},
        {"batch_size", p.schedule.batch_size}}},
      {"optimizer", {{"beta1", p.optimizer.beta1}, {"beta2", p.optimizer.beta2}, {"eps", p.optimizer.eps}}},
  };
  j["warp"] = {{"alpha", c.warp.alpha}, {"target_size", c.warp.target_size}, {"enabled", c.warp.enabled}};
  j["heads"] = {{"layers", c.heads.layers},
                {"trunk_width", c.heads.trunk_width},
                {"pool_scales", c.heads.pool_scales},
                {"parsing_classes", c.heads.parsing_classes},
                {"output_size", c.heads.output_size},
                {"landmarks", c.heads.landmarks},
                {"heatmap_size", c.heads.heatmap_size},
                {"attributes", c.heads.attributes},
                {"seed", c.heads.seed}};
  j["train"] = {{"parsing", head_train_json(c.parsing)},
                {"alignment", head_train_json(c.alignment)},
                {"attributes", head_train_json(c.attributes)}};
  j["data"] = {{"manifest", c.data.manifest},
               {"nonface_manifest", c.data.nonface_manifest},
               {"image_root", c.data.image_root},
               {"dataset", c.data.dataset},
               {"output", c.data.output},
               {"threshold", c.data.threshold},
               {"target_size", c.data.target_size},
               {"face_ratio", c.data.face_ratio},
               {"mix_size", c.data.mix_size}};
  j["task"] = c.task;
  j["mode"] = c.mode;
  j["resolution"] = c.resolution;
  j["head_steps"] = c.head_steps;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  return j;
}

RunConfig from_json(const Json& j, const std::string& source) {
  RunConfig c;
  Reader r(j, source);
  if (r.has("encoder")) c.encoder = read_encoder(r.child("encoder"));
  if (r.has("pretrain")) {
    Reader rp = r.child("pretrain");
    auto& p = c.pretrain;
    std::string toggles = p.toggles.to_string();
    rp.get("toggles", toggles);
    double mim_weight = p.toggles.mim_weight;
    rp.get("mim_weight", mim_weight);
    p.toggles = PretrainToggles::parse(toggles);
    p.toggles.mim_weight = mim_weight;
    rp.get("max_masked", p.max_masked);
    rp.get("steps_per_epoch", p.steps_per_epoch);
    rp.get("steps", p.steps);
    if (rp.has("schedule")) {
      Reader rs = rp.child("schedule");
      rs.get("lr_init", p.schedule.lr_init);
      rs.get("lr_peak", p.schedule.lr_peak);
      rs.get("lr_final", p.schedule.lr_final);
      rs.get("warmup_epochs", p.schedule.warmup_epochs);
      rs.get("total_epochs", p.schedule.total_epochs);
      rs.get("weight_decay", p.schedule.weight_decay);
      rs.get("grad_clip_norm", p.schedule.grad_clip_norm);
      rs.get("batch_size", p.schedule.batch_size);
      rs.finish();
    }
    if (rp.has("optimizer")) {
      Reader ro = rp.child("optimizer");
      ro.get("beta1", p.optimizer.beta1);
      ro.get("beta2", p.optimizer.beta2);
      ro.get("eps", p.optimizer.eps);
      ro.finish();
    }
    rp.finish();
  }
  if (r.has("warp")) {
    Reader rw = r.child("warp");
    rw.get("alpha", c.warp.alpha);
    rw.get("target_size", c.warp.target_size);
    rw.get("enabled", c.warp.enabled);
    rw.finish();
  }
  if (r.has("heads")) {
    Reader rh = r.child("heads");
    rh.get("layers", c.heads.layers);
    rh.get("trunk_width", c.heads.trunk_width);
    rh.get("pool_scales", c.heads.pool_scales);
    rh.get("parsing_classes", c.heads.parsing_classes);
    rh.get("output_size", c.heads.output_size);
    rh.get("landmarks", c.heads.landmarks);
    rh.get("heatmap_size", c.heads.heatmap_size);
    rh.get("attributes", c.heads.attributes);
    rh.get("seed", c.heads.seed);
    rh.finish();
  }
  if (r.has("train")) {
    Reader rt = r.child("train");
    if (rt.has("parsing")) read_head_train(rt.child("parsing"), c.parsing);
    if (rt.has("alignment")) read_head_train(rt.child("alignment"), c.alignment);
    if (rt.has("attributes")) read_head_train(rt.child("attributes"), c.attributes);
    rt.finish();
  }
  if (r.has("data")) {
    Reader rd = r.child("data");
    rd.get("manifest", c.data.manifest);
    rd.get("nonface_manifest", c.data.nonface_manifest);
    rd.get("image_root", c.data.image_root);
    rd.get("dataset", c.data.dataset);
    rd.get("output", c.data.output);
    rd.get("threshold", c.data.threshold);
    rd.get("target_size", c.data.target_size);
    rd.get("face_ratio", c.data.face_ratio);
    rd.get("mix_size", c.data.mix_size);
    rd.finish();
  }
  r.get("task", c.task);
  r.get("mode", c.mode);
  r.get("resolution", c.resolution);
  r.get("head_steps", c.head_steps);
  r.get("seed", c.seed);
  r.get("deterministic", c.deterministic);
  r.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

}  // namespace

void RunConfig::validate() const {
  encoder.validate();
  pretrain.toggles.validate();
  pretrain.schedule.validate();
  // Masks are capped at the patch count when sampled, so small inputs keep the default.
  if (pretrain.max_masked == 0) throw ConfigError("pretrain.max_masked must be positive");
  if (!(pretrain.optimizer.beta1 >= 0 && pretrain.optimizer.beta1 < 1 && pretrain.optimizer.beta2 >= 0 &&
        pretrain.optimizer.beta2 < 1 && pretrain.optimizer.eps > 0)) {
    throw ConfigError("pretrain.optimizer: betas must be in [0, 1) and eps positive");
  }
  try {
    warp.validate();
  } catch (const InputError& e) {
    throw ConfigError(std::string("warp: ") + e.what());
  }
  heads.validate(encoder.image.depth);
  parsing.validate();
  alignment.validate();
  attributes.validate();
  if (task != "parsing" && task != "alignment" && task != "attributes") {
    throw ConfigError("task must be parsing, alignment or attributes");
  }
  if (mode != "probe" && mode != "finetune") throw ConfigError("mode must be probe or finetune");
  if (resolution != 0 && resolution % encoder.image.patch != 0) {
    throw ConfigError("resolution must be a multiple of the patch size");
  }
  if (!(data.threshold >= 0.0 && data.threshold <= 1.0)) throw ConfigError("data.threshold must be in [0, 1]");
  if (!(data.face_ratio >= 0.0 && data.face_ratio <= 1.0)) throw ConfigError("data.face_ratio must be in [0, 1]");
}

RunConfig parse_run_config(std::string_view text, const std::string& source) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return from_json(j, source);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_run_config(text, path.filename().string());
}

std::string serialize_run_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

std::string serialize_encoder_config(const EncoderConfig& config) { return encoder_json(config).dump(); }

EncoderConfig parse_encoder_config(std::string_view text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("encoder config is not valid JSON");
  return read_encoder(Reader(j, "encoder"));
}

}  // namespace facevl
