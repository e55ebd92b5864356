// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "facevl/checkpoint.hpp"
#include "facevl/cli/dataset.hpp"
#include "facevl/config.hpp"
#include "facevl/data.hpp"
#include "facevl/downstream.hpp"
#include "facevl/errors.hpp"
#include "facevl/gradcam.hpp"
#include "facevl/metrics.hpp"
#include "facevl/pretraining.hpp"
#include "facevl/synthetic.hpp"

namespace facevl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

/// Every flag any subcommand accepts; unset values leave the config alone.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string toggles;
  std::optional<std::size_t> resolution;
  std::optional<double> fraction;
  std::string layers;
  std::string task;
  std::optional<std::size_t> steps;

  std::string input;
  std::string output;
  std::string dataset;
  std::string checkpoint;
  std::string head;
  std::string predictions;
  std::string report;
  std::string log;
  std::string label;
  std::string rejects;
  std::string nonface;
  std::optional<double> threshold;
  std::optional<std::size_t> target_size;
  std::optional<double> face_ratio;
  std::optional<std::size_t> mix_size;

  std::string normalizer = "diag";
  double tau = 0.1;
  std::string eyes = "0,1";
  std::string reference_group;
  std::string format = "json";

  std::string image;
  std::string text;
  double opacity = 0.5;

  std::vector<std::string> reports;
};

struct Context {
  Flags flags;
  RunConfig config;
  std::ostream& out;
  std::ostream& err;
};

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long long v = -1;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 0) throw ConfigError(flag + ": '" + item + "' is not a non-negative integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError(flag + ": empty list");
  return out;
}

RunConfig resolve_config(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.deterministic) c.deterministic = true;
  if (!f.toggles.empty()) c.pretrain.toggles = PretrainToggles::parse(f.toggles);
  if (f.resolution) c.resolution = *f.resolution;
  if (!f.layers.empty()) c.heads.layers = parse_size_list(f.layers, "--layers");
  if (!f.task.empty()) c.task = f.task;
  if (f.threshold) c.data.threshold = *f.threshold;
  if (f.target_size) c.data.target_size = *f.target_size;
  if (f.face_ratio) c.data.face_ratio = *f.face_ratio;
  if (f.mix_size) c.data.mix_size = *f.mix_size;
  if (!f.nonface.empty()) c.data.nonface_manifest = f.nonface;
  c.validate();
  return c;
}

std::string require_path(const std::string& flag_value, const std::string& config_value, const std::string& what) {
  const std::string& v = flag_value.empty() ? config_value : flag_value;
  if (v.empty()) throw ConfigError("missing " + what);
  return v;
}

fs::path base_of(const fs::path& file) { return file.parent_path(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IoError(path.string() + ": not valid JSON");
  return j;
}

// ---- run reports --------------------------------------------------------------------

void write_run_report(const Context& ctx, const std::string& command, const fs::path& path,
                      const std::optional<fs::path>& artifact, ordered_json metrics, Clock::time_point start) {
  ordered_json r;
  r["command"] = command;
  if (!ctx.flags.label.empty()) r["label"] = ctx.flags.label;
  r["seed"] = ctx.config.seed;
  r["config"] = ordered_json::parse(serialize_run_config(ctx.config));
  if (artifact) r["checkpoint"] = {{"path", artifact->string()}, {"sha256", file_sha256(*artifact)}};
  r["metrics"] = std::move(metrics);
  if (!ctx.config.deterministic) {
    r["wall_clock_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  }
  write_text(path, r.dump(2) + "\n");
}

fs::path report_path(const Flags& f, const fs::path& primary) {
  return f.report.empty() ? fs::path(primary.string() + ".report.json") : fs::path(f.report);
}

// ---- model loading -------------------------------------------------------------------

struct LoadedCheckpoint {
  fs::path path;
  Checkpoint data;
  nlohmann::json metadata;
};

LoadedCheckpoint open_checkpoint(const std::string& path, const std::string& flag) {
  if (path.empty()) throw ConfigError("missing " + flag);
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path);
  LoadedCheckpoint ck{path, read_checkpoint(path), {}};
  ck.metadata = nlohmann::json::parse(ck.data.metadata, nullptr, false);
  if (!ck.metadata.is_object()) throw IoError(path + ": checkpoint metadata is not a JSON object");
  return ck;
}

DualEncoder backbone_from(const LoadedCheckpoint& ck) {
  if (!ck.metadata.contains("encoder")) throw IoError(ck.path.string() + ": checkpoint carries no encoder config");
  DualEncoder encoder(parse_encoder_config(ck.metadata["encoder"].dump()));
  load_parameters(ck.data, encoder.parameters());
  return encoder;
}

std::string checkpoint_metadata(const std::string& kind, const RunConfig& config, const EncoderConfig& encoder,
                                ordered_json extra = ordered_json::object()) {
  ordered_json m;
  m["kind"] = kind;
  m["encoder"] = ordered_json::parse(serialize_encoder_config(encoder));
  m["run"] = ordered_json::parse(serialize_run_config(config));
  for (auto& [k, v] : extra.items()) m[k] = v;
  return m.dump();
}

HeadTrainConfig head_train_config(const RunConfig& c, Task task) {
  switch (task) {
    case Task::kParsing:
      return c.parsing;
    case Task::kAlignment:
      return c.alignment;
    case Task::kAttributes:
      return c.attributes;
  }
  return c.attributes;
}

HeadConfig head_config_for(const RunConfig& c, const EncoderConfig& encoder) {
  HeadConfig h = c.heads;
  h.output_size = encoder.image.image_size;
  return h;
}

// ---- curate -------------------------------------------------------------------------

int cmd_curate(Context& ctx) {
  const std::string input = require_path(ctx.flags.input, ctx.config.data.manifest, "--input manifest");
  const std::string output = require_path(ctx.flags.output, ctx.config.data.output, "--output path");
  std::ifstream in(input);
  if (!in) throw IoError("cannot open " + input);
  std::ofstream rejects;
  CurateOptions opts{.threshold = ctx.config.data.threshold,
                     .target_size = ctx.config.data.target_size,
                     .seed = ctx.config.seed};
  if (!ctx.flags.rejects.empty()) {
    rejects.open(ctx.flags.rejects, std::ios::binary);
    if (!rejects) throw IoError("cannot write " + ctx.flags.rejects);
    opts.rejects = &rejects;
  }
  CurateResult result = curate_manifest(in, opts);
  if (!ctx.config.data.nonface_manifest.empty()) {
    std::ifstream pool_in(ctx.config.data.nonface_manifest);
    if (!pool_in) throw IoError("cannot open " + ctx.config.data.nonface_manifest);
    const std::vector<ManifestRecord> pool = read_manifest(pool_in);
    const std::size_t size = ctx.config.data.mix_size ? ctx.config.data.mix_size : result.records.size();
    result.records = mix_face_ratio(result.records, pool, ctx.config.data.face_ratio, size, ctx.config.seed);
    result.header.records = result.records.size();
  }
  std::ofstream out(output, std::ios::binary);
  if (!out) throw IoError("cannot write " + output);
  write_manifest(out, result);
  out.close();
  ordered_json s;
  s["lines"] = result.stats.lines;
  s["malformed"] = result.stats.malformed;
  s["below_threshold"] = result.stats.below_threshold;
  s["qualifying"] = result.stats.qualifying;
  s["written"] = result.records.size();
  s["peak_retained"] = result.stats.peak_retained;
  ctx.out << s.dump() << '\n';
  return kExitOk;
}

// ---- pretrain -------------------------------------------------------------------------

int cmd_pretrain(Context& ctx) {
  const auto start = Clock::now();
  const fs::path manifest = require_path(ctx.flags.input, ctx.config.data.manifest, "--input manifest");
  const fs::path output = require_path(ctx.flags.output, ctx.config.data.output, "--output checkpoint");
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest.string());
  const std::vector<ManifestRecord> records = read_manifest(in);
  if (records.empty()) throw InputError(manifest.string() + ": no records");
  const fs::path image_base = ctx.config.data.image_root.empty() ? base_of(manifest) : fs::path(ctx.config.data.image_root);

  const RunConfig& c = ctx.config;
  const std::size_t batch_size = std::min(c.pretrain.schedule.batch_size, records.size());
  const std::size_t steps_per_epoch =
      c.pretrain.steps_per_epoch ? c.pretrain.steps_per_epoch : (records.size() + batch_size - 1) / batch_size;
  PretrainOptions options{.encoder = c.encoder,
                          .toggles = c.pretrain.toggles,
                          .schedule = c.pretrain.schedule,
                          .optimizer = c.pretrain.optimizer,
                          .max_masked = c.pretrain.max_masked,
                          .steps_per_epoch = steps_per_epoch,
                          .seed = c.seed};
  const std::size_t steps =
      ctx.flags.steps ? *ctx.flags.steps
                      : (c.pretrain.steps ? c.pretrain.steps
                                          : static_cast<std::size_t>(std::llround(
                                                c.pretrain.schedule.total_epochs * static_cast<double>(steps_per_epoch))));
  if (steps == 0) throw ConfigError("pretrain: zero steps");

  std::vector<Image> sources;
  std::vector<TextTokens> captions;
  for (const auto& r : records) {
    sources.push_back(load_image_ref(r.image_ref, image_base));
    captions.push_back(Vocabulary::builtin().tokenize(r.caption));
  }

  PretrainModel model(options);
  Pretrainer trainer(model, options);
  Rng data_rng(c.seed ^ 0x5eedda7aULL);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  const fs::path log_path = ctx.flags.log.empty() ? fs::path(output.string() + ".log.ndjson") : fs::path(ctx.flags.log);
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw IoError("cannot write " + log_path.string());
  std::optional<double> first;
  double last = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<PretrainSample> batch;
    std::string batch_id;
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), data_rng);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      batch.push_back({records[i].image_ref,
                       prepare_pretrain_image(sources[i], records[i], c.pretrain.toggles.align,
                                              c.encoder.image.image_size, data_rng),
                       captions[i]});
      batch_id += (b ? "," : "") + std::to_string(i);
    }
    const LossRecord rec = trainer.step(batch, "step " + std::to_string(step) + " [" + batch_id + "]");
    log << rec.to_json() << '\n';
    if (!first) first = rec.total;
    last = rec.total;
  }
  log.close();

  ordered_json extra;
  extra["toggles"] = c.pretrain.toggles.to_string();
  extra["steps"] = steps;
  extra["seed"] = c.seed;
  save_checkpoint(output, model.parameters(), checkpoint_metadata("pretrain", c, c.encoder, extra));

  ordered_json metrics;
  metrics["toggles"] = c.pretrain.toggles.to_string();
  metrics["steps"] = steps;
  metrics["initial_loss"] = *first;
  metrics["final_loss"] = last;
  write_run_report(ctx, "pretrain", report_path(ctx.flags, output), output, metrics, start);
  ctx.out << "pretrain: " << steps << " steps, loss " << *first << " -> " << last << ", checkpoint "
          << output.string() << '\n';
  return kExitOk;
}

// ---- probe / finetune ----------------------------------------------------------------

struct PreparedSet {
  std::vector<DatasetEntry> entries;
  std::vector<FramedSample> framed;
  fs::path base;
};

PreparedSet prepare_set(const Context& ctx, const std::string& dataset, Task task, std::size_t size) {
  PreparedSet s;
  s.entries = read_dataset(dataset);
  s.base = ctx.config.data.image_root.empty() ? base_of(dataset) : fs::path(ctx.config.data.image_root);
  for (const auto& e : s.entries) s.framed.push_back(frame_sample(e, s.base, task, size, ctx.config.warp));
  return s;
}

int cmd_train_head(Context& ctx, bool finetune) {
  const auto start = Clock::now();
  const Task task = parse_task(ctx.config.task);
  const LoadedCheckpoint backbone_ck = open_checkpoint(ctx.flags.checkpoint, "--checkpoint backbone");
  const std::string dataset = require_path(ctx.flags.dataset, ctx.config.data.dataset, "--dataset");
  const fs::path output = require_path(ctx.flags.output, ctx.config.data.output, "--output checkpoint");

  DualEncoder backbone = backbone_from(backbone_ck);
  if (ctx.config.resolution != 0 && ctx.config.resolution != backbone.config().image.image_size) {
    if (!finetune) throw ConfigError("--resolution applies to finetune; probing keeps the pre-training input size");
    backbone.resize_image_input(ctx.config.resolution);
  }
  const std::string digest_before = parameter_digest(backbone.parameters());
  const HeadConfig heads = head_config_for(ctx.config, backbone.config());
  DownstreamModel model(backbone, task, heads, finetune);
  const PreparedSet set = prepare_set(ctx, dataset, task, backbone.config().image.image_size);
  std::vector<DownstreamSample> samples;
  for (const auto& f : set.framed) samples.push_back(f.sample);

  DownstreamTrainOptions options;
  options.train = head_train_config(ctx.config, task);
  options.steps = ctx.flags.steps ? *ctx.flags.steps : ctx.config.head_steps;
  options.seed = ctx.config.seed;
  const std::vector<double> losses = train_downstream(model, samples, options);
  const std::string digest_after = parameter_digest(model.backbone().parameters());

  ordered_json extra;
  extra["task"] = task_name(task);
  extra["backbone"] = {{"path", backbone_ck.path.string()}, {"sha256", file_sha256(backbone_ck.path)}};
  if (finetune) {
    ParamList all = model.backbone().parameters();
    all.append(model.head_parameters());
    save_checkpoint(output, all, checkpoint_metadata("finetune", ctx.config, model.backbone().config(), extra));
  } else {
    if (digest_after != digest_before) throw NumericalError("probe modified the frozen backbone");
    save_checkpoint(output, model.head_parameters(),
                    checkpoint_metadata("head", ctx.config, model.backbone().config(), extra));
  }

  ordered_json metrics;
  metrics["task"] = task_name(task);
  metrics["mode"] = finetune ? "finetune" : "probe";
  metrics["samples"] = samples.size();
  metrics["steps"] = losses.size();
  metrics["initial_loss"] = losses.front();
  metrics["final_loss"] = losses.back();
  metrics["backbone_digest_before"] = digest_before;
  metrics["backbone_digest_after"] = digest_after;
  write_run_report(ctx, finetune ? "finetune" : "probe", report_path(ctx.flags, output), output, metrics, start);
  ctx.out << (finetune ? "finetune" : "probe") << ": " << task_name(task) << ", " << losses.size()
          << " steps, loss " << losses.front() << " -> " << losses.back() << '\n';
  return kExitOk;
}

// ---- eval ---------------------------------------------------------------------------

NmeNormalizer parse_normalizer(const std::string& name) {
  if (name == "diag") return NmeNormalizer::kDiagonal;
  if (name == "box") return NmeNormalizer::kBox;
  if (name == "inter_ocular") return NmeNormalizer::kInterOcular;
  throw ConfigError("--normalizer: expected diag, box or inter_ocular, got '" + name + "'");
}

NmeReference nme_reference(const DatasetEntry& e, const std::vector<std::size_t>& eyes) {
  NmeReference ref;
  if (e.box) {
    ref.box = {(*e.box)[0], (*e.box)[1]};
  } else {
    const auto& pts = *e.landmarks;
    auto [xl, xh] = std::minmax_element(pts.begin(), pts.end(), [](auto a, auto b) { return a.x < b.x; });
    auto [yl, yh] = std::minmax_element(pts.begin(), pts.end(), [](auto a, auto b) { return a.y < b.y; });
    ref.box = {xh->x - xl->x, yh->y - yl->y};
  }
  ref.left_eye = eyes[0];
  ref.right_eye = eyes[1];
  return ref;
}

MetricReport evaluate(const Context& ctx, Task task, const std::vector<DatasetEntry>& entries, const fs::path& base,
                      const std::vector<Prediction>& predictions) {
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : predictions) by_id[p.id] = &p;
  auto prediction_for = [&](const DatasetEntry& e) -> const Prediction& {
    const auto it = by_id.find(e.id);
    if (it == by_id.end()) throw InputError("no prediction for sample '" + e.id + "'");
    return *it->second;
  };
  MetricReport report;
  switch (task) {
    case Task::kParsing: {
      ConfusionAccumulator acc(ctx.config.heads.parsing_classes);
      for (const auto& e : entries) {
        const Prediction& p = prediction_for(e);
        if (!e.labels) throw InputError("sample '" + e.id + "' has no label map");
        if (!p.labels) throw InputError("prediction '" + e.id + "' has no label map");
        acc.add(*p.labels, read_label_png(resolve(*e.labels, base)));
      }
      report.f1 = f1_scores(acc);
      break;
    }
    case Task::kAlignment: {
      const NmeNormalizer normalizer = parse_normalizer(ctx.flags.normalizer);
      const std::vector<std::size_t> eyes = parse_size_list(ctx.flags.eyes, "--eyes");
      if (eyes.size() != 2) throw ConfigError("--eyes: expected two landmark indices");
      std::vector<double> nmes;
      for (const auto& e : entries) {
        const Prediction& p = prediction_for(e);
        if (!e.landmarks) throw InputError("sample '" + e.id + "' has no landmarks");
        if (!p.landmarks) throw InputError("prediction '" + e.id + "' has no landmarks");
        nmes.push_back(nme(*p.landmarks, *e.landmarks, normalizer, nme_reference(e, eyes)));
      }
      double total = 0.0;
      for (double v : nmes) total += v;
      report.nme_normalizer = ctx.flags.normalizer;
      report.nme_mean = total / static_cast<double>(nmes.size());
      report.tau = ctx.flags.tau;
      report.failure_rate_pct = failure_rate(nmes, ctx.flags.tau);
      report.auc_pct = auc_ced(nmes, ctx.flags.tau);
      break;
    }
    case Task::kAttributes: {
      std::vector<std::vector<bool>> pred;
      std::vector<std::vector<bool>> gt;
      std::map<std::string, std::pair<std::vector<std::vector<bool>>, std::vector<std::vector<bool>>>> groups;
      for (const auto& e : entries) {
        const Prediction& p = prediction_for(e);
        if (!e.attributes) throw InputError("sample '" + e.id + "' has no attributes");
        if (!p.attributes) throw InputError("prediction '" + e.id + "' has no attributes");
        pred.push_back(*p.attributes);
        gt.push_back(*e.attributes);
        if (e.group) {
          groups[*e.group].first.push_back(*p.attributes);
          groups[*e.group].second.push_back(*e.attributes);
        }
      }
      report.mean_accuracy_pct = mean_accuracy(pred, gt);
      if (!ctx.flags.reference_group.empty()) {
        std::map<std::string, GroupAccuracy> accuracies;
        std::vector<std::string> pooled;
        for (const auto& [name, pg] : groups) {
          accuracies[name] = {mean_accuracy(pg.first, pg.second), pg.first.size()};
          if (name != ctx.flags.reference_group) pooled.push_back(name);
        }
        report.groups = group_discrepancy(accuracies, ctx.flags.reference_group, pooled);
      }
      break;
    }
  }
  return report;
}

int cmd_eval(Context& ctx) {
  const auto start = Clock::now();
  const Task task = parse_task(ctx.config.task);
  const std::string dataset = require_path(ctx.flags.dataset, ctx.config.data.dataset, "--dataset");
  const std::vector<DatasetEntry> entries = read_dataset(dataset);
  const fs::path base = ctx.config.data.image_root.empty() ? base_of(dataset) : fs::path(ctx.config.data.image_root);

  std::vector<Prediction> predictions;
  std::optional<fs::path> artifact;
  if (ctx.flags.checkpoint.empty()) {
    if (ctx.flags.predictions.empty()) throw ConfigError("eval needs --checkpoint or --predictions");
    predictions = read_predictions(ctx.flags.predictions);
  } else {
    const LoadedCheckpoint ck = open_checkpoint(ctx.flags.checkpoint, "--checkpoint");
    DualEncoder backbone = backbone_from(ck);
    const std::string kind = ck.metadata.value("kind", "");
    std::optional<LoadedCheckpoint> head_ck;
    if (kind == "finetune") {
      head_ck = ck;
    } else {
      head_ck = open_checkpoint(ctx.flags.head, "--head checkpoint");
    }
    if (!head_ck->metadata.contains("run")) throw IoError("head checkpoint carries no run config");
    const RunConfig trained = parse_run_config(head_ck->metadata["run"].dump(), head_ck->path.string());
    if (head_ck->metadata.value("task", "") != task_name(task)) {
      throw ConfigError("checkpoint was trained for task '" + head_ck->metadata.value("task", "") + "', eval asked for '" +
                        task_name(task) + "'");
    }
    DownstreamModel model(backbone, task, head_config_for(trained, backbone.config()), false);
    load_parameters(head_ck->data, model.head_parameters());
    for (const auto& e : entries) {
      const FramedSample f = frame_sample(e, base, task, backbone.config().image.image_size, trained.warp);
      predictions.push_back(unframe_prediction(model.predict(f.sample), f));
    }
    if (!ctx.flags.output.empty()) write_predictions(ctx.flags.output, predictions);
    artifact = head_ck->path;
  }

  const MetricReport report = evaluate(ctx, task, entries, base, predictions);
  if (ctx.flags.format == "table") {
    ctx.out << report.to_table();
  } else {
    ctx.out << report.to_json();
  }
  if (!ctx.flags.report.empty()) {
    ordered_json metrics = ordered_json::parse(report.to_json());
    metrics["task"] = task_name(task);
    write_run_report(ctx, "eval", ctx.flags.report, artifact, metrics, start);
  }
  return kExitOk;
}

// ---- fewshot ------------------------------------------------------------------------

int cmd_fewshot(Context& ctx) {
  const std::string dataset = require_path(ctx.flags.dataset, ctx.config.data.dataset, "--dataset");
  const std::string output = require_path(ctx.flags.output, ctx.config.data.output, "--output path");
  if (!ctx.flags.fraction) throw ConfigError("fewshot needs --fraction");
  std::ifstream in(dataset);
  if (!in) throw IoError("cannot open " + dataset);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  }
  const std::vector<std::size_t> keep = fewshot_indices(lines.size(), *ctx.flags.fraction, ctx.config.seed);
  std::ofstream out(output, std::ios::binary);
  if (!out) throw IoError("cannot write " + output);
  for (std::size_t i : keep) out << lines[i] << '\n';
  out.close();
  ordered_json s;
  s["records"] = lines.size();
  s["selected"] = keep.size();
  s["fraction"] = *ctx.flags.fraction;
  s["seed"] = ctx.config.seed;
  ctx.out << s.dump() << '\n';
  return kExitOk;
}

// ---- gradcam ------------------------------------------------------------------------

int cmd_gradcam(Context& ctx) {
  const LoadedCheckpoint ck = open_checkpoint(ctx.flags.checkpoint, "--checkpoint");
  if (ctx.flags.image.empty()) throw ConfigError("gradcam needs --image");
  if (ctx.flags.text.empty()) throw ConfigError("gradcam needs --text");
  const fs::path prefix = require_path(ctx.flags.output, ctx.config.data.output, "--output prefix");
  const DualEncoder model = backbone_from(ck);
  const std::size_t size = model.config().image.image_size;
  const Image source = load_image_ref(ctx.flags.image, {});
  const WarpConfig plain{.alpha = 1.0, .target_size = size, .enabled = false};
  const Image image = source.height() == size && source.width() == size
                          ? source
                          : warp_image(source, resize_transform(source.height(), source.width(), size), plain);
  const SaliencyMap map = gradcam(model, image, ctx.flags.text, Vocabulary::builtin());
  if (map.degenerate) ctx.err << "warning: saliency map is constant for this image-text pair\n";
  write_saliency_text(prefix.string() + ".saliency.txt", map);
  write_png(prefix.string() + ".overlay.png", saliency_overlay(source, map, ctx.flags.opacity));
  ctx.out << "gradcam: score " << map.score << ", grid " << map.grid << "x" << map.grid << '\n';
  return kExitOk;
}

// ---- report -------------------------------------------------------------------------

std::string format_number(const nlohmann::json& v, int decimals) {
  if (!v.is_number()) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v.get<double>());
  return buf;
}

int cmd_report(Context& ctx) {
  if (ctx.flags.reports.empty()) throw ConfigError("report needs one or more run report files");
  struct Column {
    std::string title;
    std::function<std::string(const nlohmann::json&)> cell;
  };
  std::vector<nlohmann::json> runs;
  for (const auto& path : ctx.flags.reports) runs.push_back(read_json_file(path));
  auto metric = [](const nlohmann::json& run, std::initializer_list<const char*> keys) {
    const nlohmann::json* cur = &run["metrics"];
    for (const char* k : keys) {
      if (!cur->is_object() || !cur->contains(k)) return nlohmann::json();
      cur = &(*cur)[k];
    }
    return *cur;
  };
  const std::vector<Column> candidates = {
      {"Loss (final)", [&](const nlohmann::json& r) { return format_number(metric(r, {"final_loss"}), 4); }},
      {"F1 mean", [&](const nlohmann::json& r) { return format_number(metric(r, {"f1", "mean"}), 2); }},
      {"NME (%)",
       [&](const nlohmann::json& r) {
         const auto v = metric(r, {"alignment", "nme"});
         return v.is_number() ? format_number(100.0 * v.get<double>(), 3) : std::string("-");
       }},
      {"FR (%)", [&](const nlohmann::json& r) { return format_number(metric(r, {"alignment", "failure_rate"}), 2); }},
      {"AUC (%)", [&](const nlohmann::json& r) { return format_number(metric(r, {"alignment", "auc"}), 2); }},
      {"mAcc (%)", [&](const nlohmann::json& r) { return format_number(metric(r, {"attributes", "mean_accuracy"}), 2); }},
      {"Group diff", [&](const nlohmann::json& r) { return format_number(metric(r, {"groups", "discrepancy"}), 2); }},
  };
  std::vector<Column> columns;
  for (const auto& col : candidates) {
    if (std::any_of(runs.begin(), runs.end(), [&](const nlohmann::json& r) { return col.cell(r) != "-"; })) columns.push_back(col);
  }
  std::ostringstream table;
  table << "| Run | Command | Setting | Checkpoint |";
  for (const auto& col : columns) table << ' ' << col.title << " |";
  table << "\n|---|---|---|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) table << "---:|";
  table << '\n';
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    const std::string label = r.value("label", fs::path(ctx.flags.reports[i]).stem().string());
    const std::string command = r.value("command", "?");
    std::string setting = "-";
    if (command == "pretrain") {
      setting = metric(r, {"toggles"}).is_string() ? metric(r, {"toggles"}).get<std::string>() : "-";
    } else if (metric(r, {"task"}).is_string()) {
      setting = metric(r, {"task"}).get<std::string>();
      if (metric(r, {"mode"}).is_string()) setting += " / " + metric(r, {"mode"}).get<std::string>();
    }
    std::string hash = "-";
    if (r.contains("checkpoint") && r["checkpoint"].contains("sha256")) {
      hash = r["checkpoint"]["sha256"].get<std::string>().substr(0, 12);
    }
    table << "| " << label << " | " << command << " | " << setting << " | " << hash << " |";
    for (const auto& col : columns) table << ' ' << col.cell(r) << " |";
    table << '\n';
  }
  if (ctx.flags.output.empty()) {
    ctx.out << table.str();
  } else {
    write_text(ctx.flags.output, table.str());
  }
  return kExitOk;
}

// ---- argument parsing ---------------------------------------------------------------

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON run configuration");
  app->add_option("--seed", f.seed, "Random seed (overrides the config)");
  app->add_flag("--deterministic", f.deterministic, "Reproducible outputs; omits wall-clock from reports");
}

void add_model_flags(CLI::App* app, Flags& f) {
  app->add_option("--task", f.task, "parsing, alignment or attributes");
  app->add_option("--layers", f.layers, "Backbone layers fed to the head, e.g. 4,6,8,12");
  app->add_option("--checkpoint", f.checkpoint, "Backbone or fine-tuned checkpoint");
  app->add_option("--dataset", f.dataset, "Downstream dataset (NDJSON)");
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Flags f;
  CLI::App app{"Face representation pre-training and transfer toolkit", "facevl"};
  app.require_subcommand(1);

  auto* curate = app.add_subcommand("curate", "Filter a raw manifest by face score and subsample it");
  add_common(curate, f);
  curate->add_option("--input", f.input, "Raw manifest (NDJSON)");
  curate->add_option("--output", f.output, "Curated manifest path");
  curate->add_option("--rejects", f.rejects, "Write rejected lines here");
  curate->add_option("--threshold", f.threshold, "Keep records whose best face score exceeds this");
  curate->add_option("--target-size", f.target_size, "Reservoir size (0 keeps every qualifying record)");
  curate->add_option("--nonface", f.nonface, "Face-free pool for face-ratio mixing");
  curate->add_option("--face-ratio", f.face_ratio, "Share of face records after mixing");
  curate->add_option("--mix-size", f.mix_size, "Records after mixing");

  auto* pretrain = app.add_subcommand("pretrain", "Pre-train the dual encoder on a curated manifest");
  add_common(pretrain, f);
  pretrain->add_option("--input", f.input, "Curated manifest");
  pretrain->add_option("--output", f.output, "Checkpoint path");
  pretrain->add_option("--toggles", f.toggles, "Objectives, e.g. ITC,MIM1,ALIGN");
  pretrain->add_option("--steps", f.steps, "Optimisation steps (overrides the schedule)");
  pretrain->add_option("--log", f.log, "Per-step loss log (NDJSON)");
  pretrain->add_option("--report", f.report, "Run report path");
  pretrain->add_option("--label", f.label, "Row label in reports");

  auto* probe = app.add_subcommand("probe", "Train a task head on a frozen backbone");
  auto* finetune = app.add_subcommand("finetune", "Train a task head and the image tower together");
  for (auto* sub : {probe, finetune}) {
    add_common(sub, f);
    add_model_flags(sub, f);
    sub->add_option("--output", f.output, "Checkpoint path");
    sub->add_option("--steps", f.steps, "Optimisation steps (overrides epochs)");
    sub->add_option("--resolution", f.resolution, "Input resolution; positions are re-gridded");
    sub->add_option("--report", f.report, "Run report path");
    sub->add_option("--label", f.label, "Row label in reports");
  }

  auto* eval = app.add_subcommand("eval", "Score predictions against a dataset");
  add_common(eval, f);
  add_model_flags(eval, f);
  eval->add_option("--head", f.head, "Head checkpoint from probe");
  eval->add_option("--predictions", f.predictions, "Precomputed predictions (NDJSON)");
  eval->add_option("--output", f.output, "Write model predictions here");
  eval->add_option("--normalizer", f.normalizer, "NME normaliser: diag, box or inter_ocular");
  eval->add_option("--tau", f.tau, "NME threshold for FR and AUC");
  eval->add_option("--eyes", f.eyes, "Landmark indices of the outer eye corners");
  eval->add_option("--reference-group", f.reference_group, "Group the others are compared against");
  eval->add_option("--format", f.format, "json or table")->check(CLI::IsMember({"json", "table"}));
  eval->add_option("--report", f.report, "Run report path");
  eval->add_option("--label", f.label, "Row label in reports");

  auto* fewshot = app.add_subcommand("fewshot", "Draw a seeded fraction of a dataset");
  add_common(fewshot, f);
  fewshot->add_option("--dataset", f.dataset, "Source dataset (NDJSON)");
  fewshot->add_option("--fraction", f.fraction, "Fraction to keep");
  fewshot->add_option("--output", f.output, "Subset path");

  auto* cam = app.add_subcommand("gradcam", "Saliency of an image for a text query");
  add_common(cam, f);
  cam->add_option("--checkpoint", f.checkpoint, "Backbone checkpoint");
  cam->add_option("--image", f.image, "PNG path or synthetic reference");
  cam->add_option("--text", f.text, "Query text");
  cam->add_option("--output", f.output, "Output prefix");
  cam->add_option("--opacity", f.opacity, "Overlay opacity")->check(CLI::Range(0.0, 1.0));

  auto* report = app.add_subcommand("report", "Tabulate run reports");
  add_common(report, f);
  report->add_option("reports", f.reports, "Run report files");
  report->add_option("--output", f.output, "Write the table here instead of stdout");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    Context ctx{f, resolve_config(f), out, err};
    if (name == "curate") return cmd_curate(ctx);
    if (name == "pretrain") return cmd_pretrain(ctx);
    if (name == "probe") return cmd_train_head(ctx, false);
    if (name == "finetune") return cmd_train_head(ctx, true);
    if (name == "eval") return cmd_eval(ctx);
    if (name == "fewshot") return cmd_fewshot(ctx);
    if (name == "gradcam") return cmd_gradcam(ctx);
    if (name == "report") return cmd_report(ctx);
    err << "error: unknown command '" << name << "'\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace facevl::cli
