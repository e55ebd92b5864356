// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/cli/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "facevl/errors.hpp"
#include "facevl/synthetic.hpp"

namespace facevl::cli {
namespace {

using nlohmann::ordered_json;

ordered_json points_json(const Landmarks& points) {
  ordered_json a = ordered_json::array();
  for (const auto& p : points) {
    a.push_back(p.x);
    a.push_back(p.y);
  }
  return a;
}

Landmarks points_from(const nlohmann::json& a, const std::string& where) {
  if (!a.is_array() || a.size() % 2 != 0) throw IoError(where + ": landmarks must be a flat x,y array");
  Landmarks out;
  for (std::size_t i = 0; i < a.size(); i += 2) {
    if (!a[i].is_number() || !a[i + 1].is_number()) throw IoError(where + ": non-numeric landmark");
    out.push_back({a[i].get<double>(), a[i + 1].get<double>()});
  }
  return out;
}

ordered_json bits_json(const std::vector<bool>& bits) {
  ordered_json a = ordered_json::array();
  for (bool b : bits) a.push_back(b ? 1 : 0);
  return a;
}

std::vector<bool> bits_from(const nlohmann::json& a, const std::string& where) {
  if (!a.is_array()) throw IoError(where + ": attributes must be an array");
  std::vector<bool> out;
  for (const auto& v : a) {
    if (v.is_boolean()) {
      out.push_back(v.get<bool>());
    } else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
      out.push_back(v.get<int>() == 1);
    } else {
      throw IoError(where + ": attributes must be 0/1");
    }
  }
  return out;
}

nlohmann::json parse_object(const std::string& line, const std::string& what) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw IoError(what + ": line is not a JSON object");
  return j;
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& what) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw IoError(what + ": unknown field '" + key + "'");
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  }
  return lines;
}

std::filesystem::path labels_path(const std::filesystem::path& predictions, const std::string& id) {
  return predictions.parent_path() / (predictions.stem().string() + "." + id + ".labels.png");
}

}  // namespace

std::string DatasetEntry::to_json_line() const {
  ordered_json j;
  j["id"] = id;
  j["image"] = image;
  if (labels) j["labels"] = *labels;
  if (landmarks) j["landmarks"] = points_json(*landmarks);
  if (attributes) j["attributes"] = bits_json(*attributes);
  if (box) j["box"] = {(*box)[0], (*box)[1]};
  if (group) j["group"] = *group;
  return j.dump();
}

DatasetEntry DatasetEntry::from_json_line(const std::string& line) {
  const nlohmann::json j = parse_object(line, "dataset");
  reject_unknown(j, {"id", "image", "labels", "landmarks", "attributes", "box", "group"}, "dataset");
  if (!j.contains("id") || !j["id"].is_string()) throw IoError("dataset: missing string field 'id'");
  if (!j.contains("image") || !j["image"].is_string()) throw IoError("dataset: missing string field 'image'");
  DatasetEntry e;
  e.id = j["id"].get<std::string>();
  e.image = j["image"].get<std::string>();
  const std::string where = "dataset entry '" + e.id + "'";
  if (j.contains("labels")) {
    if (!j["labels"].is_string()) throw IoError(where + ": labels must be a path");
    e.labels = j["labels"].get<std::string>();
  }
  if (j.contains("landmarks")) e.landmarks = points_from(j["landmarks"], where);
  if (j.contains("attributes")) e.attributes = bits_from(j["attributes"], where);
  if (j.contains("box")) {
    const auto& b = j["box"];
    if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number()) {
      throw IoError(where + ": box must be [width, height]");
    }
    e.box = std::array<double, 2>{b[0].get<double>(), b[1].get<double>()};
  }
  if (j.contains("group")) {
    if (!j["group"].is_string()) throw IoError(where + ": group must be a string");
    e.group = j["group"].get<std::string>();
  }
  return e;
}

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& path) {
  std::vector<DatasetEntry> out;
  for (const auto& line : read_lines(path)) out.push_back(DatasetEntry::from_json_line(line));
  if (out.empty()) throw IoError(path.string() + ": dataset is empty");
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<DatasetEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : entries) out << e.to_json_line() << '\n';
}

std::filesystem::path resolve(const std::string& ref, const std::filesystem::path& base) {
  const std::filesystem::path p(ref);
  return p.is_absolute() || base.empty() ? p : base / p;
}

Image load_image_ref(const std::string& ref, const std::filesystem::path& base) {
  if (is_synthetic_ref(ref)) return render_synthetic_ref(ref);
  return read_png(resolve(ref, base));
}

FramedSample frame_sample(const DatasetEntry& entry, const std::filesystem::path& base, Task task,
                          std::size_t size, const WarpConfig& warp) {
  FramedSample f;
  const Image image = load_image_ref(entry.image, base);
  f.height = image.height();
  f.width = image.width();
  f.transform = resize_transform(image.height(), image.width(), size);
  f.warp = WarpConfig{.alpha = 1.0, .target_size = size, .enabled = false};
  if (task == Task::kParsing && warp.enabled) f.warp = WarpConfig{.alpha = warp.alpha, .target_size = size, .enabled = true};
  const bool identity = !f.warp.enabled && image.height() == size && image.width() == size;
  f.sample.id = entry.id;
  f.sample.image = identity ? image : warp_image(image, f.transform, f.warp);
  if (entry.labels) {
    const LabelMap labels = read_label_png(resolve(*entry.labels, base));
    if (labels.height != f.height || labels.width != f.width) {
      throw InputError("dataset entry '" + entry.id + "': label map and image sizes differ");
    }
    f.sample.labels = identity ? labels : warp_labels(labels, f.transform, f.warp);
  }
  if (entry.landmarks) f.sample.landmarks = transform_points(*entry.landmarks, f.transform, f.warp);
  f.sample.attributes = entry.attributes;
  return f;
}

Prediction unframe_prediction(const Prediction& prediction, const FramedSample& framed) {
  Prediction out;
  out.id = prediction.id;
  out.attributes = prediction.attributes;
  if (prediction.landmarks) out.landmarks = inverse_transform_points(*prediction.landmarks, framed.transform, framed.warp);
  if (prediction.labels) {
    const LabelMap& src = *prediction.labels;
    LabelMap back{framed.height, framed.width, std::vector<std::int32_t>(framed.height * framed.width)};
    Landmarks centres;
    centres.reserve(framed.height * framed.width);
    for (std::size_t y = 0; y < framed.height; ++y)
      for (std::size_t x = 0; x < framed.width; ++x) centres.push_back({static_cast<double>(x), static_cast<double>(y)});
    const Landmarks mapped = transform_points(centres, framed.transform, framed.warp);
    // Label maps are predicted on an output grid that may differ from the encoder frame.
    const double rescale = static_cast<double>(src.width) / static_cast<double>(framed.warp.target_size);
    for (std::size_t i = 0; i < mapped.size(); ++i) {
      const double qx = (mapped[i].x + 0.5) * rescale - 0.5;
      const double qy = (mapped[i].y + 0.5) * rescale - 0.5;
      const auto sx = static_cast<std::size_t>(std::clamp(std::lround(qx), 0L, static_cast<long>(src.width) - 1));
      const auto sy = static_cast<std::size_t>(std::clamp(std::lround(qy), 0L, static_cast<long>(src.height) - 1));
      back.labels[i] = src.at(sy, sx);
    }
    out.labels = std::move(back);
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : predictions) {
    ordered_json j;
    j["id"] = p.id;
    if (p.labels) {
      const std::filesystem::path png = labels_path(path, p.id);
      write_label_png(png, *p.labels);
      j["labels"] = png.filename().string();
    }
    if (p.landmarks) j["landmarks"] = points_json(*p.landmarks);
    if (p.attributes) j["attributes"] = bits_json(*p.attributes);
    out << j.dump() << '\n';
  }
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::vector<Prediction> out;
  for (const auto& line : read_lines(path)) {
    const nlohmann::json j = parse_object(line, "predictions");
    reject_unknown(j, {"id", "labels", "landmarks", "attributes"}, "predictions");
    if (!j.contains("id") || !j["id"].is_string()) throw IoError("predictions: missing string field 'id'");
    Prediction p;
    p.id = j["id"].get<std::string>();
    const std::string where = "prediction '" + p.id + "'";
    if (j.contains("labels")) {
      if (!j["labels"].is_string()) throw IoError(where + ": labels must be a path");
      p.labels = read_label_png(resolve(j["labels"].get<std::string>(), path.parent_path()));
    }
    if (j.contains("landmarks")) p.landmarks = points_from(j["landmarks"], where);
    if (j.contains("attributes")) p.attributes = bits_from(j["attributes"], where);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace facevl::cli
