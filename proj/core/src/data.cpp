// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/data.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "facevl/errors.hpp"
#include "facevl/log.hpp"

namespace facevl {
namespace {

using Json = nlohmann::ordered_json;

constexpr std::size_t kFacePoints = 5;

bool entry_less(std::uint64_t ka, std::size_t sa, std::size_t pa, std::uint64_t kb, std::size_t sb,
                std::size_t pb) {
  if (ka != kb) return ka < kb;
  if (sa != sb) return sa < sb;
  return pa < pb;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

void ManifestRecord::validate() const {
  if (!std::isfinite(face_score) || face_score < 0.0 || face_score > 1.0) {
    throw InputError("manifest record '" + image_ref + "': face_score outside [0, 1]");
  }
  if (face_count != faces.size()) {
    throw InputError("manifest record '" + image_ref + "': face_count " + std::to_string(face_count) +
                     " but " + std::to_string(faces.size()) + " landmark sets");
  }
  for (const auto& f : faces) {
    if (f.size() != kFacePoints) throw InputError("manifest record '" + image_ref + "': face without 5 points");
    for (const auto& p : f)
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw InputError("manifest record '" + image_ref + "': non-finite landmark");
      }
  }
}

std::string ManifestRecord::to_json_line() const {
  Json j;
  j["image_ref"] = image_ref;
  j["caption"] = caption;
  j["face_score"] = face_score;
  j["face_count"] = face_count;
  Json faces_json = Json::array();
  for (const auto& f : faces) {
    Json flat = Json::array();
    for (const auto& p : f) {
      flat.push_back(p.x);
      flat.push_back(p.y);
    }
    faces_json.push_back(flat);
  }
  j["landmarks"] = faces_json;
  return j.dump();
}

ManifestRecord ManifestRecord::from_json_line(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw IoError(std::string("manifest line is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw IoError("manifest line is not an object");
  ManifestRecord r;
  try {
    r.image_ref = j.at("image_ref").get<std::string>();
    r.caption = j.at("caption").get<std::string>();
    r.face_score = j.at("face_score").get<double>();
    const auto count = j.at("face_count").get<std::int64_t>();
    if (count < 0) throw IoError("manifest line: negative face_count");
    r.face_count = static_cast<std::size_t>(count);
    for (const auto& flat : j.at("landmarks")) {
      const auto coords = flat.get<std::vector<double>>();
      if (coords.size() != 2 * kFacePoints) throw IoError("manifest line: face needs 10 coordinates");
      Landmarks face;
      for (std::size_t i = 0; i < kFacePoints; ++i) face.push_back({coords[2 * i], coords[2 * i + 1]});
      r.faces.push_back(std::move(face));
    }
  } catch (const Json::exception& e) {
    throw IoError(std::string("manifest line: ") + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "image_ref" && key != "caption" && key != "face_score" && key != "face_count" &&
        key != "landmarks") {
      throw IoError("manifest line: unknown field '" + key + "'");
    }
  }
  try {
    r.validate();
  } catch (const InputError& e) {
    throw IoError(e.what());
  }
  return r;
}

std::string ManifestHeader::to_json_line() const {
  Json j;
  j["manifest"] = {{"threshold", threshold}, {"score_rule", score_rule}, {"seed", seed},
                   {"target_size", target_size}, {"records", records}};
  return j.dump();
}

std::optional<ManifestHeader> ManifestHeader::from_json_line(std::string_view line) {
  Json j = Json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("manifest")) return std::nullopt;
  const Json& m = j.at("manifest");
  ManifestHeader h;
  h.threshold = m.value("threshold", 0.9);
  h.score_rule = m.value("score_rule", std::string("max"));
  h.seed = m.value("seed", std::uint64_t{0});
  h.target_size = m.value("target_size", std::size_t{0});
  h.records = m.value("records", std::size_t{0});
  return h;
}

std::vector<FaceDetection> ManifestFaceDetector::detect(const ManifestRecord& record) const {
  std::vector<FaceDetection> out;
  for (const auto& f : record.faces) out.push_back({record.face_score, f});
  return out;
}

CurationReservoir::CurationReservoir(const CurateOptions& options, std::size_t shard)
    : options_(options), shard_(shard) {
  if (!(options.threshold >= 0.0 && options.threshold <= 1.0)) {
    throw InputError("curate: threshold must be in [0, 1]");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                    static_cast<std::uint32_t>(shard)};
  rng_.seed(seq);
}

void CurationReservoir::reject(std::string_view line, const std::string& reason) {
  if (options_.rejects == nullptr) return;
  Json j;
  j["shard"] = shard_;
  j["line"] = stats_.lines;
  j["reason"] = reason;
  j["raw"] = std::string(line);
  *options_.rejects << j.dump() << '\n';
}

void CurationReservoir::offer_line(std::string_view line) {
  const std::string body = trim(line);
  if (body.empty()) return;
  if (ManifestHeader::from_json_line(body)) return;
  ++stats_.lines;
  ManifestRecord record;
  try {
    record = ManifestRecord::from_json_line(body);
  } catch (const IoError& e) {
    ++stats_.malformed;
    reject(body, std::string("malformed: ") + e.what());
    return;
  }
  if (!(record.face_score > options_.threshold)) {
    ++stats_.below_threshold;
    reject(body, "below_threshold");
    return;
  }
  ++stats_.qualifying;
  insert({rng_(), shard_, stats_.qualifying - 1, std::move(record)});
}

void CurationReservoir::offer(ManifestRecord record) {
  ++stats_.lines;
  if (!(record.face_score > options_.threshold)) {
    ++stats_.below_threshold;
    reject(record.to_json_line(), "below_threshold");
    return;
  }
  ++stats_.qualifying;
  const std::uint64_t key = rng_();
  insert({key, shard_, stats_.qualifying - 1, std::move(record)});
}

void CurationReservoir::insert(Entry entry) {
  auto less = [](const Entry& a, const Entry& b) {
    return entry_less(a.key, a.shard, a.position, b.key, b.shard, b.position);
  };
  if (options_.target_size == 0 || heap_.size() < options_.target_size) {
    heap_.push_back(std::move(entry));
    std::push_heap(heap_.begin(), heap_.end(), less);
  } else if (less(entry, heap_.front())) {
    std::pop_heap(heap_.begin(), heap_.end(), less);
    heap_.back() = std::move(entry);
    std::push_heap(heap_.begin(), heap_.end(), less);
  }
  stats_.peak_retained = std::max(stats_.peak_retained, heap_.size());
}

void CurationReservoir::merge(const CurationReservoir& other) {
  stats_.lines += other.stats_.lines;
  stats_.malformed += other.stats_.malformed;
  stats_.below_threshold += other.stats_.below_threshold;
  stats_.qualifying += other.stats_.qualifying;
  for (const Entry& e : other.heap_) insert(e);
  stats_.peak_retained = std::max(stats_.peak_retained, other.stats_.peak_retained);
}

CurateResult CurationReservoir::finish() const {
  CurateResult result;
  std::vector<const Entry*> kept;
  for (const Entry& e : heap_) kept.push_back(&e);
  std::sort(kept.begin(), kept.end(), [](const Entry* a, const Entry* b) {
    return a->shard != b->shard ? a->shard < b->shard : a->position < b->position;
  });
  for (const Entry* e : kept) result.records.push_back(e->record);
  result.stats = stats_;
  result.stats.retained = result.records.size();
  result.header.threshold = options_.threshold;
  result.header.seed = options_.seed;
  result.header.target_size = options_.target_size;
  result.header.records = result.records.size();
  if (stats_.qualifying == 0) {
    result.warnings.push_back("no record scored above the threshold; the manifest is empty");
  } else if (stats_.qualifying < options_.target_size) {
    result.warnings.push_back("only " + std::to_string(stats_.qualifying) + " qualifying records for a target of " +
                              std::to_string(options_.target_size) + "; keeping all of them");
  }
  for (const auto& w : result.warnings) warn("curate: " + w);
  return result;
}

CurateResult curate_manifest(std::istream& input, const CurateOptions& options) {
  CurationReservoir reservoir(options);
  std::string line;
  while (std::getline(input, line)) reservoir.offer_line(line);
  return reservoir.finish();
}

void write_manifest(std::ostream& out, const CurateResult& result) {
  out << result.header.to_json_line() << '\n';
  for (const auto& r : result.records) out << r.to_json_line() << '\n';
}

std::vector<ManifestRecord> read_manifest(std::istream& input) {
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(input, line)) {
    ++number;
    const std::string body = trim(line);
    if (body.empty() || ManifestHeader::from_json_line(body)) continue;
    try {
      out.push_back(ManifestRecord::from_json_line(body));
    } catch (const IoError& e) {
      throw IoError("manifest line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

const Landmarks& select_face(const ManifestRecord& record, Rng& rng) {
  if (record.face_count == 0 || record.faces.empty()) {
    throw InputError("select_face: record '" + record.image_ref + "' has no face");
  }
  std::uniform_int_distribution<std::size_t> pick(0, record.faces.size() - 1);
  return record.faces[pick(rng)];
}

std::vector<std::size_t> fewshot_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (n == 0) throw InputError("fewshot: empty parent split");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("fewshot: fraction must be in (0, 1]");
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (fraction == 1.0) return all;
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9)));
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

DatasetSplit fewshot_subset(const DatasetSplit& split, double fraction, std::uint64_t seed) {
  DatasetSplit out;
  out.seed = seed;
  out.fraction = fraction;
  for (std::size_t i : fewshot_indices(split.records.size(), fraction, seed)) {
    out.records.push_back(split.records[i]);
  }
  return out;
}

std::vector<ManifestRecord> mix_face_ratio(const std::vector<ManifestRecord>& faces,
                                           const std::vector<ManifestRecord>& nonfaces, double ratio,
                                           std::size_t size, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InputError("mix_face_ratio: ratio must be in [0, 1]");
  const auto face_n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(size)));
  const std::size_t nonface_n = size - face_n;
  if (face_n > faces.size()) {
    throw InputError("mix_face_ratio: face manifest has " + std::to_string(faces.size()) + " records, " +
                     std::to_string(face_n) + " requested");
  }
  if (nonface_n > nonfaces.size()) {
    throw InputError("mix_face_ratio: non-face manifest has " + std::to_string(nonfaces.size()) +
                     " records, " + std::to_string(nonface_n) + " requested");
  }
  Rng rng(seed);
  auto draw = [&rng](const std::vector<ManifestRecord>& pool, std::size_t k, std::vector<ManifestRecord>& out) {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back(pool[idx[i]]);
    }
  };
  std::vector<ManifestRecord> out;
  draw(faces, face_n, out);
  draw(nonfaces, nonface_n, out);
  for (std::size_t i = out.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(out[i - 1], out[pick(rng)]);
  }
  return out;
}

Image prepare_pretrain_image(const Image& image, const ManifestRecord& record, bool align,
                             std::size_t size, Rng& rng) {
  image.validate();
  const WarpConfig plain{.alpha = 1.0, .target_size = size, .enabled = false};
  if (align && !record.faces.empty()) {
    const Landmarks& face = select_face(record, rng);
    const Landmarks target = mean_face(size);
    return warp_image(image, estimate_similarity(face, target), plain);
  }
  const double side_max = static_cast<double>(std::min(image.height(), image.width()));
  std::uniform_real_distribution<double> side_dist(0.8 * side_max, side_max);
  const double side = side_dist(rng);
  std::uniform_real_distribution<double> x_dist(0.0, static_cast<double>(image.width()) - side);
  std::uniform_real_distribution<double> y_dist(0.0, static_cast<double>(image.height()) - side);
  const double x0 = x_dist(rng);
  const double y0 = y_dist(rng);
  // Crop square [x0, x0 + side) onto the size x size frame (pixel-centre convention).
  const double s = static_cast<double>(size) / side;
  const auto t = SimilarityTransform::from_params(s, 0.0, -x0 * s + 0.5 * s - 0.5, -y0 * s + 0.5 * s - 0.5);
  return warp_image(image, t, plain);
}

}  // namespace facevl
