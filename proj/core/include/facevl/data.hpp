// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "facevl/geometry.hpp"
#include "facevl/image.hpp"
#include "facevl/nn.hpp"

namespace facevl {

/// One image-text pair with its face detections (5 points per face).
struct ManifestRecord {
  std::string image_ref;
  std::string caption;
  double face_score = 0.0;  // max detection score over the image
  std::size_t face_count = 0;
  std::vector<Landmarks> faces;

  /// Throws InputError unless face_count == |faces|, every face has 5 finite
  /// points and face_score is in [0, 1].
  void validate() const;
  /// One JSON object, keys in the order image_ref, caption, face_score,
  /// face_count, landmarks (flattened x,y per face).
  std::string to_json_line() const;
  static ManifestRecord from_json_line(std::string_view line);

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

/// First line of a curated manifest.
struct ManifestHeader {
  double threshold = 0.9;
  std::string score_rule = "max";  // the threshold applies to the highest face score
  std::uint64_t seed = 0;
  std::size_t target_size = 0;
  std::size_t records = 0;

  std::string to_json_line() const;
  static std::optional<ManifestHeader> from_json_line(std::string_view line);
};

struct FaceDetection {
  double score = 0.0;
  Landmarks landmarks;  // 5 points
};

/// Source of face detections for a record.
class FaceDetector {
 public:
  virtual ~FaceDetector() = default;
  virtual std::vector<FaceDetection> detect(const ManifestRecord& record) const = 0;
};

/// Replays the detections stored in the manifest; every face carries the
/// record's face_score.
class ManifestFaceDetector final : public FaceDetector {
 public:
  std::vector<FaceDetection> detect(const ManifestRecord& record) const override;
};

struct CurateOptions {
  double threshold = 0.9;
  std::size_t target_size = 0;  // 0 keeps every qualifying record
  std::uint64_t seed = 0;
  /// Optional sink for rejected lines (one JSON object per line).
  std::ostream* rejects = nullptr;
};

struct CurateStats {
  std::size_t lines = 0;
  std::size_t malformed = 0;
  std::size_t below_threshold = 0;
  std::size_t qualifying = 0;
  std::size_t retained = 0;
  std::size_t peak_retained = 0;  // reservoir high-water mark
};

struct CurateResult {
  ManifestHeader header;
  std::vector<ManifestRecord> records;  // input order
  CurateStats stats;
  std::vector<std::string> warnings;
};

/// Single-pass bottom-k reservoir over qualifying records. Each shard draws
/// priority keys from its own (seed, shard) stream; merging shards keeps the
/// global k smallest keys, so the result depends only on seed and layout.
class CurationReservoir {
 public:
  CurationReservoir(const CurateOptions& options, std::size_t shard = 0);

  /// Parses and filters one manifest line. Header and blank lines are ignored.
  void offer_line(std::string_view line);
  /// Filters an already parsed record.
  void offer(ManifestRecord record);
  void merge(const CurationReservoir& other);
  CurateResult finish() const;

  const CurateStats& stats() const noexcept { return stats_; }

 private:
  struct Entry {
    std::uint64_t key;
    std::size_t shard;
    std::size_t position;
    ManifestRecord record;
  };
  void insert(Entry entry);
  void reject(std::string_view line, const std::string& reason);

  CurateOptions options_;
  std::size_t shard_;
  Rng rng_;
  std::vector<Entry> heap_;  // max-heap on (key, shard, position)
  CurateStats stats_;
};

/// Streams `input` through one reservoir.
CurateResult curate_manifest(std::istream& input, const CurateOptions& options);
void write_manifest(std::ostream& out, const CurateResult& result);
std::vector<ManifestRecord> read_manifest(std::istream& input);

/// Uniform choice among the record's faces.
const Landmarks& select_face(const ManifestRecord& record, Rng& rng);

struct DatasetSplit {
  std::vector<ManifestRecord> records;
  std::uint64_t seed = 0;
  double fraction = 1.0;
};

/// max(1, floor(fraction * n)) sorted indices drawn without replacement.
std::vector<std::size_t> fewshot_indices(std::size_t n, double fraction, std::uint64_t seed);
/// Subset keeping the parent order; fraction 1 returns the parent records.
DatasetSplit fewshot_subset(const DatasetSplit& split, double fraction, std::uint64_t seed);

/// round(ratio * size) face records plus the remainder from the non-face
/// pool, each drawn without replacement, then shuffled.
std::vector<ManifestRecord> mix_face_ratio(const std::vector<ManifestRecord>& faces,
                                           const std::vector<ManifestRecord>& nonfaces, double ratio,
                                           std::size_t size, std::uint64_t seed);

/// Encoder input for one record: with `align`, the selected face is mapped
/// onto the mean-face template; otherwise a random square crop is taken.
Image prepare_pretrain_image(const Image& image, const ManifestRecord& record, bool align,
                             std::size_t size, Rng& rng);

}  // namespace facevl
