// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "facevl/nn.hpp"

// Checkpoint layout: 8-byte magic "FACEVLCK", u32 format version, u64 manifest
// length, the JSON manifest, then the tensor payload. All integers and the
// float32 payload are little-endian; manifest offsets count from the payload start.
namespace facevl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t offset = 0;  // bytes into the payload
  Tensor value;
};

struct Checkpoint {
  std::string metadata = "{}";  // caller-defined JSON object
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const ParamList& params,
                     std::string_view metadata_json = "{}");
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies stored values into matching parameters. A parameter absent from the
/// checkpoint is an IoError unless `allow_missing`; shape mismatches always are.
/// Returns the number of parameters loaded.
std::size_t load_parameters(const Checkpoint& checkpoint, const ParamList& params, bool allow_missing = false);

/// SHA-256 of a file's bytes, hex-encoded.
std::string file_sha256(const std::filesystem::path& path);
/// SHA-256 over names, shapes and exact double values of `params`.
std::string parameter_digest(const ParamList& params);

}  // namespace facevl
