// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "facevl/errors.hpp"
#include "facevl/optim.hpp"

namespace facevl {
namespace {

constexpr std::array<char, 8> kMagic{'F', 'A', 'C', 'E', 'V', 'L', 'C', 'K'};

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("checkpoint: truncated header");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return value;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const ParamList& params, std::string_view metadata_json) {
  nlohmann::ordered_json metadata = nlohmann::ordered_json::parse(metadata_json, nullptr, false);
  if (metadata.is_discarded() || !metadata.is_object()) throw InputError("checkpoint metadata must be a JSON object");
  nlohmann::ordered_json manifest;
  manifest["format"] = "facevl-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["metadata"] = metadata;
  manifest["tensors"] = nlohmann::ordered_json::array();
  std::string payload;
  for (const auto& p : params.entries()) {
    const Tensor& v = p.var.value();
    manifest["tensors"].push_back({{"name", p.name},
                                   {"shape", {v.rows(), v.cols()}},
                                   {"dtype", "f32"},
                                   {"offset", payload.size()}});
    for (double x : v.values()) put_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  const std::string manifest_text = manifest.dump();
  std::string bytes(kMagic.begin(), kMagic.end());
  put_le(bytes, kCheckpointVersion);
  put_le(bytes, static_cast<std::uint64_t>(manifest_text.size()));
  bytes += manifest_text;
  bytes += payload;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw IoError(path.string() + " is not a facevl checkpoint");
  }
  std::size_t pos = kMagic.size();
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto manifest_size = get_le<std::uint64_t>(bytes, pos);
  if (pos + manifest_size > bytes.size()) throw IoError("checkpoint: truncated manifest");
  nlohmann::json manifest = nlohmann::json::parse(bytes.substr(pos, manifest_size), nullptr, false);
  if (manifest.is_discarded()) throw IoError("checkpoint: manifest is not valid JSON");
  const std::size_t payload = pos + manifest_size;

  Checkpoint ck;
  try {
    ck.metadata = manifest.at("metadata").dump();
    for (const auto& entry : manifest.at("tensors")) {
      CheckpointTensor t;
      t.name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw IoError("checkpoint: tensor '" + t.name + "' is not 2-D");
      if (entry.at("dtype").get<std::string>() != "f32") throw IoError("checkpoint: unsupported dtype");
      t.rows = shape[0];
      t.cols = shape[1];
      t.offset = entry.at("offset").get<std::uint64_t>();
      std::size_t at = payload + t.offset;
      if (at + 4 * t.rows * t.cols > bytes.size()) throw IoError("checkpoint: tensor '" + t.name + "' truncated");
      t.value = Tensor(t.rows, t.cols);
      for (auto& x : t.value.values()) x = std::bit_cast<float>(get_le<std::uint32_t>(bytes, at));
      ck.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint manifest: ") + e.what());
  }
  return ck;
}

std::size_t load_parameters(const Checkpoint& checkpoint, const ParamList& params, bool allow_missing) {
  std::size_t loaded = 0;
  for (const auto& p : params.entries()) {
    const CheckpointTensor* t = checkpoint.find(p.name);
    if (t == nullptr) {
      if (allow_missing) continue;
      throw IoError("checkpoint lacks parameter '" + p.name + "'");
    }
    ag::Var var = p.var;
    if (!t->value.same_shape(var.value())) {
      throw IoError("checkpoint parameter '" + p.name + "' has shape " + t->value.shape_string() +
                    ", model expects " + var.value().shape_string());
    }
    var.mutable_value() = t->value;
    ++loaded;
  }
  return loaded;
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string parameter_digest(const ParamList& params) {
  std::string bytes;
  for (const auto& p : params.entries()) {
    const Tensor& v = p.var.value();
    bytes += p.name;
    bytes.push_back('\0');
    put_le(bytes, static_cast<std::uint64_t>(v.rows()));
    put_le(bytes, static_cast<std::uint64_t>(v.cols()));
    for (double x : v.values()) put_le(bytes, std::bit_cast<std::uint64_t>(x));
  }
  return sha256_hex(bytes);
}

}  // namespace facevl
