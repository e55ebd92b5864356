// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace facevl {

inline constexpr std::size_t kContextLength = 77;

/// Fixed-length caption encoding: [bos, tokens..., eos, pad...].
struct TextTokens {
  std::array<std::int32_t, kContextLength> ids{};
  std::size_t eos_position = 0;

  /// Throws InputError when eos_position is out of range or does not hold eos.
  void validate(std::int32_t eos_id) const;
  friend bool operator==(const TextTokens&, const TextTokens&) = default;
};

/// Whitespace + byte-fallback vocabulary.
///
/// The fixture file lists one token per line; the line number is the id.
/// `<pad>`, `<bos>` and `<eos>` are specials, `<0xNN>` are the 256 byte
/// tokens, and every other line is a whole word. Text is split into runs of
/// non-space characters; a run found in the vocabulary becomes one token and
/// anything else (including whitespace) is spelled out byte by byte, so
/// detokenize(tokenize(s)) reproduces s exactly up to truncation.
class Vocabulary {
 public:
  static Vocabulary parse(std::string_view text);
  static Vocabulary load(const std::filesystem::path& path);
  /// The fixture compiled into the library (core/data/vocab.txt).
  static const Vocabulary& builtin();

  std::size_t size() const noexcept { return tokens_.size(); }
  std::int32_t pad_id() const noexcept { return pad_; }
  std::int32_t bos_id() const noexcept { return bos_; }
  std::int32_t eos_id() const noexcept { return eos_; }
  std::int32_t byte_id(std::uint8_t b) const noexcept { return byte_ids_[b]; }
  const std::string& token(std::int32_t id) const;

  /// Unbounded token ids for `text`, without bos/eos.
  std::vector<std::int32_t> encode_words(std::string_view text) const;
  /// Truncates to kContextLength - 2 content tokens and always ends in eos.
  TextTokens tokenize(std::string_view text) const;
  /// Content between bos and eos decoded back to bytes.
  std::string detokenize(const TextTokens& tokens) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> words_;
  std::array<std::int32_t, 256> byte_ids_{};
  std::vector<std::int16_t> byte_of_;  // -1 for non-byte tokens
  std::int32_t pad_ = -1;
  std::int32_t bos_ = -1;
  std::int32_t eos_ = -1;
};

}  // namespace facevl
