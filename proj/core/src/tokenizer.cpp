// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/tokenizer.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "facevl/errors.hpp"

namespace facevl {

// Generated at configure time from core/data/vocab.txt.
extern const char* const kBuiltinVocabulary;

void TextTokens::validate(std::int32_t eos_id) const {
  if (eos_position >= kContextLength) throw InputError("eos_position beyond context length");
  if (ids[eos_position] != eos_id) throw InputError("eos_position does not hold the eos token");
}

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary v;
  v.byte_ids_.fill(-1);
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw IoError("vocabulary: empty line at index " + std::to_string(v.tokens_.size()));
    const auto id = static_cast<std::int32_t>(v.tokens_.size());
    std::int16_t byte = -1;
    if (line == "<pad>") {
      v.pad_ = id;
    } else if (line == "<bos>") {
      v.bos_ = id;
    } else if (line == "<eos>") {
      v.eos_ = id;
    } else if (line.size() == 6 && line.starts_with("<0x") && line.back() == '>') {
      byte = static_cast<std::int16_t>(std::stoi(line.substr(3, 2), nullptr, 16));
      v.byte_ids_[static_cast<std::size_t>(byte)] = id;
    } else if (!v.words_.emplace(line, id).second) {
      throw IoError("vocabulary: duplicate token '" + line + "'");
    }
    v.byte_of_.push_back(byte);
    v.tokens_.push_back(line);
  }
  if (v.pad_ < 0 || v.bos_ < 0 || v.eos_ < 0) throw IoError("vocabulary: missing special tokens");
  for (std::int32_t id : v.byte_ids_) {
    if (id < 0) throw IoError("vocabulary: incomplete byte fallback table");
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

const Vocabulary& Vocabulary::builtin() {
  static const Vocabulary vocab = parse(kBuiltinVocabulary);
  return vocab;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw InputError("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocabulary::encode_words(std::string_view text) const {
  std::vector<std::int32_t> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto ch = static_cast<unsigned char>(text[i]);
    if (std::isspace(ch)) {
      out.push_back(byte_ids_[ch]);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    const std::string word(text.substr(i, j - i));
    if (auto it = words_.find(word); it != words_.end()) {
      out.push_back(it->second);
    } else {
      for (char c : word) out.push_back(byte_ids_[static_cast<unsigned char>(c)]);
    }
    i = j;
  }
  return out;
}

TextTokens Vocabulary::tokenize(std::string_view text) const {
  TextTokens tokens;
  tokens.ids.fill(pad_);
  const auto content = encode_words(text);
  const std::size_t keep = std::min(content.size(), kContextLength - 2);
  tokens.ids[0] = bos_;
  for (std::size_t k = 0; k < keep; ++k) tokens.ids[k + 1] = content[k];
  tokens.eos_position = keep + 1;
  tokens.ids[tokens.eos_position] = eos_;
  return tokens;
}

std::string Vocabulary::detokenize(const TextTokens& tokens) const {
  tokens.validate(eos_);
  std::string out;
  for (std::size_t k = 1; k < tokens.eos_position; ++k) {
    const std::int32_t id = tokens.ids[k];
    const auto b = byte_of_.at(static_cast<std::size_t>(id));
    if (b >= 0) {
      out.push_back(static_cast<char>(b));
    } else if (id != pad_ && id != bos_ && id != eos_) {
      out += token(id);
    }
  }
  return out;
}

}  // namespace facevl
