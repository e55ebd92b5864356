// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "facevl/autograd.hpp"

namespace facevl {

using Rng = std::mt19937_64;

struct NamedParam {
  std::string name;
  ag::Var var;
  bool decay = true;  // false for biases, norms, embeddings-like scalars
};

/// Ordered, named view over a model's parameters. Names are unique and
/// stable; checkpoints and hashes are keyed by them.
class ParamList {
 public:
  void add(std::string name, ag::Var var, bool decay = true);
  void append(const ParamList& other);

  const std::vector<NamedParam>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;
  const NamedParam* find(const std::string& name) const;

  void zero_grad() const;

 private:
  std::vector<NamedParam> entries_;
};

/// N(0, stddev) initialised tensor.
Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

namespace nn {

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true, double init_std = 0.02);

  ag::Var forward(const ag::Var& x) const;
  void collect(ParamList& params, const std::string& prefix) const;

  std::size_t in_features() const { return weight_.cols(); }
  std::size_t out_features() const { return weight_.rows(); }
  const ag::Var& weight() const { return weight_; }
  const ag::Var& bias() const { return bias_; }

 private:
  ag::Var weight_;  // out x in
  ag::Var bias_;    // 1 x out, empty when disabled
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);

  ag::Var forward(const ag::Var& x) const { return ag::layer_norm(x, gamma_, beta_); }
  void collect(ParamList& params, const std::string& prefix) const;

 private:
  ag::Var gamma_;
  ag::Var beta_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng);

  /// Self-attention over the rows of x (tokens x width).
  ag::Var forward(const ag::Var& x, bool causal) const;
  void collect(ParamList& params, const std::string& prefix) const;

 private:
  std::size_t width_ = 0;
  std::size_t heads_ = 0;
  Linear qkv_;
  Linear out_;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t width, std::size_t hidden, Rng& rng);

  ag::Var forward(const ag::Var& x) const { return fc2_.forward(ag::gelu(fc1_.forward(x))); }
  void collect(ParamList& params, const std::string& prefix) const;

 private:
  Linear fc1_;
  Linear fc2_;
};

/// Observes (and may substitute) the output of a block's first LayerNorm.
using ActivationHook = std::function<ag::Var(const ag::Var&)>;

/// Pre-norm residual block: x + attn(ln1(x)), then + mlp(ln2(.)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(std::size_t width, std::size_t heads, std::size_t mlp_ratio, Rng& rng);

  ag::Var forward(const ag::Var& x, bool causal, const ActivationHook& norm1_hook = {}) const;
  void collect(ParamList& params, const std::string& prefix) const;

 private:
  LayerNorm ln1_;
  MultiHeadAttention attn_;
  LayerNorm ln2_;
  Mlp mlp_;
};

}  // namespace nn
}  // namespace facevl
