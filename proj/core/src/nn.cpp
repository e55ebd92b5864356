// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/nn.hpp"

#include <cmath>

#include "facevl/errors.hpp"

namespace facevl {

void ParamList::add(std::string name, ag::Var var, bool decay) {
  if (find(name) != nullptr) throw InputError("duplicate parameter name: " + name);
  entries_.push_back({std::move(name), std::move(var), decay});
}

void ParamList::append(const ParamList& other) {
  for (const auto& e : other.entries_) add(e.name, e.var, e.decay);
}

std::size_t ParamList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.value().size();
  return n;
}

const NamedParam* ParamList::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

void ParamList::zero_grad() const {
  for (const auto& e : entries_) {
    ag::Var v = e.var;
    v.zero_grad();
  }
}

Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

namespace nn {

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias, double init_std)
    : weight_(ag::Var::parameter(normal_tensor(out, in, init_std, rng))) {
  if (bias) bias_ = ag::Var::parameter(Tensor(1, out));
}

ag::Var Linear::forward(const ag::Var& x) const {
  ag::Var y = ag::matmul_nt(x, weight_);
  return bias_ ? ag::add_row(y, bias_) : y;
}

void Linear::collect(ParamList& params, const std::string& prefix) const {
  params.add(prefix + ".weight", weight_, true);
  if (bias_) params.add(prefix + ".bias", bias_, false);
}

LayerNorm::LayerNorm(std::size_t width)
    : gamma_(ag::Var::parameter(Tensor(1, width, 1.0))),
      beta_(ag::Var::parameter(Tensor(1, width, 0.0))) {}

void LayerNorm::collect(ParamList& params, const std::string& prefix) const {
  params.add(prefix + ".weight", gamma_, false);
  params.add(prefix + ".bias", beta_, false);
}

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng)
    : width_(width), heads_(heads), qkv_(width, 3 * width, rng), out_(width, width, rng) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

ag::Var MultiHeadAttention::forward(const ag::Var& x, bool causal) const {
  const std::size_t head_dim = width_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  ag::Var qkv = qkv_.forward(x);
  std::vector<ag::Var> outputs;
  outputs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t lo = h * head_dim;
    ag::Var q = ag::slice_cols(qkv, lo, lo + head_dim);
    ag::Var k = ag::slice_cols(qkv, width_ + lo, width_ + lo + head_dim);
    ag::Var v = ag::slice_cols(qkv, 2 * width_ + lo, 2 * width_ + lo + head_dim);
    ag::Var weights = ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), scale), causal);
    outputs.push_back(ag::matmul(weights, v));
  }
  return out_.forward(heads_ == 1 ? outputs.front() : ag::concat_cols(outputs));
}

void MultiHeadAttention::collect(ParamList& params, const std::string& prefix) const {
  qkv_.collect(params, prefix + ".qkv");
  out_.collect(params, prefix + ".out_proj");
}

Mlp::Mlp(std::size_t width, std::size_t hidden, Rng& rng)
    : fc1_(width, hidden, rng), fc2_(hidden, width, rng) {}

void Mlp::collect(ParamList& params, const std::string& prefix) const {
  fc1_.collect(params, prefix + ".fc1");
  fc2_.collect(params, prefix + ".fc2");
}

TransformerBlock::TransformerBlock(std::size_t width, std::size_t heads, std::size_t mlp_ratio,
                                   Rng& rng)
    : ln1_(width), attn_(width, heads, rng), ln2_(width), mlp_(width, width * mlp_ratio, rng) {}

ag::Var TransformerBlock::forward(const ag::Var& x, bool causal,
                                  const ActivationHook& norm1_hook) const {
  ag::Var normed = ln1_.forward(x);
  if (norm1_hook) normed = norm1_hook(normed);
  ag::Var h = ag::add(x, attn_.forward(normed, causal));
  return ag::add(h, mlp_.forward(ln2_.forward(h)));
}

void TransformerBlock::collect(ParamList& params, const std::string& prefix) const {
  ln1_.collect(params, prefix + ".ln_1");
  attn_.collect(params, prefix + ".attn");
  ln2_.collect(params, prefix + ".ln_2");
  mlp_.collect(params, prefix + ".mlp");
}

}  // namespace nn
}  // namespace facevl
