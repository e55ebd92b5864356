// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "facevl/nn.hpp"

namespace facevl {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.05;
};

/// Adam with decoupled weight decay. Parameters flagged decay = false (biases,
/// norms, embeddings tables, temperature) are not decayed.
class AdamW {
 public:
  AdamW(ParamList params, AdamWConfig config);

  void step(double lr);
  void zero_grad() const { params_.zero_grad(); }

  const ParamList& params() const noexcept { return params_; }
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  ParamList params_;
  AdamWConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

/// Global L2 norm of all gradients.
double grad_norm(const ParamList& params);

/// Rescales gradients so their global norm is at most max_norm; returns the
/// norm measured before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

/// SHA-256 over parameter names, shapes and values, hex-encoded.
std::string parameter_hash(const ParamList& params);

/// SHA-256 of a byte string, hex-encoded.
std::string sha256_hex(std::string_view bytes);

}  // namespace facevl
