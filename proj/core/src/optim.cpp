// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/optim.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <memory>

#include "facevl/errors.hpp"

namespace facevl {

AdamW::AdamW(ParamList params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_.entries()) {
    m_.emplace_back(p.var.rows(), p.var.cols());
    v_.emplace_back(p.var.rows(), p.var.cols());
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double t = static_cast<double>(t_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const NamedParam& p = params_.entries()[i];
    ag::Var var = p.var;
    if (!var.has_grad()) continue;
    Tensor& value = var.mutable_value();
    const Tensor& g = var.node()->grad;
    if (p.decay && config_.weight_decay > 0.0) {
      const double shrink = 1.0 - lr * config_.weight_decay;
      for (auto& x : value.values()) x *= shrink;
    }
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      value[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + config_.eps);
    }
  }
}

double grad_norm(const ParamList& params) {
  double sq = 0.0;
  for (const auto& p : params.entries()) {
    if (!p.var.has_grad()) continue;
    for (double g : p.var.node()->grad.values()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  if (!(max_norm > 0.0)) throw InputError("clip_grad_norm: max_norm must be positive");
  const double norm = grad_norm(params);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  if (norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (const auto& p : params.entries()) {
      if (!p.var.has_grad()) continue;
      for (double& g : p.var.node()->grad.values()) g *= factor;
    }
  }
  return norm;
}

namespace {

struct DigestDeleter {
  void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error("SHA-256 initialisation failed");
    }
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest, &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[digest[i] >> 4]);
      out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, DigestDeleter> ctx_;
};

}  // namespace

std::string parameter_hash(const ParamList& params) {
  Sha256 sha;
  for (const auto& p : params.entries()) {
    sha.update(p.name.data(), p.name.size() + 1);
    const std::uint64_t shape[2] = {p.var.rows(), p.var.cols()};
    sha.update(shape, sizeof(shape));
    sha.update(p.var.value().data(), p.var.value().size() * sizeof(double));
  }
  return sha.hex();
}

std::string sha256_hex(std::string_view bytes) {
  Sha256 sha;
  sha.update(bytes.data(), bytes.size());
  return sha.hex();
}

}  // namespace facevl
