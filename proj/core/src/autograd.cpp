// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include "facevl/errors.hpp"

namespace facevl::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

MapMat as_eigen(Tensor& t) {
  return MapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
ConstMapMat as_eigen(const Tensor& t) {
  return ConstMapMat(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

thread_local bool g_grad_enabled = true;

// Input i of the node being back-propagated, or nullptr when it needs no gradient.
Node* wants(Node& self, std::size_t i) {
  Node* in = self.inputs[i].get();
  return in->requires_grad ? in : nullptr;
}

void require_scalar(const Var& v, const char* what) {
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionError(std::string(what) + ": expected 1x1, got " + v.value().shape_string());
  }
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.rows(), value.cols());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Tensor(node_->value.rows(), node_->value.cols());
}

void Var::zero_grad() {
  if (node_->has_grad()) node_->grad.fill(0.0);
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& v : inputs) node->inputs.push_back(v.node());
      node->backward = std::move(fn);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  require_scalar(root, "backward");
  if (!root.requires_grad()) throw InputError("backward: root does not require a gradient");

  // Iterative post-order DFS gives a topological order of the recorded graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
}

// ---- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Node* in = wants(self, k)) {
        Tensor& g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (Node* in = wants(self, 0)) {
      Tensor& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (Node* in = wants(self, 1)) {
      Tensor& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (Node* in = wants(self, 0)) {
      Tensor& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (Node* in = wants(self, 1)) {
      Tensor& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  return make_result(std::move(out), {a}, [factor](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var scale_by(const Var& a, const Var& s) {
  require_scalar(s, "scale_by");
  const double factor = s.item();
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  return make_result(std::move(out), {a, s}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const double f = self.inputs[1]->value[0];
    if (Node* in = wants(self, 0)) {
      Tensor& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * self.grad[i];
    }
    if (Node* in = wants(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) acc += self.grad[i] * av[i];
      in->grad_buffer()[0] += acc;
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var exp(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::exp(v);
  return make_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {a}, [](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  Tensor out = a.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  return make_result(std::move(out), {a}, [](Node& self) {
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    const Tensor& x = self.inputs[0]->value;
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      g[i] += self.grad[i] * (cdf + x[i] * pdf);
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: row " + row.value().shape_string() + " vs " +
                         a.value().shape_string());
  }
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += row.value()[c];
  }
  return make_result(std::move(out), {a, row}, [](Node& self) {
    if (Node* in = wants(self, 0)) {
      Tensor& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (Node* in = wants(self, 1)) {
      Tensor& g = in->grad_buffer();
      for (std::size_t r = 0; r < self.grad.rows(); ++r) {
        for (std::size_t c = 0; c < self.grad.cols(); ++c) g[c] += self.grad(r, c);
      }
    }
  });
}

// ---- linear algebra -----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.value().shape_string() + " x " + b.value().shape_string());
  }
  Tensor out(a.rows(), b.cols());
  as_eigen(out).noalias() = as_eigen(a.value()) * as_eigen(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const auto g = as_eigen(static_cast<const Tensor&>(self.grad));
    if (Node* in = wants(self, 0)) {
      as_eigen(in->grad_buffer()).noalias() +=
          g * as_eigen(static_cast<const Tensor&>(self.inputs[1]->value)).transpose();
    }
    if (Node* in = wants(self, 1)) {
      as_eigen(in->grad_buffer()).noalias() +=
          as_eigen(static_cast<const Tensor&>(self.inputs[0]->value)).transpose() * g;
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + a.value().shape_string() + " x " +
                         b.value().shape_string() + "^T");
  }
  Tensor out(a.rows(), b.rows());
  as_eigen(out).noalias() = as_eigen(a.value()) * as_eigen(b.value()).transpose();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const auto g = as_eigen(static_cast<const Tensor&>(self.grad));
    if (Node* in = wants(self, 0)) {
      as_eigen(in->grad_buffer()).noalias() +=
          g * as_eigen(static_cast<const Tensor&>(self.inputs[1]->value));
    }
    if (Node* in = wants(self, 1)) {
      as_eigen(in->grad_buffer()).noalias() +=
          g.transpose() * as_eigen(static_cast<const Tensor&>(self.inputs[0]->value));
    }
  });
}

Var transpose(const Var& a) {
  Tensor out(a.cols(), a.rows());
  as_eigen(out) = as_eigen(a.value()).transpose();
  return make_result(std::move(out), {a}, [](Node& self) {
    as_eigen(self.inputs[0]->grad_buffer()) +=
        as_eigen(static_cast<const Tensor&>(self.grad)).transpose();
  });
}

// ---- row-wise ---------------------------------------------------------------------

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  if (gamma && (gamma.rows() != 1 || gamma.cols() != c)) throw DimensionError("layer_norm: gamma");
  if (beta && (beta.rows() != 1 || beta.cols() != c)) throw DimensionError("layer_norm: beta");
  auto normalized = std::make_shared<Tensor>(n, c);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  Tensor out(n, c);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = x.value().row_span(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(c);
    const double rstd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = rstd;
    for (std::size_t k = 0; k < c; ++k) {
      const double xh = (row[k] - mu) * rstd;
      (*normalized)(r, k) = xh;
      out(r, k) = xh * (gamma ? gamma.value()[k] : 1.0) + (beta ? beta.value()[k] : 0.0);
    }
  }
  std::vector<Var> inputs{x};
  const bool has_gamma = static_cast<bool>(gamma);
  const bool has_beta = static_cast<bool>(beta);
  if (has_gamma) inputs.push_back(gamma);
  if (has_beta) inputs.push_back(beta);
  return make_result(std::move(out), std::move(inputs),
                     [normalized, inv_std, has_gamma, has_beta](Node& self) {
    const Tensor& xh = *normalized;
    const std::size_t rows = xh.rows();
    const std::size_t cols = xh.cols();
    const Tensor* gval = has_gamma ? &self.inputs[1]->value : nullptr;
    if (has_gamma) {
      if (Node* in = wants(self, 1)) {
        Tensor& g = in->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < cols; ++k) g[k] += self.grad(r, k) * xh(r, k);
      }
    }
    if (has_beta) {
      if (Node* in = wants(self, has_gamma ? 2 : 1)) {
        Tensor& g = in->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < cols; ++k) g[k] += self.grad(r, k);
      }
    }
    if (Node* in = wants(self, 0)) {
      Tensor& g = in->grad_buffer();
      std::vector<double> dxh(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (std::size_t k = 0; k < cols; ++k) {
          dxh[k] = self.grad(r, k) * (gval ? (*gval)[k] : 1.0);
          mean_d += dxh[k];
          mean_dx += dxh[k] * xh(r, k);
        }
        mean_d /= static_cast<double>(cols);
        mean_dx /= static_cast<double>(cols);
        for (std::size_t k = 0; k < cols; ++k) {
          g(r, k) += (*inv_std)[r] * (dxh[k] - mean_d - xh(r, k) * mean_dx);
        }
      }
    }
  });
}

Var softmax_rows(const Var& x, bool causal) {
  if (causal && x.rows() > x.cols()) throw DimensionError("softmax_rows: causal needs rows <= cols");
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::size_t limit = causal ? r + 1 : x.cols();
    auto in = x.value().row_span(r);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < limit; ++k) peak = std::max(peak, in[k]);
    double total = 0.0;
    for (std::size_t k = 0; k < limit; ++k) {
      out(r, k) = std::exp(in[k] - peak);
      total += out(r, k);
    }
    for (std::size_t k = 0; k < limit; ++k) out(r, k) /= total;
  }
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const Tensor& y = self.value;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t k = 0; k < y.cols(); ++k) dot += self.grad(r, k) * y(r, k);
      for (std::size_t k = 0; k < y.cols(); ++k) g(r, k) += y(r, k) * (self.grad(r, k) - dot);
    }
  });
}

Var log_softmax_rows(const Var& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.value().row_span(r);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (double v : in) total += std::exp(v - peak);
    const double lse = peak + std::log(total);
    for (std::size_t k = 0; k < in.size(); ++k) out(r, k) = in[k] - lse;
  }
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const Tensor& y = self.value;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double total = 0.0;
      for (std::size_t k = 0; k < y.cols(); ++k) total += self.grad(r, k);
      for (std::size_t k = 0; k < y.cols(); ++k) {
        g(r, k) += self.grad(r, k) - std::exp(y(r, k)) * total;
      }
    }
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  auto norms = std::make_shared<std::vector<double>>(x.rows());
  Tensor out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double sq = 0.0;
    for (double v : out.row_span(r)) sq += v * v;
    const double n = std::max(std::sqrt(sq), eps);
    (*norms)[r] = n;
    for (double& v : out.row_span(r)) v /= n;
  }
  return make_result(std::move(out), {x}, [norms](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const Tensor& y = self.value;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t k = 0; k < y.cols(); ++k) dot += self.grad(r, k) * y(r, k);
      for (std::size_t k = 0; k < y.cols(); ++k) {
        g(r, k) += (self.grad(r, k) - y(r, k) * dot) / (*norms)[r];
      }
    }
  });
}

// ---- reductions -----------------------------------------------------------------

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return make_result(Tensor::scalar(total), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (auto& v : g.values()) v += self.grad[0];
  });
}

Var mean(const Var& a) {
  if (a.value().empty()) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw DimensionError("mean_rows: no rows");
  Tensor out(1, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out[c] += a.value()(r, c);
  const double inv = 1.0 / static_cast<double>(a.rows());
  for (auto& v : out.values()) v *= inv;
  return make_result(std::move(out), {a}, [inv](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += inv * self.grad[c];
  });
}

Var max_rows(const Var& a) {
  if (a.rows() == 0) throw DimensionError("max_rows: no rows");
  auto arg = std::make_shared<std::vector<std::size_t>>(a.cols(), 0);
  Tensor out(1, a.cols());
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double best = a.value()(0, c);
    for (std::size_t r = 1; r < a.rows(); ++r) {
      if (a.value()(r, c) > best) {
        best = a.value()(r, c);
        (*arg)[c] = r;
      }
    }
    out[c] = best;
  }
  return make_result(std::move(out), {a}, [arg](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t c = 0; c < g.cols(); ++c) g((*arg)[c], c) += self.grad[c];
  });
}

Var pick(const Var& a, std::span<const std::size_t> index) {
  if (index.size() != a.rows()) throw DimensionError("pick: one index per row required");
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  Tensor out(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    if ((*idx)[r] >= a.cols()) throw InputError("pick: index out of range");
    out[r] = a.value()(r, (*idx)[r]);
  }
  return make_result(std::move(out), {a}, [idx](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < idx->size(); ++r) g(r, (*idx)[r]) += self.grad[r];
  });
}

// ---- slicing / assembly ---------------------------------------------------------

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) throw DimensionError("slice_rows: range out of bounds");
  const std::size_t c = a.cols();
  Tensor out(end - begin, c);
  std::copy_n(a.value().data() + begin * c, out.size(), out.data());
  return make_result(std::move(out), {a}, [begin](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    double* dst = g.data() + begin * g.cols();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw DimensionError("slice_cols: range out of bounds");
  Tensor out(a.rows(), end - begin);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = a.value()(r, c);
  return make_result(std::move(out), {a}, [begin](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < self.grad.cols(); ++c) g(r, c + begin) += self.grad(r, c);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw DimensionError("concat_rows: column mismatch");
    total += p.rows();
  }
  Tensor out(total, c);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t n = self.inputs[k]->value.size();
      if (Node* in = wants(self, k)) {
        Tensor& g = in->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
    total += p.cols();
  }
  Tensor out(rows, total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, offset + c) = p.value()(r, c);
    offset += p.cols();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t cols = self.inputs[k]->value.cols();
      if (Node* in = wants(self, k)) {
        Tensor& g = in->grad_buffer();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c) g(r, c) += self.grad(r, off + c);
      }
      off += cols;
    }
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> index) {
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  const std::size_t c = a.cols();
  Tensor out(idx->size(), c);
  for (std::size_t r = 0; r < idx->size(); ++r) {
    if ((*idx)[r] >= a.rows()) throw InputError("gather_rows: index out of range");
    std::copy_n(a.value().data() + (*idx)[r] * c, c, out.data() + r * c);
  }
  return make_result(std::move(out), {a}, [idx](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < idx->size(); ++r)
      for (std::size_t k = 0; k < g.cols(); ++k) g((*idx)[r], k) += self.grad(r, k);
  });
}

Var replace_rows(const Var& a, std::span<const std::size_t> index, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("replace_rows: row shape");
  auto replaced = std::make_shared<std::vector<char>>(a.rows(), 0);
  for (std::size_t i : index) {
    if (i >= a.rows()) throw InputError("replace_rows: index out of range");
    (*replaced)[i] = 1;
  }
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    if ((*replaced)[r]) std::copy_n(row.value().data(), out.cols(), out.data() + r * out.cols());
  }
  return make_result(std::move(out), {a, row}, [replaced](Node& self) {
    const std::size_t cols = self.grad.cols();
    if (Node* in = wants(self, 0)) {
      Tensor& g = in->grad_buffer();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        if (!(*replaced)[r])
          for (std::size_t c = 0; c < cols; ++c) g(r, c) += self.grad(r, c);
      }
    }
    if (Node* in = wants(self, 1)) {
      Tensor& g = in->grad_buffer();
      for (std::size_t r = 0; r < self.grad.rows(); ++r) {
        if ((*replaced)[r])
          for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad(r, c);
      }
    }
  });
}

Var apply_row_map(const Var& a, const RowMap& map) {
  if (map.source_rows != a.rows()) {
    throw DimensionError("apply_row_map: map expects " + std::to_string(map.source_rows) +
                         " rows, got " + std::to_string(a.rows()));
  }
  const std::size_t c = a.cols();
  Tensor out(map.taps.size(), c);
  for (std::size_t r = 0; r < map.taps.size(); ++r) {
    double* dst = out.data() + r * c;
    for (const auto& tap : map.taps[r]) {
      const double* src = a.value().data() + tap.source * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += tap.weight * src[k];
    }
  }
  auto shared = std::make_shared<RowMap>(map);
  return make_result(std::move(out), {a}, [shared](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const std::size_t cols = g.cols();
    for (std::size_t r = 0; r < shared->taps.size(); ++r) {
      const double* src = self.grad.data() + r * cols;
      for (const auto& tap : shared->taps[r]) {
        double* dst = g.data() + tap.source * cols;
        for (std::size_t k = 0; k < cols; ++k) dst[k] += tap.weight * src[k];
      }
    }
  });
}

Var im2col3x3(const Var& a, std::size_t height, std::size_t width) {
  if (a.rows() != height * width) throw DimensionError("im2col3x3: rows != height*width");
  const std::size_t c = a.cols();
  Tensor out(height * width, 9 * c);
  auto for_each_tap = [height, width](auto&& fn) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long sy = static_cast<long>(y) + dy;
            const long sx = static_cast<long>(x) + dx;
            if (sy < 0 || sx < 0 || sy >= static_cast<long>(height) || sx >= static_cast<long>(width))
              continue;
            const std::size_t tap = static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
            fn(y * width + x, static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx), tap);
          }
        }
      }
    }
  };
  for_each_tap([&](std::size_t dst, std::size_t src, std::size_t tap) {
    std::copy_n(a.value().data() + src * c, c, out.data() + dst * 9 * c + tap * c);
  });
  return make_result(std::move(out), {a}, [for_each_tap, c](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for_each_tap([&](std::size_t dst, std::size_t src, std::size_t tap) {
      const double* from = self.grad.data() + dst * 9 * c + tap * c;
      double* to = g.data() + src * c;
      for (std::size_t k = 0; k < c; ++k) to[k] += from[k];
    });
  });
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  require_same_shape(logits.value(), targets, "bce_with_logits");
  const double n = static_cast<double>(targets.size());
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double x = logits.value()[i];
    total += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return make_result(Tensor::scalar(total / n), {logits}, [targets, n](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const Tensor& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-x[i]));
      g[i] += self.grad[0] * (p - targets[i]) / n;
    }
  });
}

}  // namespace facevl::ag
