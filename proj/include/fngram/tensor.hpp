#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fngram/util.hpp"

namespace fngram {

namespace detail {

// Shared dense kernels. The incremental decoding path reuses these so that
// stepwise and full-sequence forwards produce identical floating-point results.

/// C[m x p] += A[m x k] * B[k x p]
template <typename T>
void mm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * p;
    for (std::size_t l = 0; l < k; ++l) {
      const T av = arow[l];
      const T* brow = b + l * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C[m x p] += A[m x k] * B[p x k]^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * p;
    for (std::size_t j = 0; j < p; ++j) {
      const T* brow = b + j * k;
      T acc = 0;
      for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

/// C[k x p] += A[m x k]^T * B[m x p]
template <typename T>
void mm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * p;
    for (std::size_t q = 0; q < k; ++q) {
      const T av = arow[q];
      T* crow = c + q * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

/// Numerically stabilized softmax over one contiguous slice.
template <typename T>
void softmax_row(const T* in, T* out, std::size_t d) {
  T mx = in[0];
  for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, in[i]);
  T sum = 0;
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  const T inv = T(1) / sum;
  for (std::size_t i = 0; i < d; ++i) out[i] *= inv;
}

/// Layer normalization of one slice with affine transform.
template <typename T>
void layernorm_row(const T* x, const T* gain, const T* bias, T* out, std::size_t d, T eps) {
  T mean = 0;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<T>(d);
  T var = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const T c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  const T inv_std = T(1) / std::sqrt(var + eps);
  for (std::size_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv_std * gain[i] + bias[i];
}

template <typename T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475)));
}

template <typename T>
T gelu_grad_scalar(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

}  // namespace detail

/// Dense row-major tensor participating in a reverse-mode gradient tape.
/// The scalar type selects element precision (float for training, double for
/// gradient-check oracles). Values are immutable after construction; only the
/// grad buffer mutates, during backward() and zero_grad().
template <typename T>
class Tensor {
 public:
  struct Node;
  using NodePtr = std::shared_ptr<Node>;

  /// Scratch gradients flowing through one backward pass. Accumulated results
  /// land in Node::grad afterwards, so repeated backward() calls accumulate.
  struct BackCtx {
    std::unordered_map<const Node*, std::vector<T>> flow;

    std::vector<T>& buf(const Node* n) {
      auto& v = flow[n];
      if (v.size() != n->value.size()) v.assign(n->value.size(), T(0));
      return v;
    }
  };

  struct Node {
    std::vector<std::size_t> shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first populated
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(BackCtx&, const std::vector<T>&)> backprop;
    const char* tag = nullptr;

    std::vector<T>& grad_buf() {
      if (grad.empty()) grad.assign(value.size(), T(0));
      return grad;
    }
  };

  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, std::vector<T> data, bool requires_grad = false) {
    const std::size_t n =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    if (shape.empty() || n != data.size())
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    const std::size_t n =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(std::vector<std::size_t> shape, T v, bool requires_grad = false) {
    const std::size_t n =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  template <typename Rng>
  static Tensor randn(std::vector<std::size_t> shape, T stddev, Rng& rng,
                      bool requires_grad = false) {
    const std::size_t n =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    std::vector<T> data(n);
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<T>& values() const { return node_->value; }
  const std::vector<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t r, std::size_t c) const {
    if (shape().size() != 2) throw ShapeError("at(r,c) on non-matrix " + shape_str(shape()));
    return node_->value.at(r * shape()[1] + c);
  }

  void set_tag(const char* tag) { node_->tag = tag; }
  const char* tag() const { return node_->tag; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Zeroes the grad buffers of every node reachable from this tensor.
  void zero_grad_graph() {
    for (Node* n : topo_order()) {
      if (!n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), T(0));
    }
  }

  /// Reverse-mode pass from a scalar. Accumulates into the grad buffer of
  /// every requires_grad tensor reachable from this one; calling twice
  /// without a reset doubles the gradients.
  void backward() {
    if (numel() != 1)
      throw ContractError("backward() requires a scalar loss, got " + shape_str(shape()));
    auto order = topo_order();
    BackCtx ctx;
    ctx.buf(node_.get())[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (!n->backprop) continue;
      auto found = ctx.flow.find(n);
      if (found == ctx.flow.end()) continue;
      n->backprop(ctx, found->second);
    }
    for (Node* n : order) {
      if (!n->requires_grad) continue;
      auto found = ctx.flow.find(n);
      if (found == ctx.flow.end()) continue;
      auto& g = n->grad_buf();
      const auto& f = found->second;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += f[i];
    }
  }

  /// Reports the tag of the first reachable node (in topological order)
  /// holding a non-finite value, or nullptr if all values are finite.
  const char* first_non_finite() {
    for (Node* n : topo_order()) {
      for (const T v : n->value) {
        if (!std::isfinite(static_cast<double>(v))) return n->tag ? n->tag : "(untagged tensor)";
      }
    }
    return nullptr;
  }

  NodePtr node() const { return node_; }

  static Tensor wrap(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  // Iterative post-order DFS; parents precede children in the result.
  std::vector<Node*> topo_order() const {
    std::vector<Node*> order;
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  NodePtr node_;
};

namespace detail {

template <typename T>
typename Tensor<T>::NodePtr make_node(std::vector<std::size_t> shape, std::vector<T> value,
                                      std::vector<typename Tensor<T>::NodePtr> parents) {
  auto n = std::make_shared<typename Tensor<T>::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->parents = std::move(parents);
  return n;
}

template <typename T>
std::size_t last_dim(const Tensor<T>& t) {
  return t.shape().back();
}

}  // namespace detail

/// Standard matrix product of two rank-2 tensors.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  std::vector<T> out(m * p, T(0));
  detail::mm_nn(a.values().data(), b.values().data(), out.data(), m, k, p);
  auto node = detail::make_node<T>({m, p}, std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    node->backprop = [an, bn, m, k, p](typename Tensor<T>::BackCtx& ctx,
                                       const std::vector<T>& gout) {
      if (an->requires_grad)
        detail::mm_nt(gout.data(), bn->value.data(), ctx.buf(an.get()).data(), m, p, k);
      if (bn->requires_grad)
        detail::mm_tn(an->value.data(), gout.data(), ctx.buf(bn.get()).data(), m, k, p);
    };
  }
  return Tensor<T>::wrap(node);
}

/// Elementwise sum; also broadcasts a rank-1 bias over the last dimension.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool bias_add = b.shape().size() == 1 && a.shape().size() > 1 &&
                        a.shape().back() == b.shape()[0];
  if (!bias_add && a.shape() != b.shape())
    throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  std::vector<T> out(a.values());
  const std::size_t d = b.numel();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[bias_add ? i % d : i];
  auto node = detail::make_node<T>(a.shape(), std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    node->backprop = [an, bn, bias_add, d](typename Tensor<T>::BackCtx& ctx,
                                           const std::vector<T>& gout) {
      if (an->requires_grad) {
        auto& ga = ctx.buf(an.get());
        for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
      }
      if (bn->requires_grad) {
        auto& gb = ctx.buf(bn.get());
        for (std::size_t i = 0; i < gout.size(); ++i) gb[bias_add ? i % d : i] += gout[i];
      }
    };
  }
  return Tensor<T>::wrap(node);
}

/// Elementwise (Hadamard) product of same-shape tensors.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto node = detail::make_node<T>(a.shape(), std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    node->backprop = [an, bn](typename Tensor<T>::BackCtx& ctx, const std::vector<T>& gout) {
      if (an->requires_grad) {
        auto& ga = ctx.buf(an.get());
        for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& gb = ctx.buf(bn.get());
        for (std::size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i] * an->value[i];
      }
    };
  }
  return Tensor<T>::wrap(node);
}

/// Multiplication by a compile-time-known constant (not a tape leaf).
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  auto node = detail::make_node<T>(a.shape(), std::move(out), {a.node()});
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, c](typename Tensor<T>::BackCtx& ctx, const std::vector<T>& gout) {
      auto& ga = ctx.buf(an.get());
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * c;
    };
  }
  return Tensor<T>::wrap(node);
}

/// Sum of all elements, as a scalar tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (const T v : a.values()) acc += v;
  auto node = detail::make_node<T>({1}, {acc}, {a.node()});
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an](typename Tensor<T>::BackCtx& ctx, const std::vector<T>& gout) {
      auto& ga = ctx.buf(an.get());
      for (auto& g : ga) g += gout[0];
    };
  }
  return Tensor<T>::wrap(node);
}

/// Softmax over the last axis, stabilized by max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  const std::size_t d = detail::last_dim(a);
  if (d < 1) throw ShapeError("softmax: empty last axis");
  std::vector<T> out(a.numel());
  const std::size_t rows = a.numel() / d;
  for (std::size_t r = 0; r < rows; ++r)
    detail::softmax_row(a.values().data() + r * d, out.data() + r * d, d);
  auto node = detail::make_node<T>(a.shape(), std::move(out), {a.node()});
  if (node->requires_grad) {
    auto an = a.node();
    auto self = node.get();
    node->backprop = [an, self, d, rows](typename Tensor<T>::BackCtx& ctx,
                                         const std::vector<T>& gout) {
      auto& ga = ctx.buf(an.get());
      for (std::size_t r = 0; r < rows; ++r) {
        const T* s = self->value.data() + r * d;
        const T* go = gout.data() + r * d;
        T dot = 0;
        for (std::size_t i = 0; i < d; ++i) dot += go[i] * s[i];
        T* g = ga.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) g[i] += s[i] * (go[i] - dot);
      }
    };
  }
  return Tensor<T>::wrap(node);
}

/// Layer normalization over the last axis followed by a learned affine map.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t d = detail::last_dim(x);
  if (gain.shape() != std::vector<std::size_t>{d} || bias.shape() != std::vector<std::size_t>{d})
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  // Cached per-row statistics for the backward pass.
  auto means = std::make_shared<std::vector<T>>(rows);
  auto inv_stds = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.values().data() + r * d;
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += in[i];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const T c = in[i] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv_std = T(1) / std::sqrt(var + eps);
    (*means)[r] = mean;
    (*inv_stds)[r] = inv_std;
    T* o = out.data() + r * d;
    for (std::size_t i = 0; i < d; ++i)
      o[i] = (in[i] - mean) * inv_std * gain.values()[i] + bias.values()[i];
  }
  auto node = detail::make_node<T>(x.shape(), std::move(out), {x.node(), gain.node(), bias.node()});
  if (node->requires_grad) {
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    node->backprop = [xn, gn, bn, means, inv_stds, d, rows](typename Tensor<T>::BackCtx& ctx,
                                                            const std::vector<T>& gout) {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xn->value.data() + r * d;
        const T* go = gout.data() + r * d;
        const T mean = (*means)[r], inv_std = (*inv_stds)[r];
        if (gn->requires_grad) {
          auto& gg = ctx.buf(gn.get());
          for (std::size_t i = 0; i < d; ++i) gg[i] += go[i] * (in[i] - mean) * inv_std;
        }
        if (bn->requires_grad) {
          auto& gb = ctx.buf(bn.get());
          for (std::size_t i = 0; i < d; ++i) gb[i] += go[i];
        }
        if (xn->requires_grad) {
          auto& gx = ctx.buf(xn.get());
          // dL/dx for x_hat = (x - mu) * inv_std:  inv_std * (dy - mean(dy) - x_hat * mean(dy * x_hat))
          T sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t i = 0; i < d; ++i) {
            const T dy = go[i] * gn->value[i];
            const T xhat = (in[i] - mean) * inv_std;
            sum_dy += dy;
            sum_dy_xhat += dy * xhat;
          }
          const T inv_d = T(1) / static_cast<T>(d);
          T* g = gx.data() + r * d;
          for (std::size_t i = 0; i < d; ++i) {
            const T dy = go[i] * gn->value[i];
            const T xhat = (in[i] - mean) * inv_std;
            g[i] += inv_std * (dy - sum_dy * inv_d - xhat * sum_dy_xhat * inv_d);
          }
        }
      }
    };
  }
  return Tensor<T>::wrap(node);
}

/// Row lookup: out[t] = table[ids[t]]. Gradients accumulate into looked-up rows.
template <typename T>
Tensor<T> embedding(const std::vector<int>& ids, const Tensor<T>& table) {
  if (table.shape().size() != 2)
    throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  for (std::size_t t = 0; t < ids.size(); ++t)
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= v)
      throw IndexError("embedding: id " + std::to_string(ids[t]) + " at position " +
                       std::to_string(t) + " outside table of " + std::to_string(v) + " rows");
  std::vector<T> out(ids.size() * d);
  for (std::size_t t = 0; t < ids.size(); ++t)
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[t]) * d, d,
                out.data() + t * d);
  auto node = detail::make_node<T>({ids.size(), d}, std::move(out), {table.node()});
  if (node->requires_grad) {
    auto tn = table.node();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    node->backprop = [tn, ids_copy, d](typename Tensor<T>::BackCtx& ctx,
                                       const std::vector<T>& gout) {
      auto& gt = ctx.buf(tn.get());
      for (std::size_t t = 0; t < ids_copy->size(); ++t) {
        T* row = gt.data() + static_cast<std::size_t>((*ids_copy)[t]) * d;
        const T* go = gout.data() + t * d;
        for (std::size_t i = 0; i < d; ++i) row[i] += go[i];
      }
    };
  }
  return Tensor<T>::wrap(node);
}

/// Copying row slice [r0, r1) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
  if (a.shape().size() != 2) throw ShapeError("slice_rows: rank-2 input required");
  const std::size_t m = a.shape()[0], d = a.shape()[1];
  if (r0 > r1 || r1 > m)
    throw IndexError("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                     ") outside " + shape_str(a.shape()));
  std::vector<T> out(a.values().begin() + r0 * d, a.values().begin() + r1 * d);
  auto node = detail::make_node<T>({r1 - r0, d}, std::move(out), {a.node()});
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, r0, d](typename Tensor<T>::BackCtx& ctx, const std::vector<T>& gout) {
      auto& ga = ctx.buf(an.get());
      for (std::size_t i = 0; i < gout.size(); ++i) ga[r0 * d + i] += gout[i];
    };
  }
  return Tensor<T>::wrap(node);
}

/// Copying column slice [c0, c1) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
  if (a.shape().size() != 2) throw ShapeError("slice_cols: rank-2 input required");
  const std::size_t m = a.shape()[0], d = a.shape()[1];
  if (c0 > c1 || c1 > d)
    throw IndexError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") outside " + shape_str(a.shape()));
  const std::size_t w = c1 - c0;
  std::vector<T> out(m * w);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(a.values().data() + r * d + c0, w, out.data() + r * w);
  auto node = detail::make_node<T>({m, w}, std::move(out), {a.node()});
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, c0, d, w, m](typename Tensor<T>::BackCtx& ctx,
                                       const std::vector<T>& gout) {
      auto& ga = ctx.buf(an.get());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t i = 0; i < w; ++i) ga[r * d + c0 + i] += gout[r * w + i];
    };
  }
  return Tensor<T>::wrap(node);
}

/// Copying 2-D transpose.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose: rank-2 input required");
  const std::size_t m = a.shape()[0], d = a.shape()[1];
  std::vector<T> out(m * d);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c * m + r] = a.values()[r * d + c];
  auto node = detail::make_node<T>({d, m}, std::move(out), {a.node()});
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, m, d](typename Tensor<T>::BackCtx& ctx, const std::vector<T>& gout) {
      auto& ga = ctx.buf(an.get());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += gout[c * m + r];
    };
  }
  return Tensor<T>::wrap(node);
}

/// Concatenation of matrices along rows (axis 0).
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t d = parts[0].shape().at(1);
  std::size_t m = 0;
  std::vector<typename Tensor<T>::NodePtr> parents;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[1] != d)
      throw ShapeError("concat_rows: incompatible part " + shape_str(p.shape()));
    m += p.shape()[0];
    parents.push_back(p.node());
  }
  std::vector<T> out;
  out.reserve(m * d);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  auto node = detail::make_node<T>({m, d}, std::move(out), parents);
  if (node->requires_grad) {
    auto parent_nodes = std::make_shared<std::vector<typename Tensor<T>::NodePtr>>();
    for (const auto& p : parts) parent_nodes->push_back(p.node());
    node->backprop = [parent_nodes](typename Tensor<T>::BackCtx& ctx,
                                    const std::vector<T>& gout) {
      std::size_t off = 0;
      for (const auto& pn : *parent_nodes) {
        const std::size_t n = pn->value.size();
        if (pn->requires_grad) {
          auto& g = ctx.buf(pn.get());
          for (std::size_t i = 0; i < n; ++i) g[i] += gout[off + i];
        }
        off += n;
      }
    };
  }
  return Tensor<T>::wrap(node);
}

/// Concatenation of matrices along columns (axis 1).
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts[0].shape().at(0);
  std::size_t d = 0;
  std::vector<typename Tensor<T>::NodePtr> parents;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != m)
      throw ShapeError("concat_cols: incompatible part " + shape_str(p.shape()));
    d += p.shape()[1];
    parents.push_back(p.node());
  }
  std::vector<T> out(m * d);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(p.values().data() + r * w, w, out.data() + r * d + col);
    col += w;
  }
  auto node = detail::make_node<T>({m, d}, std::move(out), parents);
  if (node->requires_grad) {
    auto parent_nodes = std::make_shared<std::vector<typename Tensor<T>::NodePtr>>();
    for (const auto& p : parts) parent_nodes->push_back(p.node());
    node->backprop = [parent_nodes, m, d](typename Tensor<T>::BackCtx& ctx,
                                          const std::vector<T>& gout) {
      std::size_t col = 0;
      for (const auto& pn : *parent_nodes) {
        const std::size_t w = pn->shape[1];
        if (pn->requires_grad) {
          auto& g = ctx.buf(pn.get());
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t i = 0; i < w; ++i) g[r * w + i] += gout[r * d + col + i];
        }
        col += w;
      }
    };
  }
  return Tensor<T>::wrap(node);
}

/// Same data under a new shape (copying; gradient passes through unchanged).
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<std::size_t> new_shape) {
  const std::size_t n =
      std::accumulate(new_shape.begin(), new_shape.end(), std::size_t{1}, std::multiplies<>());
  if (n != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(new_shape));
  auto node = detail::make_node<T>(std::move(new_shape), a.values(), {a.node()});
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an](typename Tensor<T>::BackCtx& ctx, const std::vector<T>& gout) {
      auto& ga = ctx.buf(an.get());
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
    };
  }
  return Tensor<T>::wrap(node);
}

/// Gaussian error linear unit (exact erf form).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_scalar(a.values()[i]);
  auto node = detail::make_node<T>(a.shape(), std::move(out), {a.node()});
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an](typename Tensor<T>::BackCtx& ctx, const std::vector<T>& gout) {
      auto& ga = ctx.buf(an.get());
      for (std::size_t i = 0; i < gout.size(); ++i)
        ga[i] += gout[i] * detail::gelu_grad_scalar(an->value[i]);
    };
  }
  return Tensor<T>::wrap(node);
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`, skipping positions whose target equals `ignore_index`.
/// All positions ignored yields a zero loss with zero gradient.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        int ignore_index) {
  if (logits.shape().size() != 2)
    throw ShapeError("cross_entropy: logits must be rank 2, got " + shape_str(logits.shape()));
  const std::size_t rows = logits.shape()[0], v = logits.shape()[1];
  if (targets.size() != rows)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " logit rows");
  std::size_t count = 0;
  T total = 0;
  auto probs = std::make_shared<std::vector<T>>(rows * v, T(0));
  for (std::size_t t = 0; t < rows; ++t) {
    const int y = targets[t];
    if (y == ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= v)
      throw IndexError("cross_entropy: target " + std::to_string(y) + " at position " +
                       std::to_string(t) + " outside vocab of " + std::to_string(v));
    const T* row = logits.values().data() + t * v;
    T* prow = probs->data() + t * v;
    detail::softmax_row(row, prow, v);
    T mx = row[0];
    for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, row[i]);
    T lse = 0;
    for (std::size_t i = 0; i < v; ++i) lse += std::exp(row[i] - mx);
    total += mx + std::log(lse) - row[static_cast<std::size_t>(y)];
    ++count;
  }
  const T loss = count ? total / static_cast<T>(count) : T(0);
  auto node = detail::make_node<T>({1}, {loss}, {logits.node()});
  if (node->requires_grad) {
    auto ln = logits.node();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    node->backprop = [ln, tgt, probs, ignore_index, v, count](typename Tensor<T>::BackCtx& ctx,
                                                              const std::vector<T>& gout) {
      if (count == 0) return;
      auto& gl = ctx.buf(ln.get());
      const T scale = gout[0] / static_cast<T>(count);
      for (std::size_t t = 0; t < tgt->size(); ++t) {
        const int y = (*tgt)[t];
        if (y == ignore_index) continue;
        const T* prow = probs->data() + t * v;
        T* grow = gl.data() + t * v;
        for (std::size_t i = 0; i < v; ++i) grow[i] += scale * prow[i];
        grow[static_cast<std::size_t>(y)] -= scale;
      }
    };
  }
  return Tensor<T>::wrap(node);
}

}  // namespace fngram
