// Dense tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations on tensors whose
// inputs require gradients record a dynamic tape: each result node keeps its
// parent handles plus a closure that maps the node's adjoint to parent-adjoint
// contributions. backward() walks the tape in reverse topological order.
// Adjoints of interior nodes live in per-call scratch storage; only leaves
// accumulate into their persistent .grad, so repeated backward calls add up
// exactly once per call.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "leukonet/common.hpp"

namespace leukonet {

namespace detail {

// C[M x N] (+)= A[M x K] * B[K x N], all row-major. The i-k-j order keeps the
// inner loop a contiguous axpy, which the compiler vectorizes.
inline void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K,
                    const Real* A, const Real* B, Real* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, Real(0));
  for (std::int64_t i = 0; i < M; ++i) {
    const Real* a = A + i * K;
    Real* c = C + i * N;
    for (std::int64_t k = 0; k < K; ++k) {
      const Real aik = a[k];
      if (aik == Real(0)) continue;
      const Real* b = B + k * N;
      for (std::int64_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// C[M x N] (+)= A[M x K] * B[N x K]^T. Contiguous dot products.
inline void gemm_nt(std::int64_t M, std::int64_t N, std::int64_t K,
                    const Real* A, const Real* B, Real* C, bool accumulate) {
  for (std::int64_t i = 0; i < M; ++i) {
    const Real* a = A + i * K;
    Real* c = C + i * N;
    for (std::int64_t j = 0; j < N; ++j) {
      const Real* b = B + j * K;
      Real s = 0;
      for (std::int64_t k = 0; k < K; ++k) s += a[k] * b[k];
      c[j] = accumulate ? c[j] + s : s;
    }
  }
}

// C[M x N] (+)= A[K x M]^T * B[K x N].
inline void gemm_tn(std::int64_t M, std::int64_t N, std::int64_t K,
                    const Real* A, const Real* B, Real* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, Real(0));
  for (std::int64_t k = 0; k < K; ++k) {
    const Real* a = A + k * M;
    const Real* b = B + k * N;
    for (std::int64_t i = 0; i < M; ++i) {
      const Real aki = a[i];
      if (aki == Real(0)) continue;
      Real* c = C + i * N;
      for (std::int64_t j = 0; j < N; ++j) c[j] += aki * b[j];
    }
  }
}

}  // namespace detail

struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // persistent; populated for leaves that require grad
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Adds this node's adjoint contribution into parent adjoints. Entries of
  // parent_adj are null for parents that do not require grad.
  std::function<void(const Real* adj, const std::vector<Real*>& parent_adj)>
      backward_fn;
};

namespace detail {
inline thread_local bool grad_mode_enabled = true;
}

// Disables tape recording for its scope; forwards run as plain values.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from_data(std::move(shape), {}, requires_grad, /*fill=*/Real(0));
  }

  static Tensor full(Shape shape, Real value, bool requires_grad = false) {
    return from_data(std::move(shape), {}, requires_grad, value);
  }

  static Tensor scalar(Real value, bool requires_grad = false) {
    return from_data({1}, std::vector<Real>{value}, requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<Real> data,
                          bool requires_grad = false, Real fill = Real(0)) {
    for (auto d : shape) {
      if (d < 1) throw ShapeError("tensor dimensions must be >= 1, got " + shape_str(shape));
    }
    auto n = std::make_shared<TensorNode>();
    const auto count = static_cast<std::size_t>(numel(shape));
    n->shape = std::move(shape);
    if (data.empty()) {
      n->data.assign(count, fill);
    } else {
      if (data.size() != count)
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(n->shape));
      n->data = std::move(data);
    }
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  std::int64_t ndim() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const Real> data() const { return node_->data; }
  std::span<Real> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }

  void set_requires_grad(bool rg) {
    if (!node_->is_leaf)
      throw ContractError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = rg;
  }

  // Gradient of the last backward passes; empty span until one has run.
  std::span<const Real> grad() const { return node_->grad; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
  }

  Real item() const {
    if (size() != 1)
      throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape()));
    return node_->data[0];
  }

  void backward() const;

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

  // Builds a recorded op result. The backward closure is only stored when some
  // parent requires grad; otherwise the node is a plain value and the tape
  // (and anything captured by the closure) is dropped.
  static Tensor make_op(
      Shape shape, std::vector<Real> data, std::vector<Tensor> parents,
      std::function<void(const Real*, const std::vector<Real*>&)> backward_fn) {
    auto n = std::make_shared<TensorNode>();
    if (static_cast<std::int64_t>(data.size()) != numel(shape))
      throw ShapeError("op produced " + std::to_string(data.size()) +
                       " values for shape " + shape_str(shape));
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool rg = false;
    if (detail::grad_mode_enabled)
      for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
      n->is_leaf = false;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node_ptr());
      n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
  }

private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
};

inline void Tensor::backward() const {
  if (size() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  TensorNode* root = node_.get();
  if (!root->requires_grad) return;  // nothing on the tape
  if (root->is_leaf) {
    if (root->grad.empty()) root->grad.assign(root->data.size(), Real(0));
    root->grad[0] += Real(1);
    return;
  }

  // Iterative DFS post-order over recorded (non-leaf) nodes.
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && !p->is_leaf && visited.insert(p).second)
        stack.emplace_back(p, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<TensorNode*, std::vector<Real>> adjoint;
  adjoint[root] = {Real(1)};

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* node = *it;
    auto found = adjoint.find(node);
    if (found == adjoint.end()) continue;  // not reachable from the root
    const std::vector<Real>& adj = found->second;

    std::vector<Real*> parent_adj(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      TensorNode* p = node->parents[i].get();
      if (!p->requires_grad) continue;
      if (p->is_leaf) {
        if (p->grad.empty()) p->grad.assign(p->data.size(), Real(0));
        parent_adj[i] = p->grad.data();
      } else {
        auto& slot = adjoint[p];
        if (slot.empty()) slot.assign(p->data.size(), Real(0));
        parent_adj[i] = slot.data();
      }
    }
    node->backward_fn(adj.data(), parent_adj);
    adjoint.erase(node);  // contribution consumed; free the scratch
  }
}

// ---------------------------------------------------------------------------
// Basic ops
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<Real> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  const std::size_t n = out.size();
  return Tensor::make_op(a.shape(), std::move(out), {a, b},
                         [n](const Real* adj, const std::vector<Real*>& pa) {
                           for (int p = 0; p < 2; ++p)
                             if (pa[p])
                               for (std::size_t i = 0; i < n; ++i) pa[p][i] += adj[i];
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<Real> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  const std::size_t n = out.size();
  return Tensor::make_op(a.shape(), std::move(out), {a, b},
                         [n](const Real* adj, const std::vector<Real*>& pa) {
                           if (pa[0])
                             for (std::size_t i = 0; i < n; ++i) pa[0][i] += adj[i];
                           if (pa[1])
                             for (std::size_t i = 0; i < n; ++i) pa[1][i] -= adj[i];
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<Real> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  const std::size_t n = out.size();
  return Tensor::make_op(a.shape(), std::move(out), {a, b},
                         [n, an, bn](const Real* adj, const std::vector<Real*>& pa) {
                           if (pa[0])
                             for (std::size_t i = 0; i < n; ++i) pa[0][i] += adj[i] * bn->data[i];
                           if (pa[1])
                             for (std::size_t i = 0; i < n; ++i) pa[1][i] += adj[i] * an->data[i];
                         });
}

inline Tensor scale(const Tensor& a, Real s) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  const std::size_t n = out.size();
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [n, s](const Real* adj, const std::vector<Real*>& pa) {
                           if (pa[0])
                             for (std::size_t i = 0; i < n; ++i) pa[0][i] += s * adj[i];
                         });
}

inline Tensor sum(const Tensor& a) {
  Real s = 0;
  for (Real v : a.data()) s += v;
  const std::size_t n = a.data().size();
  return Tensor::make_op({1}, {s}, {a},
                         [n](const Real* adj, const std::vector<Real*>& pa) {
                           if (pa[0])
                             for (std::size_t i = 0; i < n; ++i) pa[0][i] += adj[0];
                         });
}

// Copy that severs the tape: the result never requires grad.
inline Tensor detach(const Tensor& a) {
  return Tensor::from_data(a.shape(), std::vector<Real>(a.data().begin(), a.data().end()));
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  if (numel(new_shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(new_shape));
  std::vector<Real> out(a.data().begin(), a.data().end());
  const std::size_t n = out.size();
  return Tensor::make_op(std::move(new_shape), std::move(out), {a},
                         [n](const Real* adj, const std::vector<Real*>& pa) {
                           if (pa[0])
                             for (std::size_t i = 0; i < n; ++i) pa[0][i] += adj[i];
                         });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> out(static_cast<std::size_t>(m * n));
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return Tensor::make_op(
      {m, n}, std::move(out), {a, b},
      [m, k, n, an, bn](const Real* adj, const std::vector<Real*>& pa) {
        if (pa[0]) detail::gemm_nt(m, k, n, adj, bn->data.data(), pa[0], true);
        if (pa[1]) detail::gemm_tn(k, n, m, an->data.data(), adj, pa[1], true);
      });
}

// Concatenate two n x c x h x w tensors along the channel axis.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: incompatible shapes: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::int64_t plane = a.dim(2) * a.dim(3);
  std::vector<Real> out(static_cast<std::size_t>(n * (ca + cb) * plane));
  const Real* pa_ = a.data().data();
  const Real* pb_ = b.data().data();
  for (std::int64_t s = 0; s < n; ++s) {
    std::memcpy(out.data() + s * (ca + cb) * plane, pa_ + s * ca * plane,
                static_cast<std::size_t>(ca * plane) * sizeof(Real));
    std::memcpy(out.data() + s * (ca + cb) * plane + ca * plane, pb_ + s * cb * plane,
                static_cast<std::size_t>(cb * plane) * sizeof(Real));
  }
  return Tensor::make_op(
      {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
      [n, ca, cb, plane](const Real* adj, const std::vector<Real*>& pa) {
        for (std::int64_t s = 0; s < n; ++s) {
          const Real* g = adj + s * (ca + cb) * plane;
          if (pa[0]) {
            Real* da = pa[0] + s * ca * plane;
            for (std::int64_t i = 0; i < ca * plane; ++i) da[i] += g[i];
          }
          if (pa[1]) {
            Real* db = pa[1] + s * cb * plane;
            for (std::int64_t i = 0; i < cb * plane; ++i) db[i] += g[i];
          }
        }
      });
}

// Concatenate two n x d tensors along the feature axis.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("concat_cols: incompatible shapes: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const std::int64_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  std::vector<Real> out(static_cast<std::size_t>(n * (da + db)));
  for (std::int64_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * (da + db), a.data().data() + i * da,
                static_cast<std::size_t>(da) * sizeof(Real));
    std::memcpy(out.data() + i * (da + db) + da, b.data().data() + i * db,
                static_cast<std::size_t>(db) * sizeof(Real));
  }
  return Tensor::make_op(
      {n, da + db}, std::move(out), {a, b},
      [n, da, db](const Real* adj, const std::vector<Real*>& pa) {
        for (std::int64_t i = 0; i < n; ++i) {
          const Real* g = adj + i * (da + db);
          if (pa[0])
            for (std::int64_t j = 0; j < da; ++j) pa[0][i * da + j] += g[j];
          if (pa[1])
            for (std::int64_t j = 0; j < db; ++j) pa[1][i * db + j] += g[da + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

// Max over elements of |analytic - numeric| / max(1, |numeric|) for a
// scalar-valued f, with central differences of step h. f must be
// deterministic; x is used as the (leaf) differentiation point.
inline Real finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                              Real h) {
  if (h <= 0) throw ContractError("finite_diff_check: step size must be positive");
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = f(x);
  if (y.size() != 1)
    throw ContractError("finite_diff_check: f must return a scalar");
  if (!std::isfinite(y.item()))
    throw NumericError("finite_diff_check: f produced a non-finite value");
  y.backward();
  std::vector<Real> analytic(x.size(), Real(0));
  if (!x.grad().empty())
    analytic.assign(x.grad().begin(), x.grad().end());

  Real max_err = 0;
  auto xd = x.mutable_data();
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const Real orig = xd[i];
    xd[i] = orig + h;
    const Real fp = f(x).item();
    xd[i] = orig - h;
    const Real fm = f(x).item();
    xd[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_check: non-finite perturbation output");
    const Real numeric = (fp - fm) / (2 * h);
    const Real err = std::abs(analytic[static_cast<std::size_t>(i)] - numeric) /
                     std::max(Real(1), std::abs(numeric));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace leukonet
