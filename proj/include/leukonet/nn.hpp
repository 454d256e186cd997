// Neural layers: strided convolution, batch normalization, max pooling,
// ReLU/PReLU/P-TELU activations, linear layer, bilinear pooling and softmax
// cross-entropy, plus momentum SGD.
//
// Convolution semantics are cross-correlation with zero padding. All kernels
// are deterministic for any thread count: OpenMP only ever splits work across
// independent output slots, and every floating-point reduction runs
// sequentially inside a single thread.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "leukonet/rng.hpp"
#include "leukonet/tensor.hpp"

namespace leukonet {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct Conv2dParams {
  Tensor weight;  // [out_ch, in_ch, kh, kw]
  Tensor bias;    // [out_ch]
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  static Conv2dParams create(std::int64_t out_ch, std::int64_t in_ch, std::int64_t kh,
                             std::int64_t kw, std::int64_t stride, std::int64_t padding,
                             Rng& rng) {
    if (kh < 1 || kw < 1 || stride < 1 || padding < 0)
      throw ContractError("conv2d: kernel/stride/padding out of range");
    const Real std_dev = std::sqrt(Real(2) / static_cast<Real>(in_ch * kh * kw));
    std::vector<Real> w(static_cast<std::size_t>(out_ch * in_ch * kh * kw));
    for (auto& v : w) v = static_cast<Real>(rng.normal()) * std_dev;
    Conv2dParams p;
    p.weight = Tensor::from_data({out_ch, in_ch, kh, kw}, std::move(w), true);
    p.bias = Tensor::zeros({out_ch}, true);
    p.stride = stride;
    p.padding = padding;
    return p;
  }

  std::int64_t out_channels() const { return weight.dim(0); }
  std::int64_t in_channels() const { return weight.dim(1); }
};

namespace detail {

// col is [in_ch*kh*kw] x [oh*ow], row-major.
inline void im2col(const Real* x, std::int64_t c, std::int64_t h, std::int64_t w,
                   std::int64_t kh, std::int64_t kw, std::int64_t stride,
                   std::int64_t pad, std::int64_t oh, std::int64_t ow, Real* col) {
  const std::int64_t P = oh * ow;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (std::int64_t r = 0; r < kh; ++r) {
      for (std::int64_t q = 0; q < kw; ++q) {
        Real* dst = col + ((ci * kh + r) * kw + q) * P;
        for (std::int64_t i = 0; i < oh; ++i) {
          const std::int64_t src_r = i * stride + r - pad;
          if (src_r < 0 || src_r >= h) {
            std::fill(dst + i * ow, dst + (i + 1) * ow, Real(0));
            continue;
          }
          const Real* src_row = x + (ci * h + src_r) * w;
          for (std::int64_t j = 0; j < ow; ++j) {
            const std::int64_t src_c = j * stride + q - pad;
            dst[i * ow + j] = (src_c < 0 || src_c >= w) ? Real(0) : src_row[src_c];
          }
        }
      }
    }
  }
}

inline void col2im_add(const Real* col, std::int64_t c, std::int64_t h, std::int64_t w,
                       std::int64_t kh, std::int64_t kw, std::int64_t stride,
                       std::int64_t pad, std::int64_t oh, std::int64_t ow, Real* x) {
  const std::int64_t P = oh * ow;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (std::int64_t r = 0; r < kh; ++r) {
      for (std::int64_t q = 0; q < kw; ++q) {
        const Real* src = col + ((ci * kh + r) * kw + q) * P;
        for (std::int64_t i = 0; i < oh; ++i) {
          const std::int64_t dst_r = i * stride + r - pad;
          if (dst_r < 0 || dst_r >= h) continue;
          Real* dst_row = x + (ci * h + dst_r) * w;
          for (std::int64_t j = 0; j < ow; ++j) {
            const std::int64_t dst_c = j * stride + q - pad;
            if (dst_c >= 0 && dst_c < w) dst_row[dst_c] += src[i * ow + j];
          }
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  if (x.ndim() != 4)
    throw ShapeError("conv2d: input must be n x c x h x w, got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t co = p.weight.dim(0), ci = p.weight.dim(1);
  const std::int64_t kh = p.weight.dim(2), kw = p.weight.dim(3);
  if (c != ci)
    throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                     " do not match weight " + shape_str(p.weight.shape()));
  const std::int64_t oh = (h + 2 * p.padding - kh) / p.stride + 1;
  const std::int64_t ow = (w + 2 * p.padding - kw) / p.stride + 1;
  if (h + 2 * p.padding < kh || w + 2 * p.padding < kw || oh < 1 || ow < 1)
    throw ShapeError("conv2d: kernel " + shape_str(p.weight.shape()) +
                     " does not fit input " + shape_str(x.shape()));

  const std::int64_t K = ci * kh * kw, P = oh * ow;
  const bool record = x.requires_grad() || p.weight.requires_grad() || p.bias.requires_grad();

  std::vector<Real> out(static_cast<std::size_t>(n * co * P));
  auto cols = std::make_shared<std::vector<std::vector<Real>>>();
  if (record) cols->resize(static_cast<std::size_t>(n));

  const Real* xd = x.data().data();
  const Real* wd = p.weight.data().data();
  const Real* bd = p.bias.data().data();
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < n; ++s) {
    std::vector<Real> local_col;
    std::vector<Real>& col = record ? (*cols)[static_cast<std::size_t>(s)] : local_col;
    col.resize(static_cast<std::size_t>(K * P));
    detail::im2col(xd + s * c * h * w, c, h, w, kh, kw, p.stride, p.padding, oh, ow,
                   col.data());
    Real* out_s = out.data() + s * co * P;
    detail::gemm_nn(co, P, K, wd, col.data(), out_s, false);
    for (std::int64_t oc = 0; oc < co; ++oc) {
      const Real b = bd[oc];
      Real* row = out_s + oc * P;
      for (std::int64_t j = 0; j < P; ++j) row[j] += b;
    }
  }

  const std::int64_t stride = p.stride, pad = p.padding;
  auto wnode = p.weight.node_ptr();
  return Tensor::make_op(
      {n, co, oh, ow}, std::move(out), {x, p.weight, p.bias},
      [n, c, h, w, co, kh, kw, K, P, oh, ow, stride, pad, cols,
       wnode](const Real* adj, const std::vector<Real*>& pa) {
        if (pa[0]) {
#pragma omp parallel for schedule(static)
          for (std::int64_t s = 0; s < n; ++s) {
            std::vector<Real> dcol(static_cast<std::size_t>(K * P));
            detail::gemm_tn(K, P, co, wnode->data.data(), adj + s * co * P, dcol.data(),
                            false);
            detail::col2im_add(dcol.data(), c, h, w, kh, kw, stride, pad, oh, ow,
                               pa[0] + s * c * h * w);
          }
        }
        if (pa[1]) {
#pragma omp parallel for schedule(static)
          for (std::int64_t oc = 0; oc < co; ++oc) {
            Real* dw_row = pa[1] + oc * K;
            for (std::int64_t s = 0; s < n; ++s) {
              const Real* dys = adj + (s * co + oc) * P;
              const Real* col = (*cols)[static_cast<std::size_t>(s)].data();
              for (std::int64_t k = 0; k < K; ++k) {
                const Real* ck = col + k * P;
                Real acc = 0;
                for (std::int64_t j = 0; j < P; ++j) acc += dys[j] * ck[j];
                dw_row[k] += acc;
              }
            }
          }
        }
        if (pa[2]) {
          for (std::int64_t oc = 0; oc < co; ++oc) {
            Real acc = 0;
            for (std::int64_t s = 0; s < n; ++s) {
              const Real* dys = adj + (s * co + oc) * P;
              for (std::int64_t j = 0; j < P; ++j) acc += dys[j];
            }
            pa[2][oc] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

struct BatchNormParams {
  Tensor gamma, beta;               // trainable, [ch]
  Tensor running_mean, running_var; // buffers, [ch]
  Real momentum = Real(0.1);
  Real epsilon = Real(1e-5);

  static BatchNormParams create(std::int64_t ch, Real momentum = Real(0.1),
                                Real epsilon = Real(1e-5)) {
    if (momentum <= 0 || momentum > 1)
      throw ContractError("batchnorm: momentum must be in (0, 1]");
    if (epsilon < 0) throw ContractError("batchnorm: epsilon must be >= 0");
    BatchNormParams p;
    p.gamma = Tensor::full({ch}, Real(1), true);
    p.beta = Tensor::zeros({ch}, true);
    p.running_mean = Tensor::zeros({ch});
    p.running_var = Tensor::full({ch}, Real(1));
    p.momentum = momentum;
    p.epsilon = epsilon;
    return p;
  }
};

// Training mode normalizes with per-channel batch statistics (biased
// variance) and updates the running statistics with an exponential moving
// average (unbiased variance, the usual convention). Eval mode is a fixed
// affine map from the running statistics and mutates nothing.
inline Tensor batchnorm2d(const Tensor& x, BatchNormParams& p, bool training) {
  if (x.ndim() != 4)
    throw ShapeError("batchnorm2d: input must be n x c x h x w, got " +
                     shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != p.gamma.dim(0))
    throw ShapeError("batchnorm2d: channel mismatch: input " + shape_str(x.shape()) +
                     ", gamma " + shape_str(p.gamma.shape()));
  const std::int64_t m = n * h * w;
  const std::int64_t plane = h * w;
  const Real* xd = x.data().data();
  const Real* gd = p.gamma.data().data();
  const Real* bd = p.beta.data().data();

  std::vector<Real> out(static_cast<std::size_t>(n * c * plane));

  if (!training) {
    const Real* rm = p.running_mean.data().data();
    const Real* rv = p.running_var.data().data();
    auto inv = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(c));
    auto mean = std::make_shared<std::vector<Real>>(rm, rm + c);
    for (std::int64_t ch = 0; ch < c; ++ch)
      (*inv)[static_cast<std::size_t>(ch)] = Real(1) / std::sqrt(rv[ch] + p.epsilon);
#pragma omp parallel for schedule(static)
    for (std::int64_t sc = 0; sc < n * c; ++sc) {
      const std::int64_t ch = sc % c;
      const Real iv = (*inv)[static_cast<std::size_t>(ch)];
      const Real mu = (*mean)[static_cast<std::size_t>(ch)];
      const Real g = gd[ch], b = bd[ch];
      const Real* src = xd + sc * plane;
      Real* dst = out.data() + sc * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - mu) * iv + b;
    }
    auto xn = x.node_ptr();
    auto gn = p.gamma.node_ptr();
    return Tensor::make_op(
        x.shape(), std::move(out), {x, p.gamma, p.beta},
        [n, c, plane, xn, gn, inv, mean](const Real* adj, const std::vector<Real*>& pa) {
          for (std::int64_t sc = 0; sc < n * c; ++sc) {
            const std::int64_t ch = sc % c;
            const Real iv = (*inv)[static_cast<std::size_t>(ch)];
            const Real mu = (*mean)[static_cast<std::size_t>(ch)];
            const Real* g = adj + sc * plane;
            const Real* src = xn->data.data() + sc * plane;
            if (pa[0]) {
              Real* dx = pa[0] + sc * plane;
              const Real giv = gn->data[static_cast<std::size_t>(ch)] * iv;
              for (std::int64_t i = 0; i < plane; ++i) dx[i] += giv * g[i];
            }
            if (pa[1]) {
              Real acc = 0;
              for (std::int64_t i = 0; i < plane; ++i) acc += g[i] * (src[i] - mu) * iv;
              pa[1][ch] += acc;
            }
            if (pa[2]) {
              Real acc = 0;
              for (std::int64_t i = 0; i < plane; ++i) acc += g[i];
              pa[2][ch] += acc;
            }
          }
        });
  }

  if (m < 2)
    throw ContractError("batchnorm2d: training mode needs n*h*w >= 2 per channel for "
                        "usable statistics, got n*h*w = " + std::to_string(m));

  auto mean = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(c));
  auto inv = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(c));
  std::vector<Real> var(static_cast<std::size_t>(c));
#pragma omp parallel for schedule(static)
  for (std::int64_t ch = 0; ch < c; ++ch) {
    Real acc = 0;
    for (std::int64_t s = 0; s < n; ++s) {
      const Real* src = xd + (s * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
    }
    const Real mu = acc / static_cast<Real>(m);
    Real vacc = 0;
    for (std::int64_t s = 0; s < n; ++s) {
      const Real* src = xd + (s * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const Real d = src[i] - mu;
        vacc += d * d;
      }
    }
    const Real v = vacc / static_cast<Real>(m);
    if (v + p.epsilon <= Real(0))
      throw NumericError("batchnorm2d: zero variance with zero epsilon");
    (*mean)[static_cast<std::size_t>(ch)] = mu;
    var[static_cast<std::size_t>(ch)] = v;
    (*inv)[static_cast<std::size_t>(ch)] = Real(1) / std::sqrt(v + p.epsilon);
  }

  {
    auto rm = p.running_mean.mutable_data();
    auto rv = p.running_var.mutable_data();
    const Real unbias = static_cast<Real>(m) / static_cast<Real>(m - 1);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      rm[ch] = (Real(1) - p.momentum) * rm[ch] +
               p.momentum * (*mean)[static_cast<std::size_t>(ch)];
      rv[ch] = (Real(1) - p.momentum) * rv[ch] +
               p.momentum * var[static_cast<std::size_t>(ch)] * unbias;
    }
  }

#pragma omp parallel for schedule(static)
  for (std::int64_t sc = 0; sc < n * c; ++sc) {
    const std::int64_t ch = sc % c;
    const Real iv = (*inv)[static_cast<std::size_t>(ch)];
    const Real mu = (*mean)[static_cast<std::size_t>(ch)];
    const Real g = gd[ch], b = bd[ch];
    const Real* src = xd + sc * plane;
    Real* dst = out.data() + sc * plane;
    for (std::int64_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - mu) * iv + b;
  }

  auto xn = x.node_ptr();
  auto gn = p.gamma.node_ptr();
  return Tensor::make_op(
      x.shape(), std::move(out), {x, p.gamma, p.beta},
      [n, c, plane, m, xn, gn, mean, inv](const Real* adj, const std::vector<Real*>& pa) {
        // Standard batch-norm backward through the batch statistics.
#pragma omp parallel for schedule(static)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const Real mu = (*mean)[static_cast<std::size_t>(ch)];
          const Real iv = (*inv)[static_cast<std::size_t>(ch)];
          Real sum_dy = 0, sum_dy_xhat = 0;
          for (std::int64_t s = 0; s < n; ++s) {
            const Real* g = adj + (s * c + ch) * plane;
            const Real* src = xn->data.data() + (s * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_dy += g[i];
              sum_dy_xhat += g[i] * (src[i] - mu) * iv;
            }
          }
          if (pa[0]) {
            const Real gamma = gn->data[static_cast<std::size_t>(ch)];
            const Real k = gamma * iv / static_cast<Real>(m);
            for (std::int64_t s = 0; s < n; ++s) {
              const Real* g = adj + (s * c + ch) * plane;
              const Real* src = xn->data.data() + (s * c + ch) * plane;
              Real* dx = pa[0] + (s * c + ch) * plane;
              for (std::int64_t i = 0; i < plane; ++i) {
                const Real xhat = (src[i] - mu) * iv;
                dx[i] += k * (static_cast<Real>(m) * g[i] - sum_dy - xhat * sum_dy_xhat);
              }
            }
          }
          if (pa[1]) pa[1][ch] += sum_dy_xhat;
          if (pa[2]) pa[2][ch] += sum_dy;
        }
      });
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

// Per-window maximum; gradient routes to the first (row-major) maximal
// element of each window.
inline Tensor maxpool2d(const Tensor& x, std::int64_t window, std::int64_t stride) {
  if (x.ndim() != 4)
    throw ShapeError("maxpool2d: input must be n x c x h x w, got " + shape_str(x.shape()));
  if (window < 1 || stride < 1)
    throw ContractError("maxpool2d: window and stride must be >= 1");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window > h || window > w)
    throw ShapeError("maxpool2d: window " + std::to_string(window) +
                     " larger than input " + shape_str(x.shape()));
  const std::int64_t oh = (h - window) / stride + 1;
  const std::int64_t ow = (w - window) / stride + 1;
  const std::int64_t plane = h * w, oplane = oh * ow;

  std::vector<Real> out(static_cast<std::size_t>(n * c * oplane));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(n * c * oplane));
  const Real* xd = x.data().data();
#pragma omp parallel for schedule(static)
  for (std::int64_t sc = 0; sc < n * c; ++sc) {
    const Real* src = xd + sc * plane;
    Real* dst = out.data() + sc * oplane;
    std::int64_t* am = argmax->data() + sc * oplane;
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j = 0; j < ow; ++j) {
        const std::int64_t r0 = i * stride, c0 = j * stride;
        Real best = src[r0 * w + c0];
        std::int64_t best_idx = r0 * w + c0;
        for (std::int64_t r = 0; r < window; ++r)
          for (std::int64_t q = 0; q < window; ++q) {
            const std::int64_t idx = (r0 + r) * w + (c0 + q);
            if (src[idx] > best) {
              best = src[idx];
              best_idx = idx;
            }
          }
        dst[i * ow + j] = best;
        am[i * ow + j] = best_idx;
      }
    }
  }
  return Tensor::make_op(
      {n, c, oh, ow}, std::move(out), {x},
      [n, c, plane, oplane, argmax](const Real* adj, const std::vector<Real*>& pa) {
        if (!pa[0]) return;
#pragma omp parallel for schedule(static)
        for (std::int64_t sc = 0; sc < n * c; ++sc) {
          const Real* g = adj + sc * oplane;
          Real* dx = pa[0] + sc * plane;
          const std::int64_t* am = argmax->data() + sc * oplane;
          for (std::int64_t i = 0; i < oplane; ++i) dx[am[i]] += g[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class ActivationKind { ReLU, PReLU, PTELU };

inline const char* activation_name(ActivationKind k) {
  switch (k) {
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::PReLU: return "prelu";
    case ActivationKind::PTELU: return "ptelu";
  }
  return "?";
}

inline ActivationKind parse_activation(const std::string& s) {
  if (s == "relu") return ActivationKind::ReLU;
  if (s == "prelu") return ActivationKind::PReLU;
  if (s == "ptelu") return ActivationKind::PTELU;
  throw ConfigError("unknown activation '" + s + "' (expected relu|prelu|ptelu)");
}

inline Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0 ? v : Real(0);
  auto xn = x.node_ptr();
  const std::size_t n = out.size();
  return Tensor::make_op(x.shape(), std::move(out), {x},
                         [n, xn](const Real* adj, const std::vector<Real*>& pa) {
                           if (!pa[0]) return;
                           for (std::size_t i = 0; i < n; ++i)
                             if (xn->data[i] > 0) pa[0][i] += adj[i];
                         });
}

// PReLU with one learnable slope per channel; x is n x c x h x w, slope is [c].
inline Tensor prelu(const Tensor& x, const Tensor& slope) {
  if (x.ndim() != 4 || slope.ndim() != 1 || slope.dim(0) != x.dim(1))
    throw ShapeError("prelu: need n x c x h x w input and per-channel slope, got " +
                     shape_str(x.shape()) + " and " + shape_str(slope.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Real* xd = x.data().data();
  const Real* ad = slope.data().data();
  std::vector<Real> out(static_cast<std::size_t>(n * c * plane));
#pragma omp parallel for schedule(static)
  for (std::int64_t sc = 0; sc < n * c; ++sc) {
    const Real a = ad[sc % c];
    const Real* src = xd + sc * plane;
    Real* dst = out.data() + sc * plane;
    for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] >= 0 ? src[i] : a * src[i];
  }
  auto xn = x.node_ptr();
  auto an = slope.node_ptr();
  return Tensor::make_op(
      x.shape(), std::move(out), {x, slope},
      [n, c, plane, xn, an](const Real* adj, const std::vector<Real*>& pa) {
        for (std::int64_t sc = 0; sc < n * c; ++sc) {
          const std::int64_t ch = sc % c;
          const Real a = an->data[static_cast<std::size_t>(ch)];
          const Real* g = adj + sc * plane;
          const Real* src = xn->data.data() + sc * plane;
          if (pa[0]) {
            Real* dx = pa[0] + sc * plane;
            for (std::int64_t i = 0; i < plane; ++i)
              dx[i] += src[i] >= 0 ? g[i] : a * g[i];
          }
          if (pa[1]) {
            Real acc = 0;
            for (std::int64_t i = 0; i < plane; ++i)
              if (src[i] < 0) acc += src[i] * g[i];
            pa[1][ch] += acc;
          }
        }
      });
}

// P-TELU: x for x >= 0, alpha * tanh(beta * x) otherwise; alpha and beta are
// learnable per-channel and kept non-negative by the optimizer step.
inline Tensor ptelu(const Tensor& x, const Tensor& alpha, const Tensor& beta) {
  if (x.ndim() != 4 || alpha.ndim() != 1 || beta.ndim() != 1 ||
      alpha.dim(0) != x.dim(1) || beta.dim(0) != x.dim(1))
    throw ShapeError("ptelu: need n x c x h x w input and per-channel alpha/beta");
  for (Real v : alpha.data())
    if (v < 0) throw ContractError("ptelu: alpha must be non-negative");
  for (Real v : beta.data())
    if (v < 0) throw ContractError("ptelu: beta must be non-negative");
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Real* xd = x.data().data();
  const Real* al = alpha.data().data();
  const Real* be = beta.data().data();
  std::vector<Real> out(static_cast<std::size_t>(n * c * plane));
#pragma omp parallel for schedule(static)
  for (std::int64_t sc = 0; sc < n * c; ++sc) {
    const Real a = al[sc % c], b = be[sc % c];
    const Real* src = xd + sc * plane;
    Real* dst = out.data() + sc * plane;
    for (std::int64_t i = 0; i < plane; ++i)
      dst[i] = src[i] >= 0 ? src[i] : a * std::tanh(b * src[i]);
  }
  auto xn = x.node_ptr();
  auto an = alpha.node_ptr();
  auto bn = beta.node_ptr();
  return Tensor::make_op(
      x.shape(), std::move(out), {x, alpha, beta},
      [n, c, plane, xn, an, bn](const Real* adj, const std::vector<Real*>& pa) {
        for (std::int64_t sc = 0; sc < n * c; ++sc) {
          const std::int64_t ch = sc % c;
          const Real a = an->data[static_cast<std::size_t>(ch)];
          const Real b = bn->data[static_cast<std::size_t>(ch)];
          const Real* g = adj + sc * plane;
          const Real* src = xn->data.data() + sc * plane;
          Real da = 0, db = 0;
          Real* dx = pa[0] ? pa[0] + sc * plane : nullptr;
          for (std::int64_t i = 0; i < plane; ++i) {
            if (src[i] >= 0) {
              if (dx) dx[i] += g[i];
            } else {
              const Real t = std::tanh(b * src[i]);
              const Real sech2 = Real(1) - t * t;
              if (dx) dx[i] += a * b * sech2 * g[i];
              da += t * g[i];
              db += a * src[i] * sech2 * g[i];
            }
          }
          if (pa[1]) pa[1][ch] += da;
          if (pa[2]) pa[2][ch] += db;
        }
      });
}

// Per-channel activation parameters; unused kinds keep empty tensors.
struct ActivationParams {
  ActivationKind kind = ActivationKind::ReLU;
  Tensor prelu_slope;          // [c], init 0.25
  Tensor ptelu_alpha, ptelu_beta;  // [c], init 1, clamped >= 0 after updates

  static ActivationParams create(ActivationKind kind, std::int64_t channels) {
    ActivationParams p;
    p.kind = kind;
    if (kind == ActivationKind::PReLU)
      p.prelu_slope = Tensor::full({channels}, Real(0.25), true);
    if (kind == ActivationKind::PTELU) {
      p.ptelu_alpha = Tensor::full({channels}, Real(1), true);
      p.ptelu_beta = Tensor::full({channels}, Real(1), true);
    }
    return p;
  }

  // Non-negativity clamp, applied after each optimizer step.
  void apply_constraints() {
    if (kind == ActivationKind::PTELU) {
      for (auto& v : ptelu_alpha.mutable_data()) v = std::max(v, Real(0));
      for (auto& v : ptelu_beta.mutable_data()) v = std::max(v, Real(0));
    }
  }
};

inline Tensor activation(const Tensor& x, const ActivationParams& p) {
  switch (p.kind) {
    case ActivationKind::ReLU: return relu(x);
    case ActivationKind::PReLU: return prelu(x, p.prelu_slope);
    case ActivationKind::PTELU: return ptelu(x, p.ptelu_alpha, p.ptelu_beta);
  }
  throw ContractError("activation: unknown kind");
}

// ---------------------------------------------------------------------------
// Linear layer
// ---------------------------------------------------------------------------

struct LinearParams {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static LinearParams create(std::int64_t out, std::int64_t in, Rng& rng) {
    const Real std_dev = std::sqrt(Real(2) / static_cast<Real>(in));
    std::vector<Real> w(static_cast<std::size_t>(out * in));
    for (auto& v : w) v = static_cast<Real>(rng.normal()) * std_dev;
    LinearParams p;
    p.weight = Tensor::from_data({out, in}, std::move(w), true);
    p.bias = Tensor::zeros({out}, true);
    return p;
  }
};

// y = x * W^T + b, x is [n, d], W is [k, d].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(1) ||
      bias.dim(0) != weight.dim(0))
    throw ShapeError("linear: incompatible shapes: x " + shape_str(x.shape()) +
                     ", weight " + shape_str(weight.shape()) + ", bias " +
                     shape_str(bias.shape()));
  const std::int64_t n = x.dim(0), d = x.dim(1), k = weight.dim(0);
  std::vector<Real> out(static_cast<std::size_t>(n * k));
  detail::gemm_nt(n, k, d, x.data().data(), weight.data().data(), out.data(), false);
  const Real* bd = bias.data().data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < k; ++j) out[static_cast<std::size_t>(i * k + j)] += bd[j];
  auto xn = x.node_ptr();
  auto wn = weight.node_ptr();
  return Tensor::make_op(
      {n, k}, std::move(out), {x, weight, bias},
      [n, d, k, xn, wn](const Real* adj, const std::vector<Real*>& pa) {
        if (pa[0]) detail::gemm_nn(n, d, k, adj, wn->data.data(), pa[0], true);
        if (pa[1]) detail::gemm_tn(k, d, n, adj, xn->data.data(), pa[1], true);
        if (pa[2])
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < k; ++j) pa[2][j] += adj[i * k + j];
      });
}

inline Tensor linear(const Tensor& x, const LinearParams& p) {
  return linear(x, p.weight, p.bias);
}

// ---------------------------------------------------------------------------
// Bilinear pooling
// ---------------------------------------------------------------------------

// Per sample: reshape to c x (h*w), form X X^T, then optionally apply the
// elementwise signed square root and L2-normalize the flattened c^2 vector.
// An all-zero feature map skips normalization (the vector stays zero).
inline Tensor bilinear_pool(const Tensor& x, bool signed_sqrt = true, bool l2 = true) {
  if (x.ndim() != 4)
    throw ShapeError("bilinear_pool: input must be n x c x h x w, got " +
                     shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::int64_t cc = c * c;
  std::vector<Real> out(static_cast<std::size_t>(n * cc));
  auto raw = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(n * cc));
  auto norms = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(n));
  const Real* xd = x.data().data();
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < n; ++s) {
    const Real* X = xd + s * c * hw;
    Real* g = raw->data() + s * cc;
    detail::gemm_nt(c, c, hw, X, X, g, false);
    Real* o = out.data() + s * cc;
    for (std::int64_t i = 0; i < cc; ++i) {
      Real v = g[i];
      if (signed_sqrt) v = v >= 0 ? std::sqrt(v) : -std::sqrt(-v);
      o[i] = v;
    }
    Real nrm = 0;
    if (l2) {
      Real acc = 0;
      for (std::int64_t i = 0; i < cc; ++i) acc += o[i] * o[i];
      nrm = std::sqrt(acc);
      if (nrm > 0) {
        const Real inv = Real(1) / nrm;
        for (std::int64_t i = 0; i < cc; ++i) o[i] *= inv;
      } else {
        debuglog::note("bilinear_pool: all-zero feature map, normalization skipped");
      }
    }
    (*norms)[static_cast<std::size_t>(s)] = nrm;
  }
  auto xn = x.node_ptr();
  auto post = std::make_shared<std::vector<Real>>(out);  // normalized output, for backward
  return Tensor::make_op(
      {n, cc}, std::move(out), {x},
      [n, c, hw, cc, signed_sqrt, l2, xn, raw, norms,
       post](const Real* adj, const std::vector<Real*>& pa) {
        if (!pa[0]) return;
#pragma omp parallel for schedule(static)
        for (std::int64_t s = 0; s < n; ++s) {
          const Real* g_out = adj + s * cc;
          const Real* z = post->data() + s * cc;
          const Real* G = raw->data() + s * cc;
          std::vector<Real> du(static_cast<std::size_t>(cc));
          if (l2) {
            const Real nrm = (*norms)[static_cast<std::size_t>(s)];
            if (nrm > 0) {
              Real zdot = 0;
              for (std::int64_t i = 0; i < cc; ++i) zdot += z[i] * g_out[i];
              const Real inv = Real(1) / nrm;
              for (std::int64_t i = 0; i < cc; ++i)
                du[static_cast<std::size_t>(i)] = (g_out[i] - z[i] * zdot) * inv;
            } else {
              for (std::int64_t i = 0; i < cc; ++i)
                du[static_cast<std::size_t>(i)] = g_out[i];
            }
          } else {
            for (std::int64_t i = 0; i < cc; ++i) du[static_cast<std::size_t>(i)] = g_out[i];
          }
          std::vector<Real> dG(static_cast<std::size_t>(cc));
          for (std::int64_t i = 0; i < cc; ++i) {
            Real d = du[static_cast<std::size_t>(i)];
            if (signed_sqrt) {
              const Real a = std::abs(G[i]);
              d = a > 0 ? d / (2 * std::sqrt(a)) : Real(0);
            }
            dG[static_cast<std::size_t>(i)] = d;
          }
          // dX = (dG + dG^T) X
          std::vector<Real> sym(static_cast<std::size_t>(cc));
          for (std::int64_t i = 0; i < c; ++i)
            for (std::int64_t j = 0; j < c; ++j)
              sym[static_cast<std::size_t>(i * c + j)] =
                  dG[static_cast<std::size_t>(i * c + j)] +
                  dG[static_cast<std::size_t>(j * c + i)];
          const Real* X = xn->data.data() + s * c * hw;
          detail::gemm_nn(c, hw, c, sym.data(), X, pa[0] + s * c * hw, true);
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy
// ---------------------------------------------------------------------------

// Weighted mean over the batch of -log softmax(logits)[label]; max-subtraction
// keeps the exponentials bounded. class_weights is an optional per-class
// weighting (empty = uniform); weighted losses are normalized by the total
// weight so the unweighted case stays a plain mean.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                    const std::vector<Real>& class_weights = {}) {
  if (logits.ndim() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be n x k, got " +
                     shape_str(logits.shape()));
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ContractError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                        " labels for batch of " + std::to_string(n));
  if (!class_weights.empty() && static_cast<std::int64_t>(class_weights.size()) != k)
    throw ContractError("softmax_cross_entropy: need one weight per class");
  for (int y : labels)
    if (y < 0 || y >= k)
      throw ContractError("softmax_cross_entropy: label " + std::to_string(y) +
                          " out of range [0, " + std::to_string(k) + ")");
  const Real* ld = logits.data().data();
  auto probs = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(n * k));
  auto weight_of = [&](int y) {
    return class_weights.empty() ? Real(1) : class_weights[static_cast<std::size_t>(y)];
  };
  Real loss = 0, wsum = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const Real* row = ld + i * k;
    Real mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    Real denom = 0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const Real lse = mx + std::log(denom);
    const Real w = weight_of(labels[static_cast<std::size_t>(i)]);
    loss += w * (lse - row[labels[static_cast<std::size_t>(i)]]);
    wsum += w;
    for (std::int64_t j = 0; j < k; ++j)
      (*probs)[static_cast<std::size_t>(i * k + j)] = std::exp(row[j] - lse);
  }
  if (wsum <= 0) throw ContractError("softmax_cross_entropy: total weight is zero");
  loss /= wsum;
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  auto weights_copy = std::make_shared<std::vector<Real>>(class_weights);
  return Tensor::make_op(
      {1}, {loss}, {logits},
      [n, k, wsum, probs, labels_copy,
       weights_copy](const Real* adj, const std::vector<Real*>& pa) {
        if (!pa[0]) return;
        for (std::int64_t i = 0; i < n; ++i) {
          const int y = (*labels_copy)[static_cast<std::size_t>(i)];
          const Real w =
              weights_copy->empty() ? Real(1) : (*weights_copy)[static_cast<std::size_t>(y)];
          const Real scale = adj[0] * w / wsum;
          for (std::int64_t j = 0; j < k; ++j) {
            Real p = (*probs)[static_cast<std::size_t>(i * k + j)];
            if (j == y) p -= Real(1);
            pa[0][i * k + j] += scale * p;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct SgdMomentum {
  Real lr = Real(1e-2);
  Real momentum = Real(0.9);

  struct Slot {
    Tensor param;
    std::vector<Real> velocity;
  };
  std::vector<Slot> slots;

  SgdMomentum() = default;
  SgdMomentum(Real lr_, Real momentum_) : lr(lr_), momentum(momentum_) {
    if (lr < 0) throw ContractError("sgd: learning rate must be non-negative");
  }

  void add_parameter(const Tensor& t) {
    slots.push_back({t, std::vector<Real>(static_cast<std::size_t>(t.size()), Real(0))});
  }

  void add_parameters(const std::vector<Tensor>& ts) {
    for (const auto& t : ts) add_parameter(t);
  }

  void zero_grad() {
    for (auto& s : slots) s.param.zero_grad();
  }

  void step() {
    for (auto& s : slots) {
      auto g = s.param.grad();
      if (g.empty()) continue;
      auto d = s.param.mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        s.velocity[i] = momentum * s.velocity[i] + g[i];
        d[i] -= lr * s.velocity[i];
      }
    }
  }
};

}  // namespace leukonet
