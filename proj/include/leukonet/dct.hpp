// Frequency branch: orthonormal 2D DCT (type II), cumulative-energy
// thresholding and signed log10 normalization, differentiable end to end.
//
// The transform is a direct separable matrix product against precomputed
// orthonormal bases (images here are small and fixed-size, so exactness wins
// over an FFT). The threshold keeps the magnitude-largest coefficients whose
// cumulative squared magnitude reaches the configured fraction of total
// energy and replaces the rest with replacement_value; with the default
// replacement of 1 the following log10 maps them to 0. Gradients are
// straight-through on kept, unclamped coefficients and zero elsewhere, with
// the mask frozen per forward pass.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <shared_mutex>
#include <vector>

#include "leukonet/tensor.hpp"

namespace leukonet {

struct DctConfig {
  Real energy_fraction = Real(0.95);
  Real replacement_value = Real(1);
  Real log_clamp_floor = Real(1);

  void validate() const {
    if (!(energy_fraction > 0 && energy_fraction <= 1))
      throw ContractError("dct: energy_fraction must be in (0, 1]");
    if (log_clamp_floor < 1)
      throw ContractError("dct: log_clamp_floor must be >= 1");
  }
};

namespace detail {

// Orthonormal DCT-II basis, row-major n x n: T[k][j] = s(k) cos(pi (2j+1) k / 2n).
inline std::shared_ptr<const std::vector<Real>> dct_basis(std::int64_t n) {
  static std::map<std::int64_t, std::shared_ptr<const std::vector<Real>>> cache;
  static std::shared_mutex mutex;
  {
    std::shared_lock lock(mutex);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
  }
  auto basis = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(n * n));
  const double pi = 3.14159265358979323846;
  for (std::int64_t k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / static_cast<double>(n))
                            : std::sqrt(2.0 / static_cast<double>(n));
    for (std::int64_t j = 0; j < n; ++j)
      (*basis)[static_cast<std::size_t>(k * n + j)] = static_cast<Real>(
          s * std::cos(pi * (2.0 * static_cast<double>(j) + 1.0) * static_cast<double>(k) /
                       (2.0 * static_cast<double>(n))));
  }
  std::unique_lock lock(mutex);
  auto [it, inserted] = cache.emplace(n, std::move(basis));
  return it->second;
}

// C = Th * X * Tw^T for one h x w plane.
inline void dct2d_plane(const Real* x, std::int64_t h, std::int64_t w, const Real* th,
                        const Real* tw, Real* out, Real* scratch) {
  gemm_nn(h, w, h, th, x, scratch, false);   // scratch = Th * X
  gemm_nt(h, w, w, scratch, tw, out, false); // out = scratch * Tw^T
}

// X = Th^T * C * Tw.
inline void idct2d_plane(const Real* c, std::int64_t h, std::int64_t w, const Real* th,
                         const Real* tw, Real* out, Real* scratch) {
  gemm_tn(h, w, h, th, c, scratch, false);  // scratch = Th^T * C
  gemm_nn(h, w, w, scratch, tw, out, false);// out = scratch * Tw
}

}  // namespace detail

// Forward orthonormal 2D DCT of an h x w tensor. Linear, so the backward pass
// is the transpose (= inverse) transform.
inline Tensor dct2d(const Tensor& x) {
  if (x.ndim() != 2)
    throw ShapeError("dct2d: input must be h x w, got " + shape_str(x.shape()));
  const std::int64_t h = x.dim(0), w = x.dim(1);
  auto th = detail::dct_basis(h);
  auto tw = detail::dct_basis(w);
  std::vector<Real> out(static_cast<std::size_t>(h * w));
  std::vector<Real> scratch(static_cast<std::size_t>(h * w));
  detail::dct2d_plane(x.data().data(), h, w, th->data(), tw->data(), out.data(),
                      scratch.data());
  return Tensor::make_op({h, w}, std::move(out), {x},
                         [h, w, th, tw](const Real* adj, const std::vector<Real*>& pa) {
                           if (!pa[0]) return;
                           std::vector<Real> scratch(static_cast<std::size_t>(h * w));
                           std::vector<Real> dx(static_cast<std::size_t>(h * w));
                           detail::idct2d_plane(adj, h, w, th->data(), tw->data(),
                                                dx.data(), scratch.data());
                           for (std::int64_t i = 0; i < h * w; ++i) pa[0][i] += dx[i];
                         });
}

// Inverse (type-III orthonormal) 2D DCT.
inline Tensor idct2d(const Tensor& c) {
  if (c.ndim() != 2)
    throw ShapeError("idct2d: input must be h x w, got " + shape_str(c.shape()));
  const std::int64_t h = c.dim(0), w = c.dim(1);
  auto th = detail::dct_basis(h);
  auto tw = detail::dct_basis(w);
  std::vector<Real> out(static_cast<std::size_t>(h * w));
  std::vector<Real> scratch(static_cast<std::size_t>(h * w));
  detail::idct2d_plane(c.data().data(), h, w, th->data(), tw->data(), out.data(),
                       scratch.data());
  return Tensor::make_op({h, w}, std::move(out), {c},
                         [h, w, th, tw](const Real* adj, const std::vector<Real*>& pa) {
                           if (!pa[0]) return;
                           std::vector<Real> scratch(static_cast<std::size_t>(h * w));
                           std::vector<Real> dc(static_cast<std::size_t>(h * w));
                           detail::dct2d_plane(adj, h, w, th->data(), tw->data(),
                                               dc.data(), scratch.data());
                           for (std::int64_t i = 0; i < h * w; ++i) pa[0][i] += dc[i];
                         });
}

namespace detail {

// Kept-mask for one coefficient plane: descending squared magnitude, ties by
// row-major index; keep the minimal prefix whose cumulative energy reaches
// fraction * total.
inline std::vector<std::uint8_t> energy_keep_mask(const Real* c, std::int64_t n,
                                                  Real fraction) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) total += static_cast<double>(c[i]) * c[i];
  if (total <= 0) {
    debuglog::note("energy_threshold: all-zero input, empty keep mask");
    return mask;
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [c](std::int64_t a, std::int64_t b) {
    const double ea = static_cast<double>(c[a]) * c[a];
    const double eb = static_cast<double>(c[b]) * c[b];
    if (ea != eb) return ea > eb;
    return a < b;
  });
  const double target = static_cast<double>(fraction) * total;
  double cum = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t idx = order[static_cast<std::size_t>(i)];
    cum += static_cast<double>(c[idx]) * c[idx];
    mask[static_cast<std::size_t>(idx)] = 1;
    if (cum >= target) break;
  }
  return mask;
}

inline Real signed_log10(Real v, Real floor_) {
  const Real a = std::max(std::abs(v), floor_);
  const Real lg = std::log10(a);
  return v > 0 ? lg : (v < 0 ? -lg : Real(0));
}

}  // namespace detail

// Replaces every coefficient outside the kept set with cfg.replacement_value.
// Returns the output and the kept mask (1 = kept), which tests use to check
// minimality.
inline std::pair<Tensor, std::vector<std::uint8_t>> energy_threshold(const Tensor& c,
                                                                     const DctConfig& cfg) {
  cfg.validate();
  const std::int64_t n = c.size();
  auto mask = detail::energy_keep_mask(c.data().data(), n, cfg.energy_fraction);
  std::vector<Real> out(c.data().begin(), c.data().end());
  for (std::int64_t i = 0; i < n; ++i)
    if (!mask[static_cast<std::size_t>(i)]) out[static_cast<std::size_t>(i)] = cfg.replacement_value;
  return {Tensor::from_data(c.shape(), std::move(out)), std::move(mask)};
}

// out = sign(c) * log10(max(|c|, log_clamp_floor)); odd by construction.
inline Tensor signed_log_normalize(const Tensor& c, const DctConfig& cfg) {
  cfg.validate();
  std::vector<Real> out(c.data().begin(), c.data().end());
  for (auto& v : out) v = detail::signed_log10(v, cfg.log_clamp_floor);
  return Tensor::from_data(c.shape(), std::move(out));
}

// Full frequency branch for an n x ch x h x w batch: per channel
// dct2d -> energy_threshold -> signed_log_normalize. The derivative of
// sign(c) log10(max(|c|, floor)) on kept coefficients with |c| > floor is
// 1 / (|c| ln 10); replaced or clamped positions pass no gradient.
inline Tensor dct_layer_forward(const Tensor& x, const DctConfig& cfg) {
  cfg.validate();
  if (x.ndim() != 4)
    throw ShapeError("dct_layer_forward: input must be n x c x h x w, got " +
                     shape_str(x.shape()));
  const std::int64_t n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t plane = h * w;
  auto th = detail::dct_basis(h);
  auto tw = detail::dct_basis(w);

  const bool record = x.requires_grad();
  std::vector<Real> out(static_cast<std::size_t>(n * ch * plane));
  // grad factor per coefficient: 1/(|c| ln10) on kept unclamped, else 0
  auto gfac = std::make_shared<std::vector<Real>>();
  if (record) gfac->assign(static_cast<std::size_t>(n * ch * plane), Real(0));

  const Real* xd = x.data().data();
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < n * ch; ++p) {
    std::vector<Real> coeff(static_cast<std::size_t>(plane));
    std::vector<Real> scratch(static_cast<std::size_t>(plane));
    detail::dct2d_plane(xd + p * plane, h, w, th->data(), tw->data(), coeff.data(),
                        scratch.data());
    auto mask = detail::energy_keep_mask(coeff.data(), plane, cfg.energy_fraction);
    Real* dst = out.data() + p * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      const Real c = mask[static_cast<std::size_t>(i)] ? coeff[static_cast<std::size_t>(i)]
                                                       : cfg.replacement_value;
      dst[i] = detail::signed_log10(c, cfg.log_clamp_floor);
      if (record && mask[static_cast<std::size_t>(i)] &&
          std::abs(c) > cfg.log_clamp_floor)
        (*gfac)[static_cast<std::size_t>(p * plane + i)] =
            Real(1) / (std::abs(c) * Real(kLn10));
    }
  }

  return Tensor::make_op(
      x.shape(), std::move(out), {x},
      [n, ch, h, w, plane, th, tw, gfac](const Real* adj, const std::vector<Real*>& pa) {
        if (!pa[0]) return;
#pragma omp parallel for schedule(static)
        for (std::int64_t p = 0; p < n * ch; ++p) {
          std::vector<Real> gc(static_cast<std::size_t>(plane));
          std::vector<Real> scratch(static_cast<std::size_t>(plane));
          std::vector<Real> dx(static_cast<std::size_t>(plane));
          for (std::int64_t i = 0; i < plane; ++i)
            gc[static_cast<std::size_t>(i)] =
                adj[p * plane + i] * (*gfac)[static_cast<std::size_t>(p * plane + i)];
          detail::idct2d_plane(gc.data(), h, w, th->data(), tw->data(), dx.data(),
                               scratch.data());
          Real* dst = pa[0] + p * plane;
          for (std::int64_t i = 0; i < plane; ++i) dst[i] += dx[i];
        }
      });
}

}  // namespace leukonet
