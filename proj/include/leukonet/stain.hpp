// Optical-density conversion and the trainable stain-deconvolution transform.
//
// OD uses base-10 absorbance with a white point of 255 and the clamp
// I -> max(I, 1), so OD values live in [0, log10(255)]. The stain matrix maps
// each OD pixel (a row 3-vector v) to stain quantities q = v * inverse(m);
// gradients flow to both the image and the matrix.
#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "leukonet/rng.hpp"
#include "leukonet/tensor.hpp"

namespace leukonet {

inline constexpr double kOdWhitePoint = 255.0;

// OD = -log10(max(I, 1) / 255), elementwise. Inputs must be in [0, 255].
inline Tensor rgb_to_od(const Tensor& x) {
  for (Real v : x.data())
    if (!(v >= 0 && v <= 255))
      throw RangeError("rgb_to_od: intensity " + std::to_string(v) +
                       " outside [0, 255]");
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = -std::log10(std::max(v, Real(1)) / Real(kOdWhitePoint));
  auto xn = x.node_ptr();
  const std::size_t n = out.size();
  return Tensor::make_op(x.shape(), std::move(out), {x},
                         [n, xn](const Real* adj, const std::vector<Real*>& pa) {
                           if (!pa[0]) return;
                           for (std::size_t i = 0; i < n; ++i) {
                             const Real v = xn->data[i];
                             if (v > 1) pa[0][i] += adj[i] * (Real(-1) / (v * Real(kLn10)));
                           }
                         });
}

// I = 255 * 10^(-od); inverse of rgb_to_od on [1, 255]. Requires od >= 0.
inline Tensor od_to_rgb(const Tensor& od) {
  for (Real v : od.data())
    if (v < 0) throw RangeError("od_to_rgb: negative optical density " + std::to_string(v));
  std::vector<Real> out(od.data().begin(), od.data().end());
  for (auto& v : out) v = Real(kOdWhitePoint) * std::pow(Real(10), -v);
  auto on = std::make_shared<std::vector<Real>>(out);
  const std::size_t n = out.size();
  return Tensor::make_op(od.shape(), std::move(out), {od},
                         [n, on](const Real* adj, const std::vector<Real*>& pa) {
                           if (!pa[0]) return;
                           for (std::size_t i = 0; i < n; ++i)
                             pa[0][i] += adj[i] * (-Real(kLn10) * (*on)[i]);
                         });
}

namespace detail {

inline double det3(const std::array<double, 9>& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

inline std::array<double, 9> inv3(const std::array<double, 9>& m, double det) {
  const double id = 1.0 / det;
  return {
      (m[4] * m[8] - m[5] * m[7]) * id, (m[2] * m[7] - m[1] * m[8]) * id,
      (m[1] * m[5] - m[2] * m[4]) * id, (m[5] * m[6] - m[3] * m[8]) * id,
      (m[0] * m[8] - m[2] * m[6]) * id, (m[2] * m[3] - m[0] * m[5]) * id,
      (m[3] * m[7] - m[4] * m[6]) * id, (m[1] * m[6] - m[0] * m[7]) * id,
      (m[0] * m[4] - m[1] * m[3]) * id};
}

}  // namespace detail

// Trainable 3x3 stain/color-system matrix; each row is one stain's OD color
// direction. Kept invertible after optimizer updates by nudging the diagonal.
struct StainMatrix {
  Tensor m;  // [3, 3]

  static StainMatrix from_values(const std::array<double, 9>& values,
                                 bool trainable = true) {
    StainMatrix s;
    s.m = Tensor::from_data({3, 3}, std::vector<Real>(values.begin(), values.end()),
                            trainable);
    return s;
  }

  std::array<double, 9> values() const {
    std::array<double, 9> v{};
    for (int i = 0; i < 9; ++i) v[static_cast<std::size_t>(i)] = m.data()[i];
    return v;
  }

  double det() const { return detail::det3(values()); }

  // If |det| has collapsed below 1e-8, add 1e-3 * I until the matrix is
  // usable again.
  void ensure_invertible() {
    for (int guard = 0; guard < 64 && std::abs(det()) < 1e-8; ++guard) {
      auto d = m.mutable_data();
      d[0] += Real(1e-3);
      d[4] += Real(1e-3);
      d[8] += Real(1e-3);
    }
  }
};

enum class StainInit { Identity, SeededRandom, Standard };

// Location of the bundled stain-vector constants (9 decimal numbers,
// row-major). Overridable per call for relocated installs.
inline std::string default_stain_file() {
#ifdef LEUKONET_DATA_DIR
  return std::string(LEUKONET_DATA_DIR) + "/standard_stain_od.txt";
#else
  return "data/standard_stain_od.txt";
#endif
}

inline StainMatrix load_stain_matrix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stain matrix file: " + path);
  std::array<double, 9> v{};
  for (int i = 0; i < 9; ++i)
    if (!(in >> v[static_cast<std::size_t>(i)]))
      throw IoError("stain matrix file " + path + " must hold 9 numbers, got " +
                    std::to_string(i));
  return StainMatrix::from_values(v);
}

inline StainMatrix init_stain_matrix(StainInit scheme, Rng* rng = nullptr,
                                     const std::string& standard_file = std::string()) {
  switch (scheme) {
    case StainInit::Identity:
      return StainMatrix::from_values({1, 0, 0, 0, 1, 0, 0, 0, 1});
    case StainInit::Standard:
      return load_stain_matrix_file(standard_file.empty() ? default_stain_file()
                                                          : standard_file);
    case StainInit::SeededRandom: {
      if (!rng) throw ContractError("init_stain_matrix: seeded-random needs an rng");
      std::array<double, 9> v{};
      for (int attempt = 0; attempt < 1000; ++attempt) {
        for (auto& e : v) e = rng->uniform();
        for (int r = 0; r < 3; ++r) {
          double norm = std::sqrt(v[static_cast<std::size_t>(3 * r)] * v[static_cast<std::size_t>(3 * r)] +
                                  v[static_cast<std::size_t>(3 * r + 1)] * v[static_cast<std::size_t>(3 * r + 1)] +
                                  v[static_cast<std::size_t>(3 * r + 2)] * v[static_cast<std::size_t>(3 * r + 2)]);
          if (norm == 0) norm = 1;
          for (int c = 0; c < 3; ++c) v[static_cast<std::size_t>(3 * r + c)] /= norm;
        }
        if (std::abs(detail::det3(v)) >= 0.1) return StainMatrix::from_values(v);
      }
      throw NumericError("init_stain_matrix: failed to draw an invertible matrix");
    }
  }
  throw ContractError("init_stain_matrix: unknown scheme");
}

// q = v * inverse(m) applied to every OD pixel of an n x 3 x h x w tensor.
inline Tensor stain_deconvolve(const Tensor& od, const Tensor& m) {
  if (od.ndim() != 4 || od.dim(1) != 3)
    throw ShapeError("stain_deconvolve: input must be n x 3 x h x w, got " +
                     shape_str(od.shape()));
  if (m.ndim() != 2 || m.dim(0) != 3 || m.dim(1) != 3)
    throw ShapeError("stain_deconvolve: stain matrix must be 3 x 3, got " +
                     shape_str(m.shape()));
  std::array<double, 9> mv{};
  for (int i = 0; i < 9; ++i) mv[static_cast<std::size_t>(i)] = m.data()[i];
  const double det = detail::det3(mv);
  if (std::abs(det) < 1e-8) {
    std::ostringstream os;
    os << "stain_deconvolve: stain matrix near-singular, |det| = " << std::abs(det);
    throw SingularMatrixError(os.str());
  }
  const std::array<double, 9> ainv = detail::inv3(mv, det);

  const std::int64_t n = od.dim(0), h = od.dim(2), w = od.dim(3);
  const std::int64_t plane = h * w;
  const Real* xd = od.data().data();
  std::vector<Real> out(static_cast<std::size_t>(n * 3 * plane));
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < n; ++s) {
    const Real* src = xd + s * 3 * plane;
    Real* dst = out.data() + s * 3 * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      const Real v0 = src[i], v1 = src[plane + i], v2 = src[2 * plane + i];
      dst[i] = static_cast<Real>(v0 * ainv[0] + v1 * ainv[3] + v2 * ainv[6]);
      dst[plane + i] = static_cast<Real>(v0 * ainv[1] + v1 * ainv[4] + v2 * ainv[7]);
      dst[2 * plane + i] = static_cast<Real>(v0 * ainv[2] + v1 * ainv[5] + v2 * ainv[8]);
    }
  }

  auto on = od.node_ptr();
  return Tensor::make_op(
      od.shape(), std::move(out), {od, m},
      [n, plane, ainv, on](const Real* adj, const std::vector<Real*>& pa) {
        // dv = g * A^T per pixel.
        if (pa[0]) {
#pragma omp parallel for schedule(static)
          for (std::int64_t s = 0; s < n; ++s) {
            const Real* g = adj + s * 3 * plane;
            Real* dv = pa[0] + s * 3 * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const Real g0 = g[i], g1 = g[plane + i], g2 = g[2 * plane + i];
              dv[i] += static_cast<Real>(g0 * ainv[0] + g1 * ainv[1] + g2 * ainv[2]);
              dv[plane + i] += static_cast<Real>(g0 * ainv[3] + g1 * ainv[4] + g2 * ainv[5]);
              dv[2 * plane + i] += static_cast<Real>(g0 * ainv[6] + g1 * ainv[7] + g2 * ainv[8]);
            }
          }
        }
        // dM = -A^T (sum over pixels of v^T g) A^T, with A = inverse(m).
        if (pa[1]) {
          std::array<double, 9> dA{};
          for (std::int64_t s = 0; s < n; ++s) {
            const Real* src = on->data.data() + s * 3 * plane;
            const Real* g = adj + s * 3 * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const double v[3] = {src[i], src[plane + i], src[2 * plane + i]};
              const double gg[3] = {g[i], g[plane + i], g[2 * plane + i]};
              for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                  dA[static_cast<std::size_t>(3 * r + c)] += v[r] * gg[c];
            }
          }
          // tmp = A^T * dA, dM = -tmp * A^T
          std::array<double, 9> tmp{};
          for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
              for (int k = 0; k < 3; ++k)
                tmp[static_cast<std::size_t>(3 * r + c)] +=
                    ainv[static_cast<std::size_t>(3 * k + r)] *
                    dA[static_cast<std::size_t>(3 * k + c)];
          for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
              double acc = 0;
              for (int k = 0; k < 3; ++k)
                acc += tmp[static_cast<std::size_t>(3 * r + k)] *
                       ainv[static_cast<std::size_t>(3 * c + k)];
              pa[1][3 * r + c] += static_cast<Real>(-acc);
            }
        }
      });
}

inline Tensor sd_forward(const Tensor& od, const StainMatrix& s) {
  return stain_deconvolve(od, s.m);
}

}  // namespace leukonet
