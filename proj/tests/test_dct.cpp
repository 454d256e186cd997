#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "leukonet/dct.hpp"
#include "leukonet/rng.hpp"

using namespace leukonet;

namespace {

Tensor randt(Shape shape, Rng& rng, Real lo = -1, Real hi = 1) {
  std::vector<Real> v(static_cast<std::size_t>(numel(shape)));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

// Direct O(N^4) evaluation of the orthonormal DCT-II definition; the oracle
// the matrix-product implementation is checked against.
std::vector<double> dct2d_direct(const std::vector<Real>& x, std::int64_t h,
                                 std::int64_t w) {
  const double pi = 3.14159265358979323846;
  std::vector<double> out(static_cast<std::size_t>(h * w), 0.0);
  for (std::int64_t u = 0; u < h; ++u) {
    for (std::int64_t v = 0; v < w; ++v) {
      const double su = u == 0 ? std::sqrt(1.0 / h) : std::sqrt(2.0 / h);
      const double sv = v == 0 ? std::sqrt(1.0 / w) : std::sqrt(2.0 / w);
      double acc = 0;
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j)
          acc += static_cast<double>(x[static_cast<std::size_t>(i * w + j)]) *
                 std::cos(pi * (2.0 * i + 1.0) * u / (2.0 * h)) *
                 std::cos(pi * (2.0 * j + 1.0) * v / (2.0 * w));
      out[static_cast<std::size_t>(u * w + v)] = su * sv * acc;
    }
  }
  return out;
}

}  // namespace

TEST(Dct2d, ConstantImageConcentratesAtDc) {
  for (std::int64_t n : {4, 8, 16}) {
    const Real v = 2.5;
    Tensor x = Tensor::full({n, n}, v);
    Tensor c = dct2d(x);
    EXPECT_NEAR(c.data()[0], static_cast<Real>(n) * v, 1e-9);
    for (std::int64_t i = 1; i < n * n; ++i) ASSERT_NEAR(c.data()[i], 0, 1e-9);
  }
}

TEST(Dct2d, MatchesDirectSummationOracle) {
  Rng rng(1);
  Tensor x = randt({8, 8}, rng);
  Tensor c = dct2d(x);
  std::vector<Real> xv(x.data().begin(), x.data().end());
  auto expect = dct2d_direct(xv, 8, 8);
  for (int i = 0; i < 64; ++i)
    ASSERT_NEAR(c.data()[i], expect[static_cast<std::size_t>(i)], 1e-10);
}

TEST(Dct2d, ParsevalHolds) {
  Rng rng(2);
  for (std::int64_t n : {8, 16, 32, 64}) {
    Tensor x = randt({n, n}, rng);
    Tensor c = dct2d(x);
    double ex = 0, ec = 0;
    for (std::int64_t i = 0; i < n * n; ++i) {
      ex += static_cast<double>(x.data()[i]) * x.data()[i];
      ec += static_cast<double>(c.data()[i]) * c.data()[i];
    }
    EXPECT_NEAR(ex, ec, 1e-9);
  }
}

TEST(Dct2d, RoundTripBothWays) {
  Rng rng(3);
  Tensor x = randt({8, 8}, rng);
  Tensor back = idct2d(dct2d(x));
  for (int i = 0; i < 64; ++i) ASSERT_NEAR(back.data()[i], x.data()[i], 1e-9);

  Tensor c = randt({8, 8}, rng);
  Tensor back2 = dct2d(idct2d(c));
  for (int i = 0; i < 64; ++i) ASSERT_NEAR(back2.data()[i], c.data()[i], 1e-9);
}

TEST(Dct2d, RectangularRoundTrip) {
  Rng rng(4);
  Tensor x = randt({6, 10}, rng);
  Tensor back = idct2d(dct2d(x));
  for (int i = 0; i < 60; ++i) ASSERT_NEAR(back.data()[i], x.data()[i], 1e-9);
}

TEST(Idct2d, DeltaAtDcGivesConstantOne) {
  const std::int64_t n = 8;
  std::vector<Real> cv(static_cast<std::size_t>(n * n), 0);
  cv[0] = static_cast<Real>(n);
  Tensor img = idct2d(Tensor::from_data({n, n}, cv));
  for (std::int64_t i = 0; i < n * n; ++i) ASSERT_NEAR(img.data()[i], 1, 1e-12);
}

TEST(Idct2d, ZeroCoefficientsGiveZeroImage) {
  Tensor img = idct2d(Tensor::zeros({5, 5}));
  for (Real v : img.data()) EXPECT_DOUBLE_EQ(v, 0);
}

TEST(Dct2d, LinearityProperty) {
  Rng rng(5);
  Tensor x = randt({12, 12}, rng);
  Tensor y = randt({12, 12}, rng);
  const Real a = 1.7, b = -0.4;
  Tensor lhs = dct2d(add(scale(x, a), scale(y, b)));
  Tensor rhs = add(scale(dct2d(x), a), scale(dct2d(y), b));
  for (std::int64_t i = 0; i < lhs.size(); ++i)
    ASSERT_NEAR(lhs.data()[i], rhs.data()[i], 1e-10);
}

TEST(Dct2d, BackwardIsTransposeTransform) {
  Rng rng(6);
  Tensor x0 = randt({7, 7}, rng);
  auto f = [](const Tensor& x) {
    Tensor c = dct2d(x);
    return sum(mul(c, c));
  };
  EXPECT_LT(finite_diff_check(f, x0, Real(1e-5)), 1e-6);
}

// ---------------------------------------------------------------------------
// energy threshold
// ---------------------------------------------------------------------------

TEST(EnergyThreshold, WorkedExample) {
  // energies [100, 4, 0.25], total 104.25, target 99.0375: keep only the 10
  DctConfig cfg;
  Tensor c = Tensor::from_data({1, 3}, {10, 2, 0.5});
  auto [out, mask] = energy_threshold(c, cfg);
  EXPECT_DOUBLE_EQ(out.data()[0], 10);
  EXPECT_DOUBLE_EQ(out.data()[1], 1);
  EXPECT_DOUBLE_EQ(out.data()[2], 1);
  EXPECT_EQ(mask[0], 1);
  EXPECT_EQ(mask[1], 0);
  EXPECT_EQ(mask[2], 0);
}

TEST(EnergyThreshold, FullFractionKeepsEverything) {
  DctConfig cfg;
  cfg.energy_fraction = 1.0;
  Rng rng(7);
  Tensor c = randt({4, 4}, rng, -3, 3);
  auto [out, mask] = energy_threshold(c, cfg);
  for (std::int64_t i = 0; i < 16; ++i) {
    ASSERT_EQ(mask[static_cast<std::size_t>(i)], 1);
    ASSERT_DOUBLE_EQ(out.data()[i], c.data()[i]);
  }
}

TEST(EnergyThreshold, AllEqualKeepsCeilFraction) {
  for (std::int64_t n : {10, 20, 37}) {
    DctConfig cfg;  // 0.95
    Tensor c = Tensor::full({n}, 2);
    auto [out, mask] = energy_threshold(c, cfg);
    std::int64_t kept = 0;
    for (auto m : mask) kept += m;
    EXPECT_EQ(kept, static_cast<std::int64_t>(std::ceil(0.95 * static_cast<double>(n))));
    // ties broken by row-major index order: kept entries form a prefix
    for (std::int64_t i = 1; i < n; ++i)
      ASSERT_LE(mask[static_cast<std::size_t>(i)], mask[static_cast<std::size_t>(i - 1)]);
  }
}

TEST(EnergyThreshold, AllZeroInputGivesEmptyMask) {
  DctConfig cfg;
  Tensor c = Tensor::zeros({3, 3});
  auto [out, mask] = energy_threshold(c, cfg);
  for (auto m : mask) EXPECT_EQ(m, 0);
  for (Real v : out.data()) EXPECT_DOUBLE_EQ(v, 1);
}

TEST(EnergyThreshold, KeptSetIsMinimal) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor c = randt({6, 6}, rng, -5, 5);
    DctConfig cfg;
    auto [out, mask] = energy_threshold(c, cfg);
    double total = 0, kept = 0;
    double smallest_kept = std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < c.size(); ++i) {
      const double e = static_cast<double>(c.data()[i]) * c.data()[i];
      total += e;
      if (mask[static_cast<std::size_t>(i)]) {
        kept += e;
        smallest_kept = std::min(smallest_kept, e);
      }
    }
    ASSERT_GE(kept, cfg.energy_fraction * total - 1e-9);
    ASSERT_LT(kept - smallest_kept, cfg.energy_fraction * total);
  }
}

// ---------------------------------------------------------------------------
// signed log normalization
// ---------------------------------------------------------------------------

TEST(SignedLog, Decades) {
  DctConfig cfg;
  Tensor c = Tensor::from_data({4}, {100, -1000, 1, -0.5});
  Tensor out = signed_log_normalize(c, cfg);
  EXPECT_DOUBLE_EQ(out.data()[0], 2);
  EXPECT_DOUBLE_EQ(out.data()[1], -3);
  EXPECT_DOUBLE_EQ(out.data()[2], 0);   // replacement value maps to 0
  EXPECT_DOUBLE_EQ(out.data()[3], 0);   // magnitude below the floor clamps to 0
}

TEST(SignedLog, OddFunction) {
  Rng rng(9);
  DctConfig cfg;
  for (int i = 0; i < 200; ++i) {
    const Real v = static_cast<Real>(rng.uniform(-50, 50));
    Real f = signed_log_normalize(Tensor::scalar(v), cfg).item();
    Real fneg = signed_log_normalize(Tensor::scalar(-v), cfg).item();
    ASSERT_EQ(f, -fneg);
  }
}

// ---------------------------------------------------------------------------
// full layer
// ---------------------------------------------------------------------------

TEST(DctLayer, ConstantChannelGivesSingleLogCoefficient) {
  const std::int64_t n = 8;
  const Real v = 3;
  Tensor x = Tensor::full({1, 3, n, n}, v);
  DctConfig cfg;
  Tensor out = dct_layer_forward(x, cfg);
  for (int ch = 0; ch < 3; ++ch) {
    const Real* plane = out.data().data() + ch * n * n;
    EXPECT_NEAR(plane[0], std::log10(static_cast<double>(n) * v), 1e-9);
    for (std::int64_t i = 1; i < n * n; ++i) ASSERT_NEAR(plane[i], 0, 1e-12);
  }
}

TEST(DctLayer, ZeroInputGivesZeroOutput) {
  DctConfig cfg;
  Tensor out = dct_layer_forward(Tensor::zeros({2, 3, 6, 6}), cfg);
  for (Real v : out.data()) EXPECT_DOUBLE_EQ(v, 0);
}

TEST(DctLayer, MatchesComposedComponents) {
  Rng rng(10);
  DctConfig cfg;
  Tensor x = randt({2, 3, 8, 8}, rng, -4, 4);
  Tensor fused = dct_layer_forward(x, cfg);
  const std::int64_t plane = 64;
  for (std::int64_t p = 0; p < 6; ++p) {
    std::vector<Real> pv(x.data().begin() + p * plane, x.data().begin() + (p + 1) * plane);
    Tensor coeff = dct2d(Tensor::from_data({8, 8}, pv));
    auto [thresholded, mask] = energy_threshold(coeff, cfg);
    Tensor expect = signed_log_normalize(thresholded, cfg);
    for (std::int64_t i = 0; i < plane; ++i)
      ASSERT_NEAR(fused.data()[p * plane + i], expect.data()[i], 1e-12);
  }
}

TEST(DctLayer, GradientOnMaskStablePositions) {
  // Large-amplitude smooth input: the kept set is dominated by a few strong
  // coefficients, so +-h perturbations do not flip the mask and |c| stays
  // well above the log clamp floor.
  Rng rng(11);
  const std::int64_t n = 6;
  std::vector<Real> v(static_cast<std::size_t>(3 * n * n));
  for (std::int64_t ch = 0; ch < 3; ++ch)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        v[static_cast<std::size_t>(ch * n * n + i * n + j)] =
            static_cast<Real>(40 + 10 * std::sin(0.7 * i) + 8 * std::cos(0.5 * j) +
                              rng.uniform(-0.5, 0.5));
  Tensor x0 = Tensor::from_data({1, 3, n, n}, v);
  DctConfig cfg;
  cfg.energy_fraction = 0.999;
  auto f = [&](const Tensor& x) {
    Tensor y = dct_layer_forward(x, cfg);
    return sum(mul(y, y));
  };
  EXPECT_LT(finite_diff_check(f, x0, Real(1e-5)), 1e-4);
}

TEST(DctLayer, BatchOrderInvariance) {
  Rng rng(12);
  Tensor a = randt({1, 3, 8, 8}, rng, -2, 2);
  Tensor b = randt({1, 3, 8, 8}, rng, -2, 2);
  DctConfig cfg;

  std::vector<Real> ab(a.data().begin(), a.data().end());
  ab.insert(ab.end(), b.data().begin(), b.data().end());
  std::vector<Real> ba(b.data().begin(), b.data().end());
  ba.insert(ba.end(), a.data().begin(), a.data().end());

  Tensor out_ab = dct_layer_forward(Tensor::from_data({2, 3, 8, 8}, ab), cfg);
  Tensor out_ba = dct_layer_forward(Tensor::from_data({2, 3, 8, 8}, ba), cfg);
  const std::int64_t half = 3 * 64;
  for (std::int64_t i = 0; i < half; ++i) {
    ASSERT_EQ(out_ab.data()[i], out_ba.data()[half + i]);
    ASSERT_EQ(out_ab.data()[half + i], out_ba.data()[i]);
  }
}
