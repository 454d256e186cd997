#include <gtest/gtest.h>

#include <cmath>

#include "leukonet/nn.hpp"
#include "leukonet/rng.hpp"
#include "leukonet/tensor.hpp"

using namespace leukonet;

namespace {

Tensor t2x2(Real a, Real b, Real c, Real d) {
  return Tensor::from_data({2, 2}, {a, b, c, d});
}

}  // namespace

TEST(Matmul, IdentityLeavesRightFactorUnchanged) {
  Tensor I = t2x2(1, 0, 0, 1);
  Tensor A = t2x2(1, 2, 3, 4);
  Tensor C = matmul(I, A);
  const Real expected[] = {1, 2, 3, 4};
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(C.data()[i], expected[i]);
}

TEST(Matmul, HandComputedProduct) {
  Tensor A = t2x2(1, 2, 3, 4);
  Tensor B = Tensor::from_data({2, 1}, {5, 6});
  Tensor C = matmul(A, B);
  ASSERT_EQ(C.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(C.data()[0], 17);
  EXPECT_DOUBLE_EQ(C.data()[1], 39);
}

TEST(Matmul, ZeroMatrixAnnihilates) {
  Tensor Z = t2x2(0, 0, 0, 0);
  Rng rng(3);
  std::vector<Real> vals(2 * 5);
  for (auto& v : vals) v = rng.normal();
  Tensor B = Tensor::from_data({2, 5}, vals);
  Tensor C = matmul(Z, B);
  for (Real v : C.data()) EXPECT_DOUBLE_EQ(v, 0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor A = Tensor::from_data({2, 3}, std::vector<Real>(6, 1));
  Tensor B = Tensor::from_data({4, 5}, std::vector<Real>(20, 1));
  try {
    matmul(A, B);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,5]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientsMatchClosedForm) {
  // dC/dA = dC * B^T, dC/dB = A^T * dC; with loss = sum(C) the adjoint is all ones.
  Tensor A = t2x2(1, 2, 3, 4);
  Tensor B = t2x2(5, 6, 7, 8);
  A.set_requires_grad(true);
  B.set_requires_grad(true);
  sum(matmul(A, B)).backward();
  // ones * B^T rows: row sums of B rows
  EXPECT_DOUBLE_EQ(A.grad()[0], 11);  // 5 + 6
  EXPECT_DOUBLE_EQ(A.grad()[1], 15);  // 7 + 8
  EXPECT_DOUBLE_EQ(A.grad()[2], 11);
  EXPECT_DOUBLE_EQ(A.grad()[3], 15);
  // A^T * ones: column sums of A
  EXPECT_DOUBLE_EQ(B.grad()[0], 4);  // 1 + 3
  EXPECT_DOUBLE_EQ(B.grad()[1], 4);
  EXPECT_DOUBLE_EQ(B.grad()[2], 6);  // 2 + 4
  EXPECT_DOUBLE_EQ(B.grad()[3], 6);
}

TEST(Backward, SquareGivesPowerRuleGradient) {
  Tensor x = Tensor::scalar(3, true);
  Tensor y = mul(x, x);
  y.backward();
  ASSERT_EQ(x.grad().size(), 1u);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6);
}

TEST(Backward, ReluSubgradientZeroOnNegatives) {
  Tensor x = Tensor::from_data({1, 2, 1, 1}, {-1, 2}, true);
  sum(relu(x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 1);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  EXPECT_THROW(x.backward(), ContractError);
  EXPECT_THROW(scale(x, 2).backward(), ContractError);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x = Tensor::scalar(3, true);
  Tensor y = mul(x, x);
  y.backward();
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12);
  x.zero_grad();
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6);
}

TEST(Backward, SumOfLossesEqualsAccumulatedBackwards) {
  Rng rng(11);
  std::vector<Real> vals(6);
  for (auto& v : vals) v = rng.normal();
  Tensor x1 = Tensor::from_data({2, 3}, vals, true);
  Tensor x2 = Tensor::from_data({2, 3}, vals, true);

  auto loss_a = [](const Tensor& t) { return sum(mul(t, t)); };
  auto loss_b = [](const Tensor& t) { return scale(sum(t), Real(0.5)); };

  add(loss_a(x1), loss_b(x1)).backward();
  loss_a(x2).backward();
  loss_b(x2).backward();
  for (int i = 0; i < 6; ++i)
    EXPECT_NEAR(x1.grad()[i], x2.grad()[i], 1e-12);
}

TEST(Backward, ThreeLayerCompositionMatchesFiniteDifferences) {
  Rng rng(7);
  std::vector<Real> w1v(12), w2v(8), xv(3);
  for (auto& v : w1v) v = rng.normal() * 0.5;
  for (auto& v : w2v) v = rng.normal() * 0.5;
  for (auto& v : xv) v = rng.normal() + 2.0;  // keep relu inputs off the kink
  Tensor w1 = Tensor::from_data({4, 3}, w1v);
  Tensor w2 = Tensor::from_data({2, 4}, w2v);

  auto f = [&](const Tensor& x) {
    Tensor h1 = relu(reshape(matmul(w1, reshape(x, {3, 1})), {1, 4, 1, 1}));
    Tensor h2 = matmul(w2, reshape(h1, {4, 1}));
    return sum(mul(h2, h2));
  };
  Real err = finite_diff_check(f, Tensor::from_data({3}, xv), Real(1e-3));
  EXPECT_LT(err, 1e-4);
}

TEST(FiniteDiff, SumOfSquaresIsTight) {
  Rng rng(21);
  std::vector<Real> xv(10);
  for (auto& v : xv) v = rng.normal();
  auto f = [](const Tensor& x) { return sum(mul(x, x)); };
  Real err = finite_diff_check(f, Tensor::from_data({10}, xv), Real(1e-3));
  EXPECT_LT(err, 1e-8);
}

TEST(FiniteDiff, ConstantFunctionHasZeroError) {
  auto f = [](const Tensor&) { return Tensor::scalar(4); };
  Real err = finite_diff_check(f, Tensor::from_data({3}, {1, 2, 3}), Real(1e-3));
  EXPECT_DOUBLE_EQ(err, 0);
}

TEST(FiniteDiff, MaxpoolAwayFromTies) {
  // Distinct values keep the argmax stable under +-h perturbations.
  std::vector<Real> xv = {0.1, 0.9, 0.35, 0.6, 0.2, 0.75, 0.5, 0.05,
                          0.45, 0.85, 0.15, 0.65, 0.3, 0.7, 0.55, 0.95};
  auto f = [](const Tensor& x) {
    return sum(maxpool2d(reshape(x, {1, 1, 4, 4}), 2, 2));
  };
  Real err = finite_diff_check(f, Tensor::from_data({16}, xv), Real(1e-4));
  EXPECT_LT(err, 1e-6);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  auto f = [](const Tensor& x) { return sum(x); };
  EXPECT_THROW(finite_diff_check(f, Tensor::from_data({2}, {1, 2}), Real(0)),
               ContractError);
}

TEST(Tensor, ForwardIsBitIdenticalAcrossRuns) {
  auto run = [] {
    Rng rng(99);
    std::vector<Real> av(12), bv(12);
    for (auto& v : av) v = rng.normal();
    for (auto& v : bv) v = rng.normal();
    Tensor a = Tensor::from_data({3, 4}, av);
    Tensor b = Tensor::from_data({4, 3}, bv);
    return matmul(a, b);
  };
  Tensor r1 = run();
  Tensor r2 = run();
  for (int i = 0; i < 9; ++i) {
    EXPECT_EQ(r1.data()[i], r2.data()[i]);
  }
}

TEST(Tensor, InvariantShapeMatchesData) {
  EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::from_data({0, 2}, {}), ShapeError);
  Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.size(), 24);
}

TEST(Rng, SameSeedSameSequence) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(42), d(43);
  bool differs = false;
  for (int i = 0; i < 10; ++i) differs = differs || (c.next_u64() != d.next_u64());
  EXPECT_TRUE(differs);
}

TEST(Rng, StreamsIndependentOfParentConsumption) {
  Rng a(5), b(5);
  b.next_u64();
  b.next_u64();
  EXPECT_EQ(a.stream(3).next_u64(), b.stream(3).next_u64());
}

TEST(Rng, UniformStaysInRange) {
  Rng r(8);
  for (int i = 0; i < 10000; ++i) {
    double v = r.uniform(2.0, 5.0);
    ASSERT_GE(v, 2.0);
    ASSERT_LT(v, 5.0);
  }
}
