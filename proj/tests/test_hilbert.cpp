#include <gtest/gtest.h>

#include <numbers>

#include "collapse/detector.hpp"
#include "collapse/hilbert.hpp"

using namespace collapse;

namespace {

Matrix random_matrix(Rng& rng, int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = cplx(rng.normal(), rng.normal());
  return m;
}

double momentum_mean(const Operator& p, const Vector& psi) {
  const Matrix rho = psi * psi.adjoint();
  return mean_value(BlockMatrix{rho, 0, 0}, p);
}

}  // namespace

TEST(Grid, RejectsDegenerateInput) {
  EXPECT_THROW(Grid(1, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(Grid(4, 1.0, 1.0), std::invalid_argument);
}

TEST(PositionOperator, ThreePointGridIsDiagonal) {
  const Operator x = build_position_operator(Grid(3, -1.0, 1.0));
  Matrix expected = Matrix::Zero(3, 3);
  expected.diagonal() << -1.0, 0.0, 1.0;
  EXPECT_EQ(max_abs(x.matrix() - expected), 0.0);
}

TEST(PositionOperator, LinspaceEntries) {
  const Operator x = build_position_operator(Grid(11, 0.0, 10.0));
  for (int i = 0; i <= 10; ++i) EXPECT_NEAR(x.matrix()(i, i).real(), i, 1e-12);
  EXPECT_EQ(hermiticity_error(x.matrix()), 0.0);
}

TEST(MomentumOperator, HermitianForBothSchemes) {
  for (int n : {7, 16, 33}) {
    const Grid g(n, -3.0, 4.0);
    EXPECT_LE(hermiticity_error(build_momentum_operator(g).matrix()), 1e-12);
    EXPECT_LE(hermiticity_error(build_momentum_operator(g, MomentumScheme::central_difference).matrix()), 1e-12);
    EXPECT_EQ(build_momentum_operator(g).matrix().real().cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(MomentumOperator, PlaneWaveMeanMomentum) {
  const int n = 128;
  const Grid g(n, 0.0, 2.0 * std::numbers::pi * (n - 1) / n);  // period 2 pi
  const double q = 3.0;
  Vector psi(g.size());
  for (int i = 0; i < g.size(); ++i) psi(i) = std::polar(1.0, q * g.coordinate(i));
  psi /= psi.norm();
  // Spectral differentiation is exact on resolved modes. Central differences
  // give sin(q dx) / dx on interior rows; the two edge rows each lose one term.
  EXPECT_NEAR(momentum_mean(build_momentum_operator(g), psi), q, 1e-10);
  const double dx = g.spacing();
  const double cd = momentum_mean(build_momentum_operator(g, MomentumScheme::central_difference), psi);
  EXPECT_NEAR(cd, std::sin(q * dx) / dx * (n - 1) / n, 1e-10);
}

TEST(MomentumOperator, ConstantVectorHasZeroMomentum) {
  const Grid g(40, -5.0, 5.0);
  const Vector c = Vector::Constant(g.size(), cplx(1.0, 0.0)) / std::sqrt(40.0);
  EXPECT_NEAR(momentum_mean(build_momentum_operator(g), c), 0.0, 1e-12);
}

TEST(MeanValue, GaussianCenteredAtTwo) {
  const Grid g(201, -10.0, 10.0);
  const Vector psi = gaussian_packet(g, 2.0, 0.0, 0.5);
  const Matrix rho = psi * psi.adjoint();
  // Independent quadrature of x |g(x)|^2 over the grid points.
  double num = 0.0, den = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    const double x = g.coordinate(i), d = x - 2.0;
    const double density = std::exp(-d * d / (2.0 * 0.25));
    num += x * density;
    den += density;
  }
  const double mean = mean_value(BlockMatrix{rho, 0, 0}, build_position_operator(g));
  EXPECT_NEAR(mean, num / den, 1e-12);
  EXPECT_NEAR(mean, 2.0, 1e-6);
}

TEST(MeanValue, ScaleInvariant) {
  const Grid g(64, -8.0, 8.0);
  const Vector psi = gaussian_packet(g, 1.0, -0.5, 0.8);
  const Matrix rho = psi * psi.adjoint();
  const Operator p = build_momentum_operator(g);
  EXPECT_NEAR(mean_value(BlockMatrix{0.5 * rho, 0, 0}, p), mean_value(BlockMatrix{rho, 0, 0}, p), 1e-14);
}

TEST(MeanValue, MaximallyMixedOnSymmetricGrid) {
  const Grid g(9, -4.0, 4.0);
  const Matrix rho = Matrix::Identity(9, 9) / 9.0;
  EXPECT_NEAR(mean_value(BlockMatrix{rho, 0, 0}, build_position_operator(g)), 0.0, 1e-15);
}

TEST(MeanValue, VanishedBranchThrows) {
  const Grid g(4, 0.0, 1.0);
  const Matrix rho = Matrix::Zero(4, 4);
  try {
    mean_value(BlockMatrix{rho, 3, 3}, build_position_operator(g));
    FAIL() << "expected VanishedBranch";
  } catch (const VanishedBranch& e) {
    EXPECT_EQ(e.branch(), 3);
  }
}

TEST(Anticommutator, IdentityDoubles) {
  Rng rng(1);
  const Matrix b = random_matrix(rng, 5);
  const BlockMatrix out = anticommutator(Operator::hermitian(Matrix::Identity(5, 5)), BlockMatrix{b, 0, 1});
  EXPECT_EQ(max_abs(out.matrix - 2.0 * b), 0.0);
  EXPECT_EQ(out.row_branch, 0);
  EXPECT_EQ(out.col_branch, 1);
}

TEST(Anticommutator, ZeroBlock) {
  const Operator x = build_position_operator(Grid(6, -1.0, 1.0));
  EXPECT_EQ(max_abs(anticommutator(x, BlockMatrix{Matrix::Zero(6, 6)}).matrix), 0.0);
}

TEST(Anticommutator, MatchesExplicitProducts) {
  Rng rng(2);
  Matrix h = random_matrix(rng, 4);
  h = (h + h.adjoint()).eval();
  const Matrix b = random_matrix(rng, 4);
  Matrix brute(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      cplx acc = 0.0;
      for (int l = 0; l < 4; ++l) acc += h(i, l) * b(l, j) + b(i, l) * h(l, j);
      brute(i, j) = acc;
    }
  EXPECT_LE(max_abs(anticommutator(Operator::hermitian(h), BlockMatrix{b}).matrix - brute), 1e-12);
}

TEST(Anticommutator, DimensionMismatch) {
  EXPECT_THROW(anticommutator(build_position_operator(Grid(3, 0.0, 1.0)), BlockMatrix{Matrix::Zero(4, 4)}),
               DimensionMismatch);
}
