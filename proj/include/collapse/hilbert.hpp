#pragma once

// One detector's configuration space on a finite grid (hbar = 1).

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "collapse/core.hpp"

namespace collapse {

class Grid {
 public:
  Grid(int n_points, double x_min, double x_max) : n_(n_points), x_min_(x_min), x_max_(x_max) {
    if (n_points < 2) throw std::invalid_argument("Grid: need at least 2 points");
    if (!(x_max > x_min)) throw std::invalid_argument("Grid: x_max must exceed x_min");
    spacing_ = (x_max - x_min) / (n_points - 1);
  }

  int size() const { return n_; }
  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }
  double spacing() const { return spacing_; }
  /// Period used by the spectral derivative: n * spacing.
  double period() const { return n_ * spacing_; }
  double coordinate(int i) const { return x_min_ + i * spacing_; }

  RealVector coordinates() const {
    RealVector x(n_);
    for (int i = 0; i < n_; ++i) x(i) = coordinate(i);
    return x;
  }

  bool operator==(const Grid&) const = default;

 private:
  int n_;
  double x_min_;
  double x_max_;
  double spacing_;
};

enum class MomentumScheme { spectral, central_difference };

/// Square complex matrix, optionally certified Hermitian.
class Operator {
 public:
  static constexpr double kHermitianTolerance = 1e-12;

  Operator(Matrix m, bool hermitian_flag) : m_(std::move(m)), hermitian_(hermitian_flag) {
    if (m_.rows() != m_.cols()) throw DimensionMismatch("Operator: matrix not square");
    if (hermitian_ && hermiticity_error(m_) > kHermitianTolerance)
      throw std::invalid_argument("Operator: flagged Hermitian but A - A^dagger exceeds 1e-12");
  }

  /// Symmetrizes (A + A^dagger)/2 so the result is Hermitian to the last bit.
  static Operator hermitian(const Matrix& m) {
    Matrix h = 0.5 * (m + m.adjoint());
    return Operator(std::move(h), true);
  }

  const Matrix& matrix() const { return m_; }
  bool hermitian_flag() const { return hermitian_; }
  Eigen::Index dim() const { return m_.rows(); }

 private:
  Matrix m_;
  bool hermitian_;
};

/// Branch block R_kl = |Phi_k><Phi_l| restricted to one configuration space.
struct BlockMatrix {
  Matrix matrix;
  int row_branch = 0;
  int col_branch = 0;
};

inline Operator build_position_operator(const Grid& grid) {
  Matrix m = Matrix::Zero(grid.size(), grid.size());
  for (int i = 0; i < grid.size(); ++i) m(i, i) = grid.coordinate(i);
  return Operator(std::move(m), true);
}

/// p = -i d/dx. The spectral form treats the grid as periodic with period
/// n * spacing and drops the Nyquist mode for even n, which keeps every
/// entry purely imaginary and the matrix exactly Hermitian.
inline Operator build_momentum_operator(const Grid& grid,
                                        MomentumScheme scheme = MomentumScheme::spectral) {
  const int n = grid.size();
  const double dx = grid.spacing();
  Matrix m = Matrix::Zero(n, n);
  if (scheme == MomentumScheme::central_difference) {
    for (int j = 0; j < n; ++j) {
      if (j + 1 < n) m(j, j + 1) = cplx(0.0, -1.0 / (2.0 * dx));
      if (j - 1 >= 0) m(j, j - 1) = cplx(0.0, 1.0 / (2.0 * dx));
    }
    return Operator(std::move(m), true);
  }

  // p_{jl} = c[j - l], c[s] = (1/n) sum_q k_q exp(i k_q s dx) = (2i/n) sum_{q>0} k_q sin(k_q s dx)
  const double length = grid.period();
  const int q_max = (n % 2 == 0) ? n / 2 - 1 : (n - 1) / 2;
  std::vector<double> c(n, 0.0);
  for (int s = 1; s < n; ++s) {
    double acc = 0.0;
    for (int q = 1; q <= q_max; ++q) {
      const double k = 2.0 * std::numbers::pi * q / length;
      acc += k * std::sin(k * s * dx);
    }
    c[s] = 2.0 * acc / n;
  }
  for (int j = 0; j < n; ++j) {
    for (int l = 0; l < n; ++l) {
      if (j == l) continue;
      const int s = j - l;
      // c[-s] = -c[s]; evaluate the positive offset and mirror the sign so
      // that m(l, j) == conj(m(j, l)) exactly.
      m(j, l) = s > 0 ? cplx(0.0, c[s]) : cplx(0.0, -c[-s]);
    }
  }
  return Operator(std::move(m), true);
}

/// Tr(R A) / Tr R without discarding the imaginary part.
inline cplx mean_value_complex(const Matrix& block, const Matrix& op,
                               double vanish_threshold = kVanishThreshold, int branch = -1) {
  if (block.rows() != op.rows() || block.cols() != op.cols())
    throw DimensionMismatch("mean_value: block and operator dimensions differ");
  const cplx tr = block.trace();
  if (!(tr.real() > vanish_threshold)) throw VanishedBranch(branch, tr.real());
  return trace_product(block, op) / tr.real();
}

/// <A>_k = Tr(R_kk A) / Tr R_kk.
inline double mean_value(const BlockMatrix& block_kk, const Operator& op,
                         double vanish_threshold = kVanishThreshold) {
  return mean_value_complex(block_kk.matrix, op.matrix(), vanish_threshold, block_kk.row_branch)
      .real();
}

/// {A, R} = A R + R A.
inline BlockMatrix anticommutator(const Operator& op, const BlockMatrix& block) {
  if (op.dim() != block.matrix.rows() || block.matrix.rows() != block.matrix.cols())
    throw DimensionMismatch("anticommutator: operator and block dimensions differ");
  BlockMatrix out{Matrix(op.matrix() * block.matrix), block.row_branch, block.col_branch};
  out.matrix.noalias() += block.matrix * op.matrix();
  return out;
}

}  // namespace collapse
