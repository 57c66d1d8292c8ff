#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>

namespace collapse {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using RealMatrix = Eigen::MatrixXd;

/// Thrown when a branch block has (numerically) zero trace, so that
/// normalized mean values are undefined for it.
class VanishedBranch : public std::runtime_error {
 public:
  explicit VanishedBranch(int branch, double trace)
      : std::runtime_error("branch " + std::to_string(branch) +
                           " has vanished (trace " + std::to_string(trace) + ")"),
        branch_(branch) {}
  int branch() const { return branch_; }

 private:
  int branch_;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Total weight left the conservation band; the trajectory cannot be trusted.
class IntegrationDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trace below which a branch block counts as vanished.
inline constexpr double kVanishThreshold = 1e-14;

inline double max_abs(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

/// Largest entry of A - A^dagger.
inline double hermiticity_error(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("hermiticity_error: matrix not square");
  return max_abs(m - m.adjoint());
}

/// Tr(a b) without forming the product.
inline cplx trace_product(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.cols() || a.cols() != b.rows())
    throw DimensionMismatch("trace_product: incompatible shapes");
  return a.cwiseProduct(b.transpose()).sum();
}

}  // namespace collapse
