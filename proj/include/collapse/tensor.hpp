#pragma once

// Multi-detector configuration space: the tensor product of per-detector
// grids, with detector 0 as the most significant index. Local operators are
// applied factor-wise instead of being expanded into Kronecker products.

#include <numeric>
#include <vector>

#include "collapse/core.hpp"

namespace collapse {

class TensorSpace {
 public:
  explicit TensorSpace(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw std::invalid_argument("TensorSpace: need at least one factor");
    size_ = 1;
    for (int d : dims_) {
      if (d < 1) throw std::invalid_argument("TensorSpace: factor dimension must be positive");
      size_ *= d;
    }
  }

  int factors() const { return static_cast<int>(dims_.size()); }
  int dim(int d) const { return dims_.at(d); }
  const std::vector<int>& dims() const { return dims_; }
  Eigen::Index size() const { return size_; }

  Eigen::Index inner(int d) const {
    Eigen::Index s = 1;
    for (int i = d + 1; i < factors(); ++i) s *= dims_[i];
    return s;
  }
  Eigen::Index outer(int d) const {
    Eigen::Index s = 1;
    for (int i = 0; i < d; ++i) s *= dims_[i];
    return s;
  }

  /// out = (I (x) op (x) I) in, with op acting on factor d.
  void apply_left(const Matrix& op, int d, const Matrix& in, Matrix& out) const {
    check(op, d, in);
    const Eigen::Index n = dims_[d];
    const Eigen::Index in_sz = inner(d), out_sz = outer(d);
    out.resize(in.rows(), in.cols());
    if (in_sz == 1) {
      for (Eigen::Index o = 0; o < out_sz; ++o)
        out.middleRows(o * n, n).noalias() = op * in.middleRows(o * n, n);
      return;
    }
    // Each (column, outer) slab is an inner x n column-major matrix M; result is M op^T.
    const Matrix op_t = op.transpose();
    using Slab = Eigen::Map<const Matrix, 0, Eigen::OuterStride<>>;
    using SlabOut = Eigen::Map<Matrix, 0, Eigen::OuterStride<>>;
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      for (Eigen::Index o = 0; o < out_sz; ++o) {
        const Eigen::Index offset = c * in.rows() + o * n * in_sz;
        Slab src(in.data() + offset, in_sz, n, Eigen::OuterStride<>(in_sz));
        SlabOut dst(out.data() + offset, in_sz, n, Eigen::OuterStride<>(in_sz));
        dst.noalias() = src * op_t;
      }
    }
  }

  Matrix apply_left(const Matrix& op, int d, const Matrix& in) const {
    Matrix out;
    apply_left(op, d, in, out);
    return out;
  }

  /// in (I (x) op (x) I) = ((I (x) op^dagger (x) I) in^dagger)^dagger.
  Matrix apply_right(const Matrix& in, const Matrix& op, int d) const {
    Matrix adj = in.adjoint();
    return apply_left(Matrix(op.adjoint()), d, adj).adjoint();
  }

  /// Diagonal of (I (x) diag(values) (x) I).
  RealVector lift_diagonal(const RealVector& values, int d) const {
    if (values.size() != dims_.at(d)) throw DimensionMismatch("lift_diagonal: size mismatch");
    RealVector out(size_);
    const Eigen::Index in_sz = inner(d), n = dims_[d];
    for (Eigen::Index r = 0; r < size_; ++r) out(r) = values((r / in_sz) % n);
    return out;
  }

  /// Reduced matrix of factor d: partial trace of `m` over all other factors.
  Matrix partial_trace(const Matrix& m, int d) const {
    if (m.rows() != size_ || m.cols() != size_) throw DimensionMismatch("partial_trace: size mismatch");
    const Eigen::Index n = dims_[d], in_sz = inner(d), out_sz = outer(d);
    Matrix red = Matrix::Zero(n, n);
    for (Eigen::Index o = 0; o < out_sz; ++o)
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index jp = 0; jp < n; ++jp) {
          cplx acc = 0.0;
          const Eigen::Index r0 = (o * n + j) * in_sz, c0 = (o * n + jp) * in_sz;
          for (Eigen::Index i = 0; i < in_sz; ++i) acc += m(r0 + i, c0 + i);
          red(j, jp) += acc;
        }
    return red;
  }

  Vector kron(const std::vector<Vector>& parts) const {
    check_parts(parts.size());
    Vector out = Vector::Ones(1);
    for (std::size_t d = 0; d < parts.size(); ++d) {
      if (parts[d].size() != dims_[d]) throw DimensionMismatch("kron: factor size mismatch");
      Vector next(out.size() * parts[d].size());
      for (Eigen::Index a = 0; a < out.size(); ++a)
        next.segment(a * parts[d].size(), parts[d].size()) = out(a) * parts[d];
      out = std::move(next);
    }
    return out;
  }

  Matrix kron(const std::vector<Matrix>& parts) const {
    check_parts(parts.size());
    Matrix out = Matrix::Ones(1, 1);
    for (std::size_t d = 0; d < parts.size(); ++d) {
      const Matrix& f = parts[d];
      if (f.rows() != dims_[d] || f.cols() != dims_[d]) throw DimensionMismatch("kron: factor size mismatch");
      Matrix next(out.rows() * f.rows(), out.cols() * f.cols());
      for (Eigen::Index a = 0; a < out.rows(); ++a)
        for (Eigen::Index b = 0; b < out.cols(); ++b)
          next.block(a * f.rows(), b * f.cols(), f.rows(), f.cols()) = out(a, b) * f;
      out = std::move(next);
    }
    return out;
  }

 private:
  void check(const Matrix& op, int d, const Matrix& in) const {
    if (d < 0 || d >= factors()) throw DimensionMismatch("TensorSpace: factor index out of range");
    if (op.rows() != dims_[d] || op.cols() != dims_[d])
      throw DimensionMismatch("TensorSpace: local operator has wrong dimension");
    if (in.rows() != size_) throw DimensionMismatch("TensorSpace: operand has wrong dimension");
  }
  void check_parts(std::size_t n) const {
    if (n != dims_.size()) throw DimensionMismatch("kron: wrong number of factors");
  }

  std::vector<int> dims_;
  Eigen::Index size_ = 1;
};

}  // namespace collapse
