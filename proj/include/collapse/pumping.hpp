#pragma once

// Weights, pumping coefficients and the absorption policy shared by the
// full, product and stochastic engines.

#include <cmath>
#include <optional>
#include <vector>

#include "collapse/core.hpp"

namespace collapse {

inline constexpr double kDefaultEpsilon = 1e-6;

struct WeightVector {
  static constexpr double kSumTolerance = 1e-9;

  RealVector w;

  int size() const { return static_cast<int>(w.size()); }
  double operator[](int k) const { return w(k); }
  double total() const { return w.sum(); }
  double sum_error() const { return std::abs(total() - 1.0); }
  bool nonnegative() const { return w.size() == 0 || w.minCoeff() >= 0.0; }
  bool valid(double tolerance = kSumTolerance) const { return nonnegative() && sum_error() <= tolerance; }
};

/// Antisymmetric matrix of dimensionless pumping coefficients A_km.
struct PumpingMatrix {
  RealMatrix a;

  int size() const { return static_cast<int>(a.rows()); }
  double operator()(int k, int m) const { return a(k, m); }
  /// max |A + A^T|; zero for every matrix produced by pumping_matrix().
  double antisymmetry_error() const { return a.size() == 0 ? 0.0 : (a + a.transpose()).cwiseAbs().maxCoeff(); }
};

/// Per-branch, per-detector mean position and momentum. Rows of ruined
/// branches are ignored.
struct BranchMeans {
  RealMatrix x;  // K x D
  RealMatrix p;  // K x D
  std::vector<bool> live;

  int branches() const { return static_cast<int>(x.rows()); }
  int detectors() const { return static_cast<int>(x.cols()); }
};

/// A_km = 2 sum_d (<x_d>_k <p_d>_m - <x_d>_m <p_d>_k). The lower triangle is
/// the negated upper triangle, so A + A^T vanishes exactly.
inline PumpingMatrix pumping_matrix(const BranchMeans& means) {
  const int K = means.branches();
  PumpingMatrix out{RealMatrix::Zero(K, K)};
  for (int k = 0; k < K; ++k) {
    if (!means.live[k]) continue;
    for (int m = k + 1; m < K; ++m) {
      if (!means.live[m]) continue;
      double acc = 0.0;
      for (int d = 0; d < means.detectors(); ++d)
        acc += means.x(k, d) * means.p(m, d) - means.x(m, d) * means.p(k, d);
      out.a(k, m) = 2.0 * acc;
      out.a(m, k) = -out.a(k, m);
    }
  }
  return out;
}

/// dw_k/dt = zeta sum_m w_k w_m A_km.
inline RealVector pumping_rates(const WeightVector& weights, const PumpingMatrix& a, double zeta) {
  const int K = weights.size();
  if (a.size() != K) throw DimensionMismatch("pumping_rates: weight and matrix sizes differ");
  RealVector rates = RealVector::Zero(K);
  for (int k = 0; k < K; ++k) {
    double acc = 0.0;
    for (int m = 0; m < K; ++m) acc += weights[m] * a(k, m);
    rates(k) = zeta * weights[k] * acc;
  }
  return rates;
}

/// The unique surviving branch, if one weight is above 1 - (K-1) eps and all
/// others are below eps.
inline std::optional<int> detect_collapse(const WeightVector& weights, double epsilon = kDefaultEpsilon) {
  const int K = weights.size();
  if (K == 1) return 0;
  std::optional<int> winner;
  for (int k = 0; k < K; ++k) {
    if (weights[k] >= 1.0 - (K - 1) * epsilon) {
      if (winner) return std::nullopt;
      winner = k;
    } else if (weights[k] >= epsilon) {
      return std::nullopt;
    }
  }
  return winner;
}

struct Absorption {
  std::vector<int> newly_ruined;
  double scale = 1.0;  // factor applied to the surviving weights
};

/// Ruins every live branch whose weight fell below epsilon and rescales the
/// survivors so the total returns to one. Ruin is permanent.
inline Absorption absorb(WeightVector& weights, std::vector<bool>& ruined, double epsilon) {
  Absorption result;
  const int K = weights.size();
  double live_sum = 0.0;
  int largest = -1;
  for (int k = 0; k < K; ++k) {
    if (ruined[k]) continue;
    if (largest < 0 || weights[k] > weights[largest]) largest = k;
  }
  for (int k = 0; k < K; ++k) {
    if (ruined[k]) continue;
    if (weights.w(k) < epsilon && k != largest) {
      result.newly_ruined.push_back(k);
      ruined[k] = true;
      weights.w(k) = 0.0;
    } else {
      live_sum += weights.w(k);
    }
  }
  if (!result.newly_ruined.empty() && live_sum > 0.0) {
    result.scale = 1.0 / live_sum;
    for (int k = 0; k < K; ++k)
      if (!ruined[k]) weights.w(k) *= result.scale;
  }
  return result;
}

}  // namespace collapse
