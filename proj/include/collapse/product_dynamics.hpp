#pragma once

// Locality-structured solver. Branch blocks are kept as direct products
// R_kl = (x)_d r^d_kl; each detector factor evolves by
//
//   dr^d_kl/dt = zeta sum_m w_m (<p_d>_m {x_d, r^d_kl} - <x_d>_m {p_d, r^d_kl})
//
// where the means are local to detector d but w_m = |c_m|^2 prod_d Tr r^d_mm
// couples all detectors. Cost grows linearly with the number of detectors.

#include <cmath>
#include <vector>

#include "collapse/full_dynamics.hpp"

namespace collapse {

struct DetectorFactor {
  int detector = 0;
  int branches = 0;
  std::vector<Matrix> blocks;  // row-major over (k, l); norms are not fixed

  Matrix& block(int k, int l) { return blocks[k * branches + l]; }
  const Matrix& block(int k, int l) const { return blocks[k * branches + l]; }

  double pairing_error() const {
    double err = 0.0;
    for (int k = 0; k < branches; ++k)
      for (int l = k; l < branches; ++l) err = std::max(err, max_abs(block(k, l) - block(l, k).adjoint()));
    return err;
  }
};

/// w^d_k = Tr r^d_kk. Starts at one and is free to exceed it.
struct LocalWeights {
  int detector = 0;
  RealVector w;
};

struct ProductState {
  std::vector<BranchLabel> labels;
  std::vector<cplx> amplitudes;
  std::vector<DetectorFactor> factors;
  std::vector<bool> ruined;
  double time = 0.0;
  double zeta = 0.0;

  int branches() const { return static_cast<int>(amplitudes.size()); }
  int detectors() const { return static_cast<int>(factors.size()); }
};

/// Which weights multiply the local equations. local_only replaces the global
/// w_m by the detector's own w^d_m; it exists to show that the remote coupling matters.
enum class WeightCoupling { global, local_only };

/// <A_d>_k = Tr_d(r^d_kk A_d) / Tr_d r^d_kk.
inline double local_mean(const DetectorFactor& factor, int k, const Operator& op,
                         double vanish_threshold = kVanishThreshold) {
  return mean_value_complex(factor.block(k, k), op.matrix(), vanish_threshold, k).real();
}

inline std::vector<LocalWeights> local_weights_of(const ProductState& s) {
  std::vector<LocalWeights> out;
  for (const auto& f : s.factors) {
    LocalWeights lw{f.detector, RealVector::Zero(s.branches())};
    for (int k = 0; k < s.branches(); ++k)
      if (!s.ruined[k]) lw.w(k) = f.block(k, k).trace().real();
    out.push_back(std::move(lw));
  }
  return out;
}

inline WeightVector reconstruct_global_weights_unchecked(const std::vector<cplx>& amplitudes,
                                                         const std::vector<LocalWeights>& local) {
  const int K = static_cast<int>(amplitudes.size());
  WeightVector w{RealVector::Zero(K)};
  for (int k = 0; k < K; ++k) {
    double prod = std::norm(amplitudes[k]);
    for (const auto& lw : local) {
      if (lw.w.size() != K) throw DimensionMismatch("reconstruct_global_weights: local weight size mismatch");
      prod *= lw.w(k);
    }
    w.w(k) = prod;
  }
  return w;
}

/// w_k = |c_k|^2 prod_d w^d_k.
inline WeightVector reconstruct_global_weights(const std::vector<cplx>& amplitudes,
                                               const std::vector<LocalWeights>& local) {
  WeightVector w = reconstruct_global_weights_unchecked(amplitudes, local);
  if (std::abs(w.total() - 1.0) > 1e-6)
    throw IntegrationDiverged("reconstruct_global_weights: total weight drifted to " + std::to_string(w.total()));
  return w;
}

struct LocalRates {
  std::vector<RealVector> log_rate;  // per detector: (dw^d_k/dt) / w^d_k
};

/// (dw^d_k/dt)/w^d_k = 2 zeta sum_m w_m (<x_d>_k <p_d>_m - <x_d>_m <p_d>_k).
inline LocalRates local_weight_rates(const RealVector& global_w, const BranchMeans& means, double zeta) {
  const int K = means.branches();
  if (global_w.size() != K) throw DimensionMismatch("local_weight_rates: weight size mismatch");
  LocalRates out;
  for (int d = 0; d < means.detectors(); ++d) {
    RealVector r = RealVector::Zero(K);
    for (int k = 0; k < K; ++k) {
      if (!means.live[k]) continue;
      double acc = 0.0;
      for (int m = 0; m < K; ++m)
        if (means.live[m]) acc += global_w(m) * (means.x(k, d) * means.p(m, d) - means.x(m, d) * means.p(k, d));
      r(k) = 2.0 * zeta * acc;
    }
    out.log_rate.push_back(std::move(r));
  }
  return out;
}

namespace detail {

/// Nonlinear flow of one factor with the coupling (alpha, beta) frozen.
inline std::vector<Matrix> factor_flow(const DetectorFactor& f, const std::vector<bool>& ruined, const Matrix& p,
                                       const RealVector& x, double alpha, double beta, double zeta) {
  const int K = f.branches;
  std::vector<Matrix> prod(K * K), out(K * K);
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < K; ++l)
      if (!ruined[k] && !ruined[l]) prod[k * K + l] = alpha * (p * f.block(k, l));
  const RealVector s_diag = beta * x;
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < K; ++l) {
      if (ruined[k] || ruined[l]) {
        out[k * K + l] = Matrix::Zero(f.block(k, l).rows(), f.block(k, l).cols());
        continue;
      }
      anticommutator_flow(s_diag, f.block(k, l), prod[k * K + l], prod[l * K + k], zeta, out[k * K + l]);
    }
  return out;
}

}  // namespace detail

/// Advances one detector factor over dt. Detector d's own means and local
/// weights are re-evaluated at every RK4 stage; the other detectors' share of
/// the global weights, w_m / w^d_m, is held at its value at the start of the step.
inline DetectorFactor step_local(const DetectorFactor& factor, const DetectorModel& model,
                                 const RealVector& global_w, const BranchMeans& means, double zeta, double dt) {
  const int K = factor.branches;
  std::vector<bool> ruined(K);
  RealVector remote = RealVector::Zero(K);
  for (int k = 0; k < K; ++k) {
    ruined[k] = !means.live[k];
    if (!ruined[k]) remote(k) = global_w(k) / factor.block(k, k).trace().real();
  }
  const Matrix& p = model.momentum().matrix();
  const RealVector& x = model.position_diagonal();
  auto f = [&](const DetectorFactor& y) {
    double alpha = 0.0, beta = 0.0;
    for (int m = 0; m < K; ++m) {
      if (ruined[m]) continue;
      const Matrix& r = y.block(m, m);
      alpha += remote(m) * r.diagonal().real().dot(x);
      beta += remote(m) * trace_product(r, p).real();
    }
    return detail::factor_flow(y, ruined, p, x, alpha, beta, zeta);
  };
  auto shifted = [&](const std::vector<Matrix>& k, double h) {
    DetectorFactor y = factor;
    for (int i = 0; i < K * K; ++i) y.blocks[i] += h * k[i];
    return y;
  };
  const auto k1 = f(factor);
  const auto k2 = f(shifted(k1, 0.5 * dt));
  const auto k3 = f(shifted(k2, 0.5 * dt));
  const auto k4 = f(shifted(k3, dt));
  DetectorFactor out = factor;
  for (int i = 0; i < K * K; ++i) out.blocks[i] += (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

/// Not thread-safe (propagator caches); use one engine per trajectory.
class ProductEngine {
 public:
  explicit ProductEngine(DetectorList detectors, DynamicsOptions options = {},
                         WeightCoupling coupling = WeightCoupling::global)
      : detectors_(std::move(detectors)), options_(options), coupling_(coupling) {
    if (detectors_.empty()) throw std::invalid_argument("ProductEngine: at least one detector required");
    for (const auto& d : detectors_) {
      if (!d) throw std::invalid_argument("ProductEngine: null detector model");
      propagators_.emplace_back(*d);
      if (options_.picture == Picture::schroedinger && propagators_.back().time_dependent())
        throw std::invalid_argument("ProductEngine: kicked detectors need the interaction picture");
    }
  }

  int detectors() const { return static_cast<int>(detectors_.size()); }
  const DetectorList& detector_models() const { return detectors_; }
  const DynamicsOptions& options() const { return options_; }
  WeightCoupling coupling() const { return coupling_; }

  ProductState assemble_initial_state(std::vector<BranchLabel> labels, std::vector<cplx> amplitudes,
                                      const std::vector<std::vector<Vector>>& states, double zeta) const {
    detail::validate_branch_setup(labels, amplitudes, states.size());
    const int K = static_cast<int>(amplitudes.size());
    ProductState s;
    s.labels = std::move(labels);
    s.amplitudes = std::move(amplitudes);
    s.zeta = zeta;
    s.ruined.assign(K, false);
    for (int d = 0; d < detectors(); ++d) {
      DetectorFactor f{d, K, std::vector<Matrix>(K * K)};
      std::vector<Vector> phi;
      for (int k = 0; k < K; ++k) {
        if (static_cast<int>(states[k].size()) != detectors())
          throw std::invalid_argument("assemble_initial_state: one state per detector required");
        const Vector& v = states[k][d];
        if (v.size() != detectors_[d]->dim())
          throw std::invalid_argument("assemble_initial_state: state dimension does not match detector grid");
        if (!(v.norm() > 0.0)) throw std::invalid_argument("assemble_initial_state: zero state vector");
        phi.push_back(v / v.norm());
      }
      for (int k = 0; k < K; ++k)
        for (int l = 0; l < K; ++l) f.block(k, l) = phi[k] * phi[l].adjoint();
      s.factors.push_back(std::move(f));
    }
    apply_absorption(s);
    return s;
  }

  std::vector<LocalWeights> local_weights(const ProductState& s) const { return local_weights_of(s); }

  WeightVector weights_unchecked(const ProductState& s) const {
    WeightVector w = reconstruct_global_weights_unchecked(s.amplitudes, local_weights_of(s));
    for (int k = 0; k < s.branches(); ++k)
      if (s.ruined[k]) w.w(k) = 0.0;
    return w;
  }

  WeightVector compute_weights(const ProductState& s) const {
    WeightVector w = weights_unchecked(s);
    if (std::abs(w.total() - 1.0) > 1e-6)
      throw IntegrationDiverged("compute_weights: total weight drifted to " + std::to_string(w.total()));
    return w;
  }

  /// Local means of every detector; rows of ruined branches are marked dead.
  BranchMeans branch_means(const ProductState& s) const { return means_of(s.factors, s.ruined); }

  PumpingMatrix pumping_coefficients(const ProductState& s) const { return pumping_matrix(branch_means(s)); }

  struct Observation {
    WeightVector weights;
    PumpingMatrix pumping;
    BranchMeans means;
    std::vector<LocalWeights> local;
  };

  Observation observe(const ProductState& s) const {
    BranchMeans means = branch_means(s);
    PumpingMatrix a = pumping_matrix(means);
    return {weights_unchecked(s), std::move(a), std::move(means), local_weights_of(s)};
  }

  /// No-heating trace on the direct-product state without assembling it:
  /// Tr[x_d R_kl p_d R_lk] = Tr(x r^d_kl p r^d_lk) prod_{d' != d} Tr(r^d'_kl r^d'_lk).
  /// The scale is the matching Cauchy-Schwarz bound term by term.
  NoHeating no_heating(const ProductState& s) const {
    const int K = s.branches();
    const int D = detectors();
    std::vector<cplx> overlap(D * K * K, 0.0);
    std::vector<double> norm_prod(D * K * K, 0.0);
    for (int d = 0; d < D; ++d)
      for (int k = 0; k < K; ++k)
        for (int l = 0; l < K; ++l) {
          if (s.ruined[k] || s.ruined[l]) continue;
          const Matrix& a = s.factors[d].block(k, l);
          const Matrix& b = s.factors[d].block(l, k);
          overlap[(d * K + k) * K + l] = trace_product(a, b);
          norm_prod[(d * K + k) * K + l] = a.norm() * b.norm();
        }
    cplx total = 0.0;
    double scale = 0.0;
    for (int d = 0; d < D; ++d) {
      const Matrix& p = detectors_[d]->momentum().matrix();
      const RealVector& x = detectors_[d]->position_diagonal();
      for (int k = 0; k < K; ++k)
        for (int l = 0; l < K; ++l) {
          if (s.ruined[k] || s.ruined[l]) continue;
          const double g = std::norm(s.amplitudes[k]) * std::norm(s.amplitudes[l]);
          cplx rest = 1.0;
          double rest_norm = 1.0;
          for (int e = 0; e < D; ++e) {
            if (e == d) continue;
            rest *= overlap[(e * K + k) * K + l];
            rest_norm *= norm_prod[(e * K + k) * K + l];
          }
          const Matrix& r_kl = s.factors[d].block(k, l);
          const Matrix& r_lk = s.factors[d].block(l, k);
          const Matrix xrp = x.asDiagonal() * r_kl * p;
          const Matrix prx = p * r_kl * x.asDiagonal();
          total += g * rest * (trace_product(xrp, r_lk) - trace_product(prx, r_lk));
          scale += g * rest_norm * (xrp.norm() + prx.norm()) * r_lk.norm();
        }
    }
    NoHeating out;
    out.raw = std::abs(total);
    out.value = std::abs(s.zeta) * out.raw;
    out.scale = scale;
    return out;
  }

  /// Per-detector log-rates of the local weights at the current state.
  LocalRates local_rates(const ProductState& s) const {
    return local_weight_rates(weights_unchecked(s).w, branch_means(s), s.zeta);
  }

  /// Direct product of the factors, as a full-tensor state.
  SystemState to_full(const ProductState& s, const TensorSpace& space) const {
    SystemState out;
    out.labels = s.labels;
    out.amplitudes = s.amplitudes;
    out.ruined = s.ruined;
    out.time = s.time;
    out.zeta = s.zeta;
    const int K = s.branches();
    out.blocks.resize(K * K);
    for (int k = 0; k < K; ++k)
      for (int l = 0; l < K; ++l) {
        std::vector<Matrix> parts;
        for (const auto& f : s.factors) parts.push_back(f.block(k, l));
        out.block(k, l) = space.kron(parts);
      }
    return out;
  }

  ProductState step(const ProductState& s, double dt) const {
    if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
    ProductState out = s;
    if (options_.picture == Picture::interaction) {
      apply_linear(out, s.time, 0.5 * dt);
      integrate_adaptive(out, dt, false);
      apply_linear(out, s.time + 0.5 * dt, 0.5 * dt);
    } else {
      integrate_adaptive(out, dt, true);
    }
    out.time = s.time + dt;
    apply_absorption(out);
    return out;
  }

  void apply_absorption(ProductState& s) const {
    WeightVector w = weights_unchecked(s);
    const Absorption abs = absorb(w, s.ruined, options_.epsilon);
    if (abs.newly_ruined.empty()) return;
    const int K = s.branches();
    const double per_factor = std::pow(abs.scale, 1.0 / detectors());
    for (auto& f : s.factors) {
      for (int k : abs.newly_ruined)
        for (int l = 0; l < K; ++l) {
          f.block(k, l).setZero();
          f.block(l, k).setZero();
        }
      for (int k = 0; k < K; ++k)
        for (int l = 0; l < K; ++l)
          if (!s.ruined[k] && !s.ruined[l]) f.block(k, l) *= per_factor;
    }
  }

  /// Coupled right-hand side of all factors.
  std::vector<std::vector<Matrix>> rhs(const ProductState& s) const {
    return rhs_factors(s.factors, s.ruined, s.amplitudes, s.zeta, options_.picture == Picture::schroedinger);
  }

 private:
  BranchMeans means_of(const std::vector<DetectorFactor>& factors, const std::vector<bool>& ruined) const {
    const int K = static_cast<int>(ruined.size());
    BranchMeans m{RealMatrix::Zero(K, detectors()), RealMatrix::Zero(K, detectors()), std::vector<bool>(K, false)};
    for (int k = 0; k < K; ++k) {
      if (ruined[k]) continue;
      bool live = true;
      for (int d = 0; d < detectors(); ++d) {
        const Matrix& r = factors[d].block(k, k);
        const double tr = r.trace().real();
        if (!(tr > kVanishThreshold)) {
          live = false;
          break;
        }
        m.x(k, d) = r.diagonal().real().dot(detectors_[d]->position_diagonal()) / tr;
        m.p(k, d) = trace_product(r, detectors_[d]->momentum().matrix()).real() / tr;
      }
      m.live[k] = live;
    }
    return m;
  }

  std::vector<std::vector<Matrix>> rhs_factors(const std::vector<DetectorFactor>& factors,
                                               const std::vector<bool>& ruined, const std::vector<cplx>& amps,
                                               double zeta, bool with_linear) const {
    const int K = static_cast<int>(ruined.size());
    const BranchMeans means = means_of(factors, ruined);
    RealVector global_w = RealVector::Zero(K);
    for (int k = 0; k < K; ++k) {
      if (!means.live[k]) continue;
      double w = std::norm(amps[k]);
      for (const auto& f : factors) w *= f.block(k, k).trace().real();
      global_w(k) = w;
    }
    std::vector<std::vector<Matrix>> out;
    for (int d = 0; d < detectors(); ++d) {
      double alpha = 0.0, beta = 0.0;
      for (int m = 0; m < K; ++m) {
        if (!means.live[m]) continue;
        const double cw = coupling_ == WeightCoupling::global ? global_w(m) : factors[d].block(m, m).trace().real();
        alpha += cw * means.x(m, d);
        beta += cw * means.p(m, d);
      }
      auto flow = detail::factor_flow(factors[d], ruined, detectors_[d]->momentum().matrix(),
                                      detectors_[d]->position_diagonal(), alpha, beta, zeta);
      if (with_linear) {
        const Matrix& h = detectors_[d]->hamiltonian().matrix();
        const cplx minus_i(0.0, -1.0);
        for (int k = 0; k < K; ++k)
          for (int l = 0; l < K; ++l) {
            if (ruined[k] || ruined[l]) continue;
            const Matrix& r = factors[d].block(k, l);
            flow[k * K + l] += minus_i * (h * r - r * h);
          }
      }
      out.push_back(std::move(flow));
    }
    return out;
  }

  double weight_total(const std::vector<DetectorFactor>& factors, const std::vector<bool>& ruined,
                      const std::vector<cplx>& amps, bool* bad) const {
    const int K = static_cast<int>(ruined.size());
    double total = 0.0;
    for (int k = 0; k < K; ++k) {
      if (ruined[k]) continue;
      double w = std::norm(amps[k]);
      for (const auto& f : factors) w *= f.block(k, k).trace().real();
      if (w < 0.0 || !std::isfinite(w)) *bad = true;
      total += w;
    }
    return total;
  }

  void rk4(std::vector<DetectorFactor>& factors, const ProductState& s, double dt, bool with_linear) const {
    auto f = [&](const std::vector<DetectorFactor>& y) {
      return rhs_factors(y, s.ruined, s.amplitudes, s.zeta, with_linear);
    };
    auto shifted = [&](const std::vector<std::vector<Matrix>>& k, double h) {
      std::vector<DetectorFactor> y = factors;
      for (std::size_t d = 0; d < y.size(); ++d)
        for (std::size_t i = 0; i < y[d].blocks.size(); ++i) y[d].blocks[i] += h * k[d][i];
      return y;
    };
    const auto k1 = f(factors);
    const auto k2 = f(shifted(k1, 0.5 * dt));
    const auto k3 = f(shifted(k2, 0.5 * dt));
    const auto k4 = f(shifted(k3, dt));
    for (std::size_t d = 0; d < factors.size(); ++d)
      for (std::size_t i = 0; i < factors[d].blocks.size(); ++i)
        factors[d].blocks[i] += (dt / 6.0) * (k1[d][i] + 2.0 * k2[d][i] + 2.0 * k3[d][i] + k4[d][i]);
  }

  void integrate_adaptive(ProductState& s, double dt, bool with_linear) const {
    bool bad = false;
    const double before = weight_total(s.factors, s.ruined, s.amplitudes, &bad);
    std::vector<DetectorFactor> trial = s.factors;
    rk4(trial, s, dt, with_linear);
    bad = false;
    const double after = weight_total(trial, s.ruined, s.amplitudes, &bad);
    if (!bad && std::abs(after - before) <= options_.weight_tolerance) {
      s.factors = std::move(trial);
      return;
    }
    if (0.5 * dt < options_.dt_min) throw IntegrationDiverged("step: weight drift persists below dt_min");
    integrate_adaptive(s, 0.5 * dt, with_linear);
    integrate_adaptive(s, 0.5 * dt, with_linear);
  }

  void apply_linear(ProductState& s, double t0, double tau) const {
    const int K = s.branches();
    for (int d = 0; d < detectors(); ++d) {
      const Matrix u = propagators_[d].unitary(t0, tau);
      const Matrix u_adj = u.adjoint();
      for (int k = 0; k < K; ++k)
        for (int l = 0; l < K; ++l) {
          if (s.ruined[k] || s.ruined[l]) continue;
          Matrix& r = s.factors[d].block(k, l);
          r = u * r * u_adj;
        }
    }
  }

  DetectorList detectors_;
  DynamicsOptions options_;
  WeightCoupling coupling_;
  std::vector<Propagator> propagators_;
};

}  // namespace collapse
