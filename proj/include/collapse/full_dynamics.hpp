#pragma once

// Full-tensor integrator of the nonlinear von Neumann equation restricted to
// the branch structure rho = sum_kl |k><l| c_k c_l* R_kl. Each branch block
// R_kl lives on the tensor product of all detector grids and obeys
//
//   dR_kl/dt = zeta sum_d sum_m w_m (<p_d>_m {x_d, R_kl} - <x_d>_m {p_d, R_kl})
//
// in the interaction picture; H0 enters through exact exponentials in a
// Strang splitting. The Schroedinger picture integrates -i[H0, R] + nonlinear
// term with one RK4 for cross-checks.

#include <cmath>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "collapse/detector.hpp"
#include "collapse/pumping.hpp"
#include "collapse/tensor.hpp"

namespace collapse {

struct BranchLabel {
  int id = 0;
  std::vector<bool> hit_pattern;
};

enum class Picture { interaction, schroedinger };

struct DynamicsOptions {
  Picture picture = Picture::interaction;
  double epsilon = kDefaultEpsilon;
  double weight_tolerance = 1e-10;  // allowed total-weight drift of one nonlinear step
  double dt_min = 1e-6;
};

using DetectorList = std::vector<std::shared_ptr<const DetectorModel>>;

struct SystemState {
  std::vector<BranchLabel> labels;
  std::vector<cplx> amplitudes;
  std::vector<Matrix> blocks;  // row-major over (k, l)
  std::vector<bool> ruined;
  double time = 0.0;
  double zeta = 0.0;

  int branches() const { return static_cast<int>(amplitudes.size()); }
  Matrix& block(int k, int l) { return blocks[k * branches() + l]; }
  const Matrix& block(int k, int l) const { return blocks[k * branches() + l]; }
  BlockMatrix branch_block(int k, int l) const { return {block(k, l), k, l}; }

  /// max over pairs of |R_kl - R_lk^dagger|.
  double pairing_error() const {
    double err = 0.0;
    for (int k = 0; k < branches(); ++k)
      for (int l = k; l < branches(); ++l)
        err = std::max(err, max_abs(block(k, l) - block(l, k).adjoint()));
    return err;
  }
};

/// |zeta Tr[(x rho p - p rho x) rho]| and the Cauchy-Schwarz scale
/// (||x rho p|| + ||p rho x||) ||rho|| it is measured against.
struct NoHeating {
  double value = 0.0;
  double raw = 0.0;  // without the zeta factor
  double scale = 0.0;
  double relative() const { return scale > 0.0 ? raw / scale : 0.0; }
};

namespace detail {

inline void validate_branch_setup(const std::vector<BranchLabel>& labels, const std::vector<cplx>& amplitudes,
                                  std::size_t n_states) {
  if (labels.size() != amplitudes.size() || amplitudes.size() != n_states || amplitudes.empty())
    throw std::invalid_argument("assemble_initial_state: branch, amplitude and state counts differ");
  double norm = 0.0;
  for (const auto& c : amplitudes) norm += std::norm(c);
  if (std::abs(norm - 1.0) > 1e-9) throw std::invalid_argument("amplitudes not normalized");
  std::set<std::vector<bool>> patterns;
  for (const auto& l : labels)
    if (!patterns.insert(l.hit_pattern).second)
      throw std::invalid_argument("assemble_initial_state: two branches share a hit pattern");
}

/// dR = zeta [(S_i + S_j) R_ij - sum_d alpha_d (P^d_kl + P^d_lk^dagger)], where
/// P^d_kl = p_d R_kl, S = sum_d beta_d x_d.
inline void anticommutator_flow(const RealVector& s_diag, const Matrix& r_kl, const Matrix& combined_kl,
                                const Matrix& combined_lk, double zeta, Matrix& out) {
  const Eigen::Index n = r_kl.rows();
  out.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      out(i, j) = zeta * ((s_diag(i) + s_diag(j)) * r_kl(i, j) - combined_kl(i, j) - std::conj(combined_lk(j, i)));
}

}  // namespace detail

/// Not thread-safe (propagator caches); use one engine per trajectory.
class FullEngine {
 public:
  /// Tensor dimension above which the full solver refuses to run.
  static constexpr Eigen::Index kMaxTensorDim = 4096;

  explicit FullEngine(DetectorList detectors, DynamicsOptions options = {})
      : detectors_(std::move(detectors)), options_(options), space_(dims_of(detectors_)) {
    if (space_.size() > kMaxTensorDim)
      throw std::invalid_argument("FullEngine: tensor dimension too large for the full solver");
    for (int d = 0; d < space_.factors(); ++d) {
      x_lift_.push_back(space_.lift_diagonal(detectors_[d]->position_diagonal(), d));
      propagators_.emplace_back(*detectors_[d]);
      if (options_.picture == Picture::schroedinger && propagators_.back().time_dependent())
        throw std::invalid_argument("FullEngine: kicked detectors need the interaction picture");
    }
  }

  const TensorSpace& space() const { return space_; }
  int detectors() const { return space_.factors(); }
  const DynamicsOptions& options() const { return options_; }
  const DetectorList& detector_models() const { return detectors_; }

  /// states[k][d] is detector d's state in branch k; the branch state is their product.
  SystemState assemble_initial_state(std::vector<BranchLabel> labels, std::vector<cplx> amplitudes,
                                     const std::vector<std::vector<Vector>>& states, double zeta) const {
    detail::validate_branch_setup(labels, amplitudes, states.size());
    const int K = static_cast<int>(amplitudes.size());
    std::vector<Vector> phi;
    for (int k = 0; k < K; ++k) {
      if (static_cast<int>(states[k].size()) != detectors())
        throw std::invalid_argument("assemble_initial_state: one state per detector required");
      std::vector<Vector> parts;
      for (int d = 0; d < detectors(); ++d) {
        if (states[k][d].size() != space_.dim(d))
          throw std::invalid_argument("assemble_initial_state: state dimension does not match detector grid");
        const double nrm = states[k][d].norm();
        if (!(nrm > 0.0)) throw std::invalid_argument("assemble_initial_state: zero state vector");
        parts.push_back(states[k][d] / nrm);
      }
      phi.push_back(space_.kron(parts));
    }
    SystemState s;
    s.labels = std::move(labels);
    s.amplitudes = std::move(amplitudes);
    s.zeta = zeta;
    s.ruined.assign(K, false);
    s.blocks.resize(K * K);
    for (int k = 0; k < K; ++k)
      for (int l = 0; l < K; ++l) s.block(k, l) = phi[k] * phi[l].adjoint();
    apply_absorption(s);
    return s;
  }

  WeightVector weights_unchecked(const SystemState& s) const {
    WeightVector w{RealVector::Zero(s.branches())};
    for (int k = 0; k < s.branches(); ++k)
      if (!s.ruined[k]) w.w(k) = std::norm(s.amplitudes[k]) * s.block(k, k).trace().real();
    return w;
  }

  /// w_k = |c_k|^2 Tr R_kk.
  WeightVector compute_weights(const SystemState& s) const {
    WeightVector w = weights_unchecked(s);
    if (std::abs(w.total() - 1.0) > 1e-6)
      throw IntegrationDiverged("compute_weights: total weight drifted to " + std::to_string(w.total()));
    return w;
  }

  BranchMeans branch_means(const SystemState& s) const { return means_from(s.blocks, s.ruined, products(s.blocks, s.ruined)); }

  PumpingMatrix pumping_coefficients(const SystemState& s) const { return pumping_matrix(branch_means(s)); }

  NoHeating no_heating(const SystemState& s) const { return no_heating_from(s, products(s.blocks, s.ruined)); }
  double no_heating_check(const SystemState& s) const { return no_heating(s).value; }

  struct Observation {
    WeightVector weights;
    PumpingMatrix pumping;
    NoHeating heat;
  };

  /// Weights, pumping coefficients and the no-heating value from one set of products.
  Observation observe(const SystemState& s) const {
    const auto prod = products(s.blocks, s.ruined);
    return {weights_unchecked(s), pumping_matrix(means_from(s.blocks, s.ruined, prod)), no_heating_from(s, prod)};
  }

  /// Right-hand side for every block: the nonlinear flow, plus -i[H0, R] in
  /// the Schroedinger picture.
  std::vector<Matrix> rhs(const SystemState& s) const {
    return rhs_blocks(s.blocks, s.ruined, s.amplitudes, s.zeta, options_.picture == Picture::schroedinger);
  }

  /// One accepted step of size dt followed by absorption of ruined branches.
  SystemState step(const SystemState& s, double dt) const {
    if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
    SystemState out = s;
    if (options_.picture == Picture::interaction) {
      apply_linear(out.blocks, out.ruined, s.time, 0.5 * dt);
      integrate_adaptive(out, dt, /*with_linear=*/false);
      apply_linear(out.blocks, out.ruined, s.time + 0.5 * dt, 0.5 * dt);
    } else {
      integrate_adaptive(out, dt, /*with_linear=*/true);
    }
    out.time = s.time + dt;
    apply_absorption(out);
    return out;
  }

  /// Applies the ruin policy: branches below epsilon are zeroed and the
  /// survivors rescaled so the total weight is one again.
  void apply_absorption(SystemState& s) const {
    WeightVector w = weights_unchecked(s);
    const Absorption abs = absorb(w, s.ruined, options_.epsilon);
    if (abs.newly_ruined.empty()) return;
    const int K = s.branches();
    for (int k : abs.newly_ruined)
      for (int l = 0; l < K; ++l) {
        s.block(k, l).setZero();
        s.block(l, k).setZero();
      }
    for (int k = 0; k < K; ++k)
      for (int l = 0; l < K; ++l)
        if (!s.ruined[k] && !s.ruined[l]) s.block(k, l) *= abs.scale;
  }

 private:
  static std::vector<int> dims_of(const DetectorList& dets) {
    if (dets.empty()) throw std::invalid_argument("FullEngine: at least one detector required");
    std::vector<int> dims;
    for (const auto& d : dets) {
      if (!d) throw std::invalid_argument("FullEngine: null detector model");
      dims.push_back(d->dim());
    }
    return dims;
  }

  // products[d][k*K+l] = p_d R_kl (empty for ruined pairs)
  using Products = std::vector<std::vector<Matrix>>;

  Products products(const std::vector<Matrix>& blocks, const std::vector<bool>& ruined) const {
    const int K = static_cast<int>(ruined.size());
    Products out(detectors(), std::vector<Matrix>(K * K));
    for (int d = 0; d < detectors(); ++d)
      for (int k = 0; k < K; ++k)
        for (int l = 0; l < K; ++l)
          if (!ruined[k] && !ruined[l])
            space_.apply_left(detectors_[d]->momentum().matrix(), d, blocks[k * K + l], out[d][k * K + l]);
    return out;
  }

  BranchMeans means_from(const std::vector<Matrix>& blocks, const std::vector<bool>& ruined,
                         const Products& prod) const {
    const int K = static_cast<int>(ruined.size());
    BranchMeans m{RealMatrix::Zero(K, detectors()), RealMatrix::Zero(K, detectors()), std::vector<bool>(K, false)};
    for (int k = 0; k < K; ++k) {
      if (ruined[k]) continue;
      const Matrix& r = blocks[k * K + k];
      const double tr = r.trace().real();
      if (!(tr > kVanishThreshold)) continue;
      m.live[k] = true;
      const RealVector diag = r.diagonal().real();
      for (int d = 0; d < detectors(); ++d) {
        m.x(k, d) = diag.dot(x_lift_[d]) / tr;
        m.p(k, d) = prod[d][k * K + k].trace().real() / tr;
      }
    }
    return m;
  }

  NoHeating no_heating_from(const SystemState& s, const Products& prod) const {
    const int K = s.branches();
    cplx total = 0.0;
    double rho_norm2 = 0.0, scale = 0.0;
    for (int k = 0; k < K; ++k)
      for (int l = 0; l < K; ++l)
        if (!s.ruined[k] && !s.ruined[l])
          rho_norm2 += std::norm(s.amplitudes[k]) * std::norm(s.amplitudes[l]) * s.block(k, l).squaredNorm();
    for (int d = 0; d < detectors(); ++d) {
      const RealVector& x = x_lift_[d];
      cplx t1 = 0.0, t2 = 0.0;
      double xrp2 = 0.0, prx2 = 0.0;
      for (int k = 0; k < K; ++k)
        for (int l = 0; l < K; ++l) {
          if (s.ruined[k] || s.ruined[l]) continue;
          const double g = std::norm(s.amplitudes[k]) * std::norm(s.amplitudes[l]);
          const Matrix& p_kl = prod[d][k * K + l];
          const Matrix& p_lk = prod[d][l * K + k];
          const Matrix& r_lk = s.block(l, k);
          // Tr[x rho_kl p rho_lk] with rho_kl p = c_k c_l* (p R_lk)^dagger
          t1 += g * (p_lk.conjugate().cwiseProduct(r_lk) * x).sum();
          // Tr[p rho_kl x rho_lk]
          t2 += g * (p_kl.cwiseProduct(r_lk.transpose()) * x).sum();
          xrp2 += g * (x.asDiagonal() * p_lk.adjoint()).squaredNorm();
          prx2 += g * (p_kl * x.asDiagonal()).squaredNorm();
        }
      total += t1 - t2;
      scale += (std::sqrt(xrp2) + std::sqrt(prx2)) * std::sqrt(rho_norm2);
    }
    NoHeating out;
    out.raw = std::abs(total);
    out.value = std::abs(s.zeta) * out.raw;
    out.scale = scale;
    return out;
  }

  std::vector<Matrix> rhs_blocks(const std::vector<Matrix>& blocks, const std::vector<bool>& ruined,
                                 const std::vector<cplx>& amps, double zeta, bool with_linear = false) const {
    const int K = static_cast<int>(ruined.size());
    const Products prod = products(blocks, ruined);
    const BranchMeans means = means_from(blocks, ruined, prod);
    // beta_d = sum_m w_m <p_d>_m, alpha_d = sum_m w_m <x_d>_m
    RealVector alpha = RealVector::Zero(detectors()), beta = RealVector::Zero(detectors());
    for (int m = 0; m < K; ++m) {
      if (!means.live[m]) continue;
      const double w = std::norm(amps[m]) * blocks[m * K + m].trace().real();
      for (int d = 0; d < detectors(); ++d) {
        alpha(d) += w * means.x(m, d);
        beta(d) += w * means.p(m, d);
      }
    }
    RealVector s_diag = RealVector::Zero(space_.size());
    for (int d = 0; d < detectors(); ++d) s_diag += beta(d) * x_lift_[d];

    std::vector<Matrix> combined(K * K);
    for (int idx = 0; idx < K * K; ++idx) {
      if (prod[0][idx].size() == 0) continue;
      combined[idx] = alpha(0) * prod[0][idx];
      for (int d = 1; d < detectors(); ++d) combined[idx] += alpha(d) * prod[d][idx];
    }

    std::vector<Matrix> out(K * K);
    for (int k = 0; k < K; ++k)
      for (int l = 0; l < K; ++l) {
        const int idx = k * K + l;
        if (ruined[k] || ruined[l]) {
          out[idx] = Matrix::Zero(blocks[idx].rows(), blocks[idx].cols());
          continue;
        }
        detail::anticommutator_flow(s_diag, blocks[idx], combined[idx], combined[l * K + k], zeta, out[idx]);
      }
    if (with_linear) {
      std::vector<Matrix> h(K * K);
      for (int idx = 0; idx < K * K; ++idx) {
        if (prod[0][idx].size() == 0) continue;
        h[idx] = space_.apply_left(detectors_[0]->hamiltonian().matrix(), 0, blocks[idx]);
        for (int d = 1; d < detectors(); ++d)
          h[idx] += space_.apply_left(detectors_[d]->hamiltonian().matrix(), d, blocks[idx]);
      }
      const cplx minus_i(0.0, -1.0);
      for (int k = 0; k < K; ++k)
        for (int l = 0; l < K; ++l) {
          if (ruined[k] || ruined[l]) continue;
          out[k * K + l] += minus_i * (h[k * K + l] - h[l * K + k].adjoint());
        }
    }
    return out;
  }

  double weight_total(const std::vector<Matrix>& blocks, const std::vector<bool>& ruined,
                      const std::vector<cplx>& amps, bool* negative) const {
    const int K = static_cast<int>(ruined.size());
    double total = 0.0;
    for (int k = 0; k < K; ++k) {
      if (ruined[k]) continue;
      const double w = std::norm(amps[k]) * blocks[k * K + k].trace().real();
      if (w < 0.0 || !std::isfinite(w)) *negative = true;
      total += w;
    }
    return total;
  }

  void rk4(std::vector<Matrix>& blocks, const SystemState& s, double dt, bool with_linear) const {
    const int n = static_cast<int>(blocks.size());
    auto f = [&](const std::vector<Matrix>& y) { return rhs_blocks(y, s.ruined, s.amplitudes, s.zeta, with_linear); };
    auto shifted = [&](const std::vector<Matrix>& k, double h) {
      std::vector<Matrix> y(blocks);
      for (int i = 0; i < n; ++i)
        if (k[i].size()) y[i] += h * k[i];
      return y;
    };
    const auto k1 = f(blocks);
    const auto k2 = f(shifted(k1, 0.5 * dt));
    const auto k3 = f(shifted(k2, 0.5 * dt));
    const auto k4 = f(shifted(k3, dt));
    for (int i = 0; i < n; ++i) {
      if (!k1[i].size()) continue;
      blocks[i] += (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
  }

  /// RK4 over dt, halved recursively while the step moves the total weight by
  /// more than the tolerance or drives a weight negative.
  void integrate_adaptive(SystemState& s, double dt, bool with_linear) const {
    bool neg = false;
    const double before = weight_total(s.blocks, s.ruined, s.amplitudes, &neg);
    std::vector<Matrix> trial = s.blocks;
    rk4(trial, s, dt, with_linear);
    neg = false;
    const double after = weight_total(trial, s.ruined, s.amplitudes, &neg);
    if (!neg && std::abs(after - before) <= options_.weight_tolerance) {
      s.blocks = std::move(trial);
      return;
    }
    if (0.5 * dt < options_.dt_min)
      throw IntegrationDiverged("step: weight drift persists below dt_min");
    integrate_adaptive(s, 0.5 * dt, with_linear);
    integrate_adaptive(s, 0.5 * dt, with_linear);
  }

  void apply_linear(std::vector<Matrix>& blocks, const std::vector<bool>& ruined, double t0, double tau) const {
    const int K = static_cast<int>(ruined.size());
    std::vector<Matrix> u;
    for (int d = 0; d < detectors(); ++d) u.push_back(propagators_[d].unitary(t0, tau));
    Matrix tmp;
    for (int k = 0; k < K; ++k)
      for (int l = k; l < K; ++l) {
        if (ruined[k] || ruined[l]) continue;
        Matrix& r = blocks[k * K + l];
        for (int d = 0; d < detectors(); ++d) {
          space_.apply_left(u[d], d, r, tmp);
          r.swap(tmp);
        }
        Matrix adj = r.adjoint();
        for (int d = 0; d < detectors(); ++d) {
          space_.apply_left(u[d], d, adj, tmp);
          adj.swap(tmp);
        }
        // U R_kl U^dagger; the mirrored block is its adjoint.
        if (l != k) blocks[l * K + k] = adj;
        r = adj.adjoint();
      }
  }

  DetectorList detectors_;
  DynamicsOptions options_;
  TensorSpace space_;
  std::vector<RealVector> x_lift_;
  std::vector<Propagator> propagators_;
};

}  // namespace collapse
