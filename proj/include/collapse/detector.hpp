#pragma once

// Toy metastable detectors: the linear Hamiltonian of one detector coordinate
// and the sampler of its uncontrollable initial state.

#include <Eigen/Eigenvalues>
#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <variant>
#include <vector>

#include "collapse/hilbert.hpp"
#include "collapse/random.hpp"

namespace collapse {

/// V(x) = barrier_height * ((x / well_position)^2 - 1)^2 + tilt * x
struct BiasedDoubleWell {
  double barrier_height = 1.0;
  double tilt = 0.1;
  double well_position = 1.0;
};

/// V(x) = -m curvature^2 x^2 / 2 + quartic x^4
struct InvertedOscillator {
  double curvature = 1.0;
  double quartic = 0.0;
};

/// Harmonic well m frequency^2 x^2 / 2 plus kicks kick_strength * cos(x)
/// delivered at t = period, 2 period, ...
struct KickedOscillator {
  double kick_strength = 1.0;
  double period = 1.0;
  double frequency = 1.0;
};

using Potential = std::variant<BiasedDoubleWell, InvertedOscillator, KickedOscillator>;

/// Static part of the potential; kicks are handled by Propagator.
inline double potential_value(const Potential& potential, double x, double mass) {
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, BiasedDoubleWell>) {
          const double u = x / v.well_position;
          return v.barrier_height * (u * u - 1.0) * (u * u - 1.0) + v.tilt * x;
        } else if constexpr (std::is_same_v<T, InvertedOscillator>) {
          return -0.5 * mass * v.curvature * v.curvature * x * x + v.quartic * x * x * x * x;
        } else {
          return 0.5 * mass * v.frequency * v.frequency * x * x;
        }
      },
      potential);
}

class DetectorModel;
Operator build_hamiltonian(const DetectorModel& model);

class DetectorModel {
 public:
  DetectorModel(Grid grid, Potential potential, double mass = 1.0,
                MomentumScheme scheme = MomentumScheme::spectral)
      : grid_(std::move(grid)),
        potential_(potential),
        mass_(mass),
        scheme_(scheme),
        x_(build_position_operator(grid_)),
        p_(build_momentum_operator(grid_, scheme)),
        x_diag_(grid_.coordinates()),
        h0_(Matrix::Zero(1, 1), true) {
    if (!(mass > 0.0)) throw std::invalid_argument("DetectorModel: mass must be positive");
    if (const auto* kick = std::get_if<KickedOscillator>(&potential_); kick && !(kick->period > 0.0))
      throw std::invalid_argument("DetectorModel: kick period must be positive");
    h0_ = build_hamiltonian(*this);
  }

  /// Unstable top of an inverted oscillator, confined by a weak quartic wall.
  static DetectorModel default_model(int n_points = 64) {
    return DetectorModel(Grid(n_points, -8.0, 8.0), InvertedOscillator{1.0, 0.05});
  }

  const Grid& grid() const { return grid_; }
  const Potential& potential() const { return potential_; }
  double mass() const { return mass_; }
  MomentumScheme momentum_scheme() const { return scheme_; }
  const Operator& position() const { return x_; }
  const Operator& momentum() const { return p_; }
  const Operator& hamiltonian() const { return h0_; }
  const RealVector& position_diagonal() const { return x_diag_; }
  int dim() const { return grid_.size(); }

 private:
  Grid grid_;
  Potential potential_;
  double mass_;
  MomentumScheme scheme_;
  Operator x_;
  Operator p_;
  RealVector x_diag_;
  Operator h0_;
};

/// H0 = p^2 / (2m) + V(x), with the kicked model contributing its static well only.
inline Operator build_hamiltonian(const DetectorModel& model) {
  const Matrix& p = model.momentum().matrix();
  Matrix h = (p * p) / (2.0 * model.mass());
  for (int i = 0; i < model.dim(); ++i)
    h(i, i) += potential_value(model.potential(), model.grid().coordinate(i), model.mass());
  return Operator::hermitian(h);
}

/// exp(-i H0 t) from one eigendecomposition, with kicks inserted at their times.
class Propagator {
 public:
  explicit Propagator(const DetectorModel& model) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(model.hamiltonian().matrix());
    if (eig.info() != Eigen::Success) throw std::runtime_error("Propagator: eigensolver failed");
    vectors_ = eig.eigenvectors();
    energies_ = eig.eigenvalues();
    if (const auto* kick = std::get_if<KickedOscillator>(&model.potential())) {
      period_ = kick->period;
      kick_ = Vector(model.dim());
      for (int i = 0; i < model.dim(); ++i)
        kick_(i) = std::polar(1.0, -kick->kick_strength * std::cos(model.grid().coordinate(i)));
    }
  }

  bool time_dependent() const { return period_ > 0.0; }

  /// exp(-i H0 tau) for the static Hamiltonian.
  const Matrix& free_unitary(double tau) const {
    for (auto& entry : cache_)
      if (entry.valid && entry.tau == tau) return entry.u;
    auto& slot = cache_[next_slot_];
    next_slot_ = (next_slot_ + 1) % cache_.size();
    Vector phases(energies_.size());
    for (Eigen::Index i = 0; i < energies_.size(); ++i) phases(i) = std::polar(1.0, -energies_(i) * tau);
    slot.u = vectors_ * phases.asDiagonal() * vectors_.adjoint();
    slot.tau = tau;
    slot.valid = true;
    return slot.u;
  }

  /// Linear evolution over (t0, t0 + dt].
  Matrix unitary(double t0, double dt) const {
    if (!time_dependent()) return free_unitary(dt);
    const double t1 = t0 + dt;
    Matrix u = Matrix::Identity(energies_.size(), energies_.size());
    double t = t0;
    for (long n = kicks_up_to(t0) + 1; n <= kicks_up_to(t1); ++n) {
      const double tk = n * period_;
      u = kick_.asDiagonal() * (free_unitary(tk - t) * u);
      t = tk;
    }
    return free_unitary(t1 - t) * u;
  }

  Vector evolve(const Vector& psi, double t0, double dt) const { return unitary(t0, dt) * psi; }

 private:
  long kicks_up_to(double t) const { return static_cast<long>(std::floor(t / period_ + 1e-9)); }

  struct CacheEntry {
    double tau = 0.0;
    Matrix u;
    bool valid = false;
  };

  Matrix vectors_;
  RealVector energies_;
  double period_ = 0.0;
  Vector kick_;
  mutable std::array<CacheEntry, 4> cache_{};
  mutable std::size_t next_slot_ = 0;
};

struct PhasePoint {
  double x = 0.0;
  double p = 0.0;
};

/// Normalized Gaussian packet centered at (x0, p0) with position width `width`.
inline Vector gaussian_packet(const Grid& grid, double x0, double p0, double width) {
  Vector psi(grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    const double dx = grid.coordinate(i) - x0;
    psi(i) = std::polar(std::exp(-dx * dx / (4.0 * width * width)), p0 * dx);
  }
  return psi / psi.norm();
}

inline double boundary_amplitude(const Vector& psi) {
  return std::max(std::abs(psi(0)), std::abs(psi(psi.size() - 1)));
}

struct SamplerParams {
  double mean_x0 = 0.0;
  double mean_p0 = 0.0;
  double spread_x = 0.3;
  double spread_p = 0.3;
  double packet_width = 0.7;
};

/// Draws the hidden parameters (packet centers) of one detector; owns its stream.
class InitialStateSampler {
 public:
  static constexpr double kMaxBoundaryAmplitude = 1e-8;
  static constexpr int kMaxRejects = 100;

  InitialStateSampler(SamplerParams params, std::uint64_t seed) : params_(params), rng_(seed) {
    if (!(params.spread_x > 0.0) || !(params.spread_p > 0.0))
      throw std::invalid_argument("InitialStateSampler: spreads must be positive");
    if (!(params.packet_width > 0.0))
      throw std::invalid_argument("InitialStateSampler: packet width must be positive");
  }

  const SamplerParams& params() const { return params_; }
  Rng& rng() { return rng_; }

  PhasePoint draw_center() {
    const double x = rng_.normal(params_.mean_x0, params_.spread_x);
    const double p = rng_.normal(params_.mean_p0, params_.spread_p);
    return {x, p};
  }

 private:
  SamplerParams params_;
  Rng rng_;
};

/// Quiet and hit states of one detector sharing the same hidden draw; the hit
/// state is displaced in phase space by the particle's kick.
struct DetectorStates {
  PhasePoint center;
  Vector quiet;
  Vector hit;
};

inline DetectorStates sample_detector_states(InitialStateSampler& sampler, const DetectorModel& model,
                                             PhasePoint hit_kick) {
  const double width = sampler.params().packet_width;
  for (int attempt = 0; attempt < InitialStateSampler::kMaxRejects; ++attempt) {
    const PhasePoint c = sampler.draw_center();
    Vector quiet = gaussian_packet(model.grid(), c.x, c.p, width);
    Vector hit = gaussian_packet(model.grid(), c.x + hit_kick.x, c.p + hit_kick.p, width);
    if (boundary_amplitude(quiet) <= InitialStateSampler::kMaxBoundaryAmplitude &&
        boundary_amplitude(hit) <= InitialStateSampler::kMaxBoundaryAmplitude)
      return {c, std::move(quiet), std::move(hit)};
  }
  throw std::runtime_error("sample_initial_state: packet escapes the grid after 100 rejections");
}

inline Vector sample_initial_state(InitialStateSampler& sampler, const DetectorModel& model) {
  return sample_detector_states(sampler, model, {}).quiet;
}

/// Finite-time divergence rate of two copies of `state` displaced by
/// `separation` in position. Phase-space distance of the mean values is
/// recorded each step; the exponent is the least-squares slope of its log
/// over the second half of the run.
inline double lyapunov_probe(const DetectorModel& model, const Vector& state, double dt, int steps,
                             double separation = 1e-8) {
  if (steps < 2 || !(dt > 0.0)) throw std::invalid_argument("lyapunov_probe: need dt > 0 and steps >= 2");
  const Matrix& p = model.momentum().matrix();
  const RealVector& x = model.position_diagonal();
  auto means = [&](const Vector& psi) {
    const double norm2 = psi.squaredNorm();
    const double mx = (psi.cwiseAbs2().array() * x.array()).sum() / norm2;
    const double mp = psi.dot(p * psi).real() / norm2;
    return PhasePoint{mx, mp};
  };

  Vector a = state / state.norm();
  Vector b = a - cplx(0.0, separation) * (p * a);  // first-order translation exp(-i s p)
  b /= b.norm();

  Propagator prop(model);
  std::vector<double> times, logs;
  double t = 0.0;
  for (int s = 1; s <= steps; ++s) {
    const Matrix u = prop.unitary(t, dt);
    a = u * a;
    b = u * b;
    t += dt;
    const PhasePoint ma = means(a), mb = means(b);
    const double d = std::hypot(ma.x - mb.x, ma.p - mb.p);
    if (d == 0.0) return 0.0;
    if (s >= steps / 2) {
      times.push_back(t);
      logs.push_back(std::log(d));
    }
  }
  const double n = static_cast<double>(times.size());
  double st = 0, sl = 0, stt = 0, stl = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    st += times[i];
    sl += logs[i];
    stt += times[i] * times[i];
    stl += times[i] * logs[i];
  }
  const double denom = n * stt - st * st;
  return denom > 0.0 ? (n * stl - st * sl) / denom : 0.0;
}

}  // namespace collapse
