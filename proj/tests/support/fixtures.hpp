#pragma once

// Small instances shared by the unit tests and the acceptance runner.

#include <cmath>
#include <memory>
#include <vector>

#include "collapse/full_dynamics.hpp"
#include "collapse/product_dynamics.hpp"
#include "reference_integrator.hpp"

namespace fixtures {

using namespace collapse;

/// Two branches on one dim-8 detector: quiet and hit packets at fixed centers.
struct OracleInstance {
  std::shared_ptr<const DetectorModel> model;
  std::vector<cplx> amplitudes;
  Vector quiet, hit;

  DetectorList detectors() const { return {model}; }
  std::vector<BranchLabel> labels() const { return {{0, {false}}, {1, {true}}}; }
  std::vector<std::vector<Vector>> states() const { return {{quiet}, {hit}}; }

  oracle::ReferenceIntegrator reference(double zeta) const {
    const Matrix x = model->position_diagonal().cast<cplx>().asDiagonal();
    return oracle::ReferenceIntegrator(2, model->hamiltonian().matrix(), x, model->momentum().matrix(), zeta);
  }
  Matrix reference_state() const { return reference(0.0).initial_state(amplitudes, {quiet, hit}); }
};

inline OracleInstance oracle_instance() {
  OracleInstance o;
  o.model = std::make_shared<const DetectorModel>(Grid(8, -4.0, 4.0), InvertedOscillator{1.0, 0.05});
  o.amplitudes = {std::sqrt(0.4), std::sqrt(0.6)};
  o.quiet = gaussian_packet(o.model->grid(), 0.3, 0.2, 1.0);
  o.hit = gaussian_packet(o.model->grid(), 1.2, -0.5, 1.0);
  return o;
}

/// Dense density matrix sum_kl c_k c_l^* |k><l| (x) R_kl of a full-engine state.
inline Matrix dense_state(const SystemState& s) {
  const int K = s.branches();
  const Eigen::Index n = s.block(0, 0).rows();
  Matrix rho = Matrix::Zero(K * n, K * n);
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < K; ++l)
      rho.block(k * n, l * n, n, n) = s.amplitudes[k] * std::conj(s.amplitudes[l]) * s.block(k, l);
  return rho;
}

/// Branch k hits detector k (k < D); extra branches hit nothing.
struct Instance {
  std::vector<BranchLabel> labels;
  std::vector<cplx> amplitudes;
  std::vector<std::vector<Vector>> states;
};

inline Instance sampled_instance(const DetectorList& models, const std::vector<double>& weights, std::uint64_t seed) {
  const int D = static_cast<int>(models.size());
  const int K = static_cast<int>(weights.size());
  Instance out;
  std::vector<DetectorStates> draws;
  for (int d = 0; d < D; ++d) {
    InitialStateSampler sampler(SamplerParams{}, derive_seed(seed, d));
    draws.push_back(sample_detector_states(sampler, *models[d], PhasePoint{1.0, 1.0}));
  }
  for (int k = 0; k < K; ++k) {
    std::vector<bool> hit(D, false);
    if (k < D) hit[k] = true;
    out.labels.push_back({k, hit});
    out.amplitudes.push_back(std::sqrt(weights[k]));
    std::vector<Vector> st;
    for (int d = 0; d < D; ++d) st.push_back(hit[d] ? draws[d].hit : draws[d].quiet);
    out.states.push_back(std::move(st));
  }
  return out;
}

}  // namespace fixtures
