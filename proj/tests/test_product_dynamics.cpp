#include <gtest/gtest.h>

#include "collapse/product_dynamics.hpp"
#include "fixtures.hpp"

using namespace collapse;

namespace {

struct TwoDetectorSetup {
  std::shared_ptr<const DetectorModel> model;
  DetectorList models;
  fixtures::Instance inst;

  explicit TwoDetectorSetup(std::uint64_t seed, int points = 8)
      : model(std::make_shared<const DetectorModel>(DetectorModel::default_model(points))),
        models{model, model},
        inst(fixtures::sampled_instance(models, {0.35, 0.65}, seed)) {}
};

/// Factor r_kl = phi_k phi_l^dagger with every norm scaled by `scale`.
DetectorFactor factor_of(const std::vector<Vector>& phi, double scale = 1.0) {
  const int K = static_cast<int>(phi.size());
  DetectorFactor f{0, K, std::vector<Matrix>(K * K)};
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < K; ++l) f.block(k, l) = scale * phi[k] * phi[l].adjoint();
  return f;
}

}  // namespace

TEST(LocalMean, ScaleInvariant) {
  const DetectorModel m = DetectorModel::default_model(32);
  const std::vector<Vector> phi{gaussian_packet(m.grid(), 0.4, -0.3, 0.7), gaussian_packet(m.grid(), -1.0, 0.6, 0.7)};
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(local_mean(factor_of(phi, 3.0), k, m.position()), local_mean(factor_of(phi), k, m.position()), 1e-14);
    EXPECT_NEAR(local_mean(factor_of(phi, 3.0), k, m.momentum()), local_mean(factor_of(phi), k, m.momentum()), 1e-14);
  }
}

TEST(LocalMean, GaussianCenters) {
  const DetectorModel m = DetectorModel::default_model(64);
  const DetectorFactor f = factor_of({gaussian_packet(m.grid(), 1.5, -0.8, 0.7)});
  EXPECT_NEAR(local_mean(f, 0, m.position()), 1.5, 1e-8);
  EXPECT_NEAR(local_mean(f, 0, m.momentum()), -0.8, 1e-8);
}

TEST(LocalMean, MatchesFullTensorMean) {
  TwoDetectorSetup t(31);
  ProductEngine pe(t.models);
  FullEngine fe(t.models);
  const ProductState ps = pe.assemble_initial_state(t.inst.labels, t.inst.amplitudes, t.inst.states, 0.1);
  const SystemState fs = fe.assemble_initial_state(t.inst.labels, t.inst.amplitudes, t.inst.states, 0.1);
  const TensorSpace space({8, 8});
  for (int d = 0; d < 2; ++d) {
    const Operator xd(space.apply_left(t.model->position().matrix(), d, Matrix::Identity(64, 64)), true);
    const Operator pd(space.apply_left(t.model->momentum().matrix(), d, Matrix::Identity(64, 64)), true);
    for (int k = 0; k < 2; ++k) {
      EXPECT_NEAR(local_mean(ps.factors[d], k, t.model->position()), mean_value(fs.branch_block(k, k), xd), 1e-10);
      EXPECT_NEAR(local_mean(ps.factors[d], k, t.model->momentum()), mean_value(fs.branch_block(k, k), pd), 1e-10);
    }
  }
}

TEST(LocalMean, DependsOnlyOnOwnFactor) {
  TwoDetectorSetup t(32);
  ProductEngine pe(t.models);
  ProductState s = pe.assemble_initial_state(t.inst.labels, t.inst.amplitudes, t.inst.states, 0.1);
  const BranchMeans before = pe.branch_means(s);
  // Replace detector 1 by an unrelated valid factor.
  const std::vector<Vector> other{gaussian_packet(t.model->grid(), -2.0, 1.0, 0.9), gaussian_packet(t.model->grid(), 2.0, -1.0, 0.5)};
  DetectorFactor f = factor_of(other, 1.7);
  f.detector = 1;
  s.factors[1] = f;
  const BranchMeans after = pe.branch_means(s);
  for (int k = 0; k < 2; ++k) {
    EXPECT_EQ(before.x(k, 0), after.x(k, 0));
    EXPECT_EQ(before.p(k, 0), after.p(k, 0));
  }
}

TEST(StepLocal, ZetaZeroLeavesFactorUnchanged) {
  TwoDetectorSetup t(33);
  ProductEngine pe(t.models);
  const ProductState s = pe.assemble_initial_state(t.inst.labels, t.inst.amplitudes, t.inst.states, 0.0);
  const DetectorFactor out = step_local(s.factors[0], *t.model, pe.weights_unchecked(s).w, pe.branch_means(s), 0.0, 0.05);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(out.blocks[i], s.factors[0].blocks[i]);
}

TEST(StepLocal, SingleBranchTraceIsConstant) {
  const DetectorModel m = DetectorModel::default_model(16);
  DetectorFactor f = factor_of({gaussian_packet(m.grid(), 0.5, 0.5, 0.7)});
  BranchMeans means{RealMatrix::Zero(1, 1), RealMatrix::Zero(1, 1), {true}};
  RealVector w = RealVector::Ones(1);
  for (int i = 0; i < 100; ++i) {
    means.x(0, 0) = local_mean(f, 0, m.position());
    means.p(0, 0) = local_mean(f, 0, m.momentum());
    f = step_local(f, m, w, means, 1.0, 0.01);
  }
  EXPECT_NEAR(f.block(0, 0).trace().real(), 1.0, 1e-10);
}

TEST(StepLocal, PreservesPairing) {
  TwoDetectorSetup t(34, 16);
  ProductEngine pe(t.models);
  ProductState s = pe.assemble_initial_state(t.inst.labels, t.inst.amplitudes, t.inst.states, 0.1);
  for (int i = 0; i < 100; ++i) s = pe.step(s, 0.01);
  for (const auto& f : s.factors) EXPECT_LE(f.pairing_error(), 1e-9);
}

TEST(ProductVsFull, TwoDetectorsDimEight) {
  TwoDetectorSetup t(35);
  ProductEngine pe(t.models);
  FullEngine fe(t.models);
  ProductState ps = pe.assemble_initial_state(t.inst.labels, t.inst.amplitudes, t.inst.states, 0.1);
  SystemState fs = fe.assemble_initial_state(t.inst.labels, t.inst.amplitudes, t.inst.states, 0.1);
  const TensorSpace space({8, 8});
  double w_err = 0.0, block_err = 0.0;
  for (int i = 0; i < 500; ++i) {
    ps = pe.step(ps, 0.01);
    fs = fe.step(fs, 0.01);
    const WeightVector wp = pe.weights_unchecked(ps), wf = fe.weights_unchecked(fs);
    for (int k = 0; k < 2; ++k) w_err = std::max(w_err, std::abs(wp[k] - wf[k]) / wf[k]);
    if (i % 50 == 49) {
      const SystemState assembled = pe.to_full(ps, space);
      for (int b = 0; b < 4; ++b)
        block_err = std::max(block_err, max_abs(assembled.blocks[b] - fs.blocks[b]) / max_abs(fs.blocks[b]));
    }
  }
  EXPECT_LE(w_err, 1e-6);
  EXPECT_LE(block_err, 1e-6);
}

TEST(LocalWeightRates, EqualMeansGiveZero) {
  BranchMeans m{RealMatrix::Constant(3, 2, 0.4), RealMatrix::Constant(3, 2, -1.2), std::vector<bool>(3, true)};
  RealVector w(3);
  w << 0.2, 0.3, 0.5;
  for (const auto& r : local_weight_rates(w, m, 1.0).log_rate) EXPECT_EQ(r.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LocalWeightRates, SingleDetectorReproducesGlobalRate) {
  Rng rng(3);
  BranchMeans m{RealMatrix(3, 1), RealMatrix(3, 1), std::vector<bool>(3, true)};
  for (int k = 0; k < 3; ++k) {
    m.x(k, 0) = rng.normal();
    m.p(k, 0) = rng.normal();
  }
  RealVector w(3);
  w << 0.2, 0.3, 0.5;
  const RealVector global = pumping_rates(WeightVector{w}, pumping_matrix(m), 0.7);
  const LocalRates local = local_weight_rates(w, m, 0.7);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(local.log_rate[0](k), global(k) / w(k), 1e-15);
}

TEST(LocalWeightRates, FactorizedRateLawOnTwoDetectors) {
  TwoDetectorSetup t(36, 16);
  ProductEngine pe(t.models);
  ProductState s = pe.assemble_initial_state(t.inst.labels, t.inst.amplitudes, t.inst.states, 0.1);
  for (int i = 0; i < 100; ++i) {
    const WeightVector w = pe.weights_unchecked(s);
    const RealVector global = pumping_rates(w, pe.pumping_coefficients(s), s.zeta);
    const LocalRates local = pe.local_rates(s);
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(global(k) / w[k], local.log_rate[0](k) + local.log_rate[1](k), 1e-10);
    s = pe.step(s, 0.01);
  }
}

TEST(LocalWeightRates, FiniteDifferenceOfReconstructedWeights) {
  TwoDetectorSetup t(37, 16);
  DynamicsOptions opt;
  opt.picture = Picture::schroedinger;
  ProductEngine pe(t.models, opt);
  ProductState s = pe.assemble_initial_state(t.inst.labels, t.inst.amplitudes, t.inst.states, 0.5);
  for (int i = 0; i < 20; ++i) s = pe.step(s, 0.01);
  const double h = 1e-4;
  const ProductState plus = pe.step(s, h);
  const LocalRates local = pe.local_rates(s);
  const WeightVector w0 = pe.weights_unchecked(s), w1 = pe.weights_unchecked(plus);
  const WeightVector w2 = pe.weights_unchecked(pe.step(plus, h));
  for (int k = 0; k < 2; ++k) {
    // One-sided second-order difference at t.
    const double fd = (-3.0 * std::log(w0[k]) + 4.0 * std::log(w1[k]) - std::log(w2[k])) / (2.0 * h);
    EXPECT_NEAR(fd, local.log_rate[0](k) + local.log_rate[1](k), 1e-6);
  }
}

TEST(ReconstructGlobalWeights, UnitLocalWeights) {
  const std::vector<cplx> c{std::sqrt(0.25), cplx(0.0, std::sqrt(0.75))};
  const std::vector<LocalWeights> lw{{0, RealVector::Ones(2)}, {1, RealVector::Ones(2)}};
  const WeightVector w = reconstruct_global_weights(c, lw);
  EXPECT_NEAR(w[0], 0.25, 1e-15);
  EXPECT_NEAR(w[1], 0.75, 1e-15);
}

TEST(ReconstructGlobalWeights, AnyVanishingFactorKillsBranch) {
  const std::vector<cplx> c{std::sqrt(0.5), std::sqrt(0.5)};
  RealVector a(2), b(2);
  a << 2.0, 1.0;
  b << 0.0, 1.0;
  const WeightVector w = reconstruct_global_weights_unchecked(c, {{0, a}, {1, b}});
  EXPECT_EQ(w[0], 0.0);
  EXPECT_THROW(reconstruct_global_weights(c, {{0, a}, {1, RealVector::Constant(2, 3.0)}}), IntegrationDiverged);
}

TEST(ReconstructGlobalWeights, MatchesFullEngineWeights) {
  TwoDetectorSetup t(38);
  ProductEngine pe(t.models);
  FullEngine fe(t.models);
  ProductState ps = pe.assemble_initial_state(t.inst.labels, t.inst.amplitudes, t.inst.states, 0.1);
  ps.factors[0].block(0, 0) *= 1.1;
  ps.factors[1].block(0, 0) /= 1.1;
  const SystemState fs = pe.to_full(ps, TensorSpace({8, 8}));
  const WeightVector wp = reconstruct_global_weights(ps.amplitudes, pe.local_weights(ps));
  const WeightVector wf = fe.compute_weights(fs);
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(wp[k], wf[k], 1e-10);
}

TEST(GlobalCoupling, LocalOnlyWeightsDivergeFromCorrectDynamics) {
  auto model = std::make_shared<const DetectorModel>(DetectorModel::default_model(16));
  const DetectorList models{model, model};
  const auto inst = fixtures::sampled_instance(models, {0.4, 0.6}, 39);
  DynamicsOptions loose;
  loose.weight_tolerance = 1.0;
  ProductEngine right(models), wrong(models, loose, WeightCoupling::local_only);
  ProductState a = right.assemble_initial_state(inst.labels, inst.amplitudes, inst.states, 0.3);
  ProductState b = wrong.assemble_initial_state(inst.labels, inst.amplitudes, inst.states, 0.3);
  double gap = 0.0, right_drift = 0.0;
  for (int i = 0; i < 200; ++i) {
    a = right.step(a, 0.01);
    b = wrong.step(b, 0.01);
    gap = std::max(gap, (right.weights_unchecked(a).w - wrong.weights_unchecked(b).w).cwiseAbs().maxCoeff());
    right_drift = std::max(right_drift, right.weights_unchecked(a).sum_error());
  }
  EXPECT_LE(right_drift, 1e-9);
  EXPECT_GT(gap, 1e-4);
  EXPECT_THROW(
      {
        ProductEngine strict(models, {}, WeightCoupling::local_only);
        ProductState c = strict.assemble_initial_state(inst.labels, inst.amplitudes, inst.states, 0.3);
        for (int i = 0; i < 200; ++i) c = strict.step(c, 0.01);
      },
      IntegrationDiverged);
}
