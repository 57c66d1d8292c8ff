#pragma once

// Invariant suites run by `collapse validate`. The fast level exercises the
// pumping algebra, the ruin engine and short full/product trajectories; the
// full level adds the product-vs-full equivalence and the picture cross-check.

#include <chrono>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "collapse/scenarios.hpp"

namespace collapse {

enum class ValidationLevel { fast, full };

/// Replaceable pieces, so a suite can be shown to catch a broken implementation.
struct ValidationHooks {
  std::function<PumpingMatrix(const BranchMeans&)> pumping = [](const BranchMeans& m) { return pumping_matrix(m); };
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

inline std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

/// Two-branch instance: branch 0 hits detector 0, branch 1 hits detector
/// D-1 (the same detector when D = 1).
struct TwoBranchInstance {
  std::vector<BranchLabel> labels;
  std::vector<cplx> amplitudes;
  std::vector<std::vector<Vector>> states;
};

inline TwoBranchInstance two_branch_instance(const DetectorList& models, double w0, std::uint64_t seed) {
  const int D = static_cast<int>(models.size());
  TwoBranchInstance out;
  std::vector<bool> h0(D, false), h1(D, false);
  h0[0] = true;
  if (D > 1) h1[D - 1] = true;
  out.labels = {{0, h0}, {1, h1}};
  out.amplitudes = {std::sqrt(w0), std::sqrt(1.0 - w0)};
  out.states.assign(2, std::vector<Vector>(D));
  for (int d = 0; d < D; ++d) {
    InitialStateSampler sampler(SamplerParams{}, derive_seed(seed, d));
    const DetectorStates s = sample_detector_states(sampler, *models[d], PhasePoint{1.0, 1.0});
    out.states[0][d] = h0[d] ? s.hit : s.quiet;
    out.states[1][d] = h1[d] ? s.hit : s.quiet;
  }
  return out;
}

inline BranchMeans random_means(Rng& rng, int K, int D) {
  BranchMeans m{RealMatrix(K, D), RealMatrix(K, D), std::vector<bool>(K, true)};
  for (int k = 0; k < K; ++k)
    for (int d = 0; d < D; ++d) {
      m.x(k, d) = rng.normal(0.0, 3.0);
      m.p(k, d) = rng.normal(0.0, 3.0);
    }
  return m;
}

inline SuiteResult check(std::string name, bool ok, std::string detail) { return {std::move(name), ok, std::move(detail)}; }

inline SuiteResult suite_antisymmetry(const ValidationHooks& hooks) {
  Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int K = 2 + static_cast<int>(rng.uniform() * 7);
    const int D = 1 + static_cast<int>(rng.uniform() * 3);
    const PumpingMatrix a = hooks.pumping(random_means(rng, K, D));
    worst = std::max(worst, a.antisymmetry_error() / std::max(1.0, a.a.cwiseAbs().maxCoeff()));
  }
  return check("pumping antisymmetry", worst == 0.0, "max |A + A^T| / max|A| = " + sci(worst) + " over 1000 states");
}

inline SuiteResult suite_ruin_conservation() {
  Rng rng(202);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const int K = 2 + i % 5;
    RealVector w(K);
    for (int k = 0; k < K; ++k) w(k) = 0.05 + rng.uniform();
    w /= w.sum();
    NoiseModel noise(NoiseSpec{}, K, derive_seed(202, i));
    RuinState s = make_ruin_state(w, kDefaultEpsilon, noise.rng().seed());
    for (int n = 0; n < 200; ++n) s = step_ruin(s, noise.sample(1e-3, s.ruined), 1.0, 1e-3);
    worst = std::max(worst, s.weights.sum_error());
  }
  return check("ruin weight conservation", worst <= 1e-9, "max |sum w - 1| = " + sci(worst));
}

inline SuiteResult suite_born(const ValidationHooks&) {
  RealVector w0(2);
  w0 << 0.3, 0.7;
  const long n = 4000;
  const BornReport r = born_statistics(w0, NoiseSpec{}, n, 77, RuinOptions{}, 1);
  const double f = r.frequencies(0), sigma = std::sqrt(0.3 * 0.7 / n);
  const bool ok = std::abs(f - 0.3) <= 3.0 * sigma && r.timeouts == 0 && r.revivals == 0;
  return check("born rule (ruin)", ok,
               "f0 = " + sci(f) + " vs 0.3 +- " + sci(3.0 * sigma) + ", timeouts " + std::to_string(r.timeouts) +
                   ", revivals " + std::to_string(r.revivals));
}

inline SuiteResult suite_determinism() {
  RealVector w0(3);
  w0 << 0.2, 0.3, 0.5;
  const BornReport a = born_statistics(w0, NoiseSpec{}, 300, 5, RuinOptions{}, 1);
  const BornReport b = born_statistics(w0, NoiseSpec{}, 300, 5, RuinOptions{}, 3);
  bool same = a.records.size() == b.records.size();
  for (std::size_t i = 0; same && i < a.records.size(); ++i)
    same = a.records[i].winner == b.records[i].winner && a.records[i].steps == b.records[i].steps &&
           a.records[i].seed == b.records[i].seed;
  return check("seeded determinism", same, "1 vs 3 threads, 300 trials");
}

inline SuiteResult suite_amplitudes() {
  double worst = 0.0;
  for (double a : {0.0, 0.4, 1.3}) {
    const auto c = build_bell_amplitudes(a, a);
    worst = std::max({worst, std::norm(c[0]), std::norm(c[3]), std::abs(std::norm(c[1]) - 0.5)});
  }
  for (const char* label : {"XXX", "XYY", "YXY", "YYX"}) {
    const auto phi = ghz_angles_from_label(label);
    const auto c = build_ghz_amplitudes({phi[0], phi[1], phi[2]});
    const int want = std::string(label) == "XXX" ? 1 : -1;
    for (int k = 0; k < 8; ++k) {
      const int parity = ((k >> 2) & 1) ^ ((k >> 1) & 1) ^ (k & 1) ? -1 : 1;
      worst = std::max(worst, parity == want ? std::abs(std::norm(c[k]) - 0.25) : std::norm(c[k]));
    }
  }
  return check("scenario amplitudes", worst <= 1e-15, "max deviation " + sci(worst));
}

/// Short full-engine trajectory: conservation, pairing, no-heating, and the
/// zeta = 0 limit.
inline std::vector<SuiteResult> suite_full_short(const ValidationHooks& hooks) {
  auto model = std::make_shared<const DetectorModel>(DetectorModel::default_model(32));
  const DetectorList models{model};
  const auto inst = two_branch_instance(models, 0.4, 11);
  FullEngine engine(models);
  double w_err = 0.0, heat = 0.0, pairing = 0.0, anti = 0.0;
  SystemState s = engine.assemble_initial_state(inst.labels, inst.amplitudes, inst.states, 0.1);
  for (int i = 0; i <= 300; ++i) {
    w_err = std::max(w_err, engine.weights_unchecked(s).sum_error());
    heat = std::max(heat, engine.no_heating(s).relative());
    anti = std::max(anti, hooks.pumping(engine.branch_means(s)).antisymmetry_error());
    for (int k = 0; k < 2; ++k)
      for (int l = 0; l < 2; ++l) pairing = std::max(pairing, max_abs(s.block(k, l) - s.block(l, k).adjoint()));
    if (i < 300) s = engine.step(s, 0.01);
  }
  SystemState z = engine.assemble_initial_state(inst.labels, inst.amplitudes, inst.states, 0.0);
  const RealVector w0 = engine.weights_unchecked(z).w;
  double drift = 0.0;
  for (int i = 0; i < 300; ++i) {
    z = engine.step(z, 0.01);
    drift = std::max(drift, (engine.weights_unchecked(z).w - w0).cwiseAbs().maxCoeff());
  }
  return {check("full: weight conservation", w_err <= 1e-9, "max |sum w - 1| = " + sci(w_err) + " over 300 steps"),
          check("full: hermitian pairing", pairing <= 1e-9, "max |R_kl - R_lk^+| = " + sci(pairing)),
          check("full: no-heating identity", heat <= 1e-10, "max relative trace = " + sci(heat)),
          check("full: pumping antisymmetry", anti == 0.0, "max |A + A^T| = " + sci(anti)),
          check("full: zeta = 0 limit", drift <= 1e-9, "max weight change = " + sci(drift))};
}

/// Product engine: global weights follow the product of local weights and the
/// global log-rate equals the sum of the local log-rates.
inline SuiteResult suite_rate_law(const ValidationHooks& hooks) {
  auto model = std::make_shared<const DetectorModel>(DetectorModel::default_model(16));
  const DetectorList models{model, model};
  const auto inst = two_branch_instance(models, 0.3, 12);
  ProductEngine engine(models);
  ProductState s = engine.assemble_initial_state(inst.labels, inst.amplitudes, inst.states, 0.1);
  double worst = 0.0;
  for (int i = 0; i <= 200; ++i) {
    const WeightVector w = engine.weights_unchecked(s);
    const RealVector global = pumping_rates(w, hooks.pumping(engine.branch_means(s)), s.zeta);
    const LocalRates local = engine.local_rates(s);
    for (int k = 0; k < 2; ++k) {
      double sum = 0.0;
      for (const auto& r : local.log_rate) sum += r(k);
      worst = std::max(worst, std::abs(global(k) / w[k] - sum));
    }
    if (i < 200) s = engine.step(s, 0.01);
  }
  return check("product: factorized rate law", worst <= 1e-10, "max |dlog w - sum_d dlog w^d| = " + sci(worst));
}

inline SuiteResult suite_product_vs_full() {
  auto model = std::make_shared<const DetectorModel>(DetectorModel::default_model(16));
  const DetectorList models{model, model};
  const auto inst = two_branch_instance(models, 0.3, 13);
  FullEngine full(models);
  ProductEngine product(models);
  SystemState f = full.assemble_initial_state(inst.labels, inst.amplitudes, inst.states, 0.1);
  ProductState p = product.assemble_initial_state(inst.labels, inst.amplitudes, inst.states, 0.1);
  double worst = 0.0;
  for (int i = 0; i <= 200; ++i) {
    const WeightVector wf = full.weights_unchecked(f), wp = product.weights_unchecked(p);
    for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(wf[k] - wp[k]) / std::abs(wf[k]));
    if (i < 200) {
      f = full.step(f, 0.01);
      p = product.step(p, 0.01);
    }
  }
  return check("product vs full equivalence", worst <= 1e-6, "max relative weight difference = " + sci(worst));
}

inline SuiteResult suite_pictures() {
  auto model = std::make_shared<const DetectorModel>(DetectorModel::default_model(16));
  const DetectorList models{model};
  const auto inst = two_branch_instance(models, 0.4, 14);
  DynamicsOptions schr;
  schr.picture = Picture::schroedinger;
  FullEngine a(models), b(models, schr);
  SystemState sa = a.assemble_initial_state(inst.labels, inst.amplitudes, inst.states, 0.2);
  SystemState sb = b.assemble_initial_state(inst.labels, inst.amplitudes, inst.states, 0.2);
  double worst = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const WeightVector wa = a.weights_unchecked(sa), wb = b.weights_unchecked(sb);
    for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(wa[k] - wb[k]));
    if (i < 400) {
      sa = a.step(sa, 0.0025);
      sb = b.step(sb, 0.0025);
    }
  }
  return check("interaction vs schroedinger picture", worst <= 1e-5, "max weight difference = " + sci(worst));
}

inline SuiteResult suite_chsh() {
  const double pi = std::numbers::pi;
  const double a[2] = {0.0, pi / 2}, b[2] = {pi / 4, 3 * pi / 4};
  const int pairs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  const long n = 5000;
  double e[4], var = 0.0;
  long revivals = 0;
  for (int i = 0; i < 4; ++i) {
    const auto c = build_bell_amplitudes(a[pairs[i][0]], b[pairs[i][1]]);
    RealVector w(4);
    for (int k = 0; k < 4; ++k) w(k) = std::norm(c[k]);
    const BornReport r = born_statistics(w, NoiseSpec{}, n, derive_seed(31, i), RuinOptions{}, 1);
    e[i] = r.frequencies(0) - r.frequencies(1) - r.frequencies(2) + r.frequencies(3);
    var += (1.0 - e[i] * e[i]) / n;
    revivals += r.revivals;
  }
  const double s = chsh_statistic(e[0], e[1], e[2], e[3]), sigma = std::sqrt(var);
  const bool ok = std::abs(std::abs(s) - 2.0 * std::numbers::sqrt2) <= 3.0 * sigma && revivals == 0;
  return check("chsh (ruin)", ok, "|S| = " + sci(std::abs(s)) + " +- " + sci(sigma));
}

}  // namespace detail

inline std::vector<SuiteResult> run_validation(ValidationLevel level, const ValidationHooks& hooks = {}) {
  std::vector<SuiteResult> out;
  auto timed = [&](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<SuiteResult> rs;
    try {
      if constexpr (std::is_same_v<std::decay_t<decltype(fn())>, SuiteResult>) rs.push_back(fn());
      else rs = fn();
    } catch (const std::exception& e) {
      rs.push_back({"suite raised", false, e.what()});
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto& r : rs) {
      r.seconds = sec / rs.size();
      out.push_back(std::move(r));
    }
  };
  timed([&] { return detail::suite_antisymmetry(hooks); });
  timed([] { return detail::suite_ruin_conservation(); });
  timed([&] { return detail::suite_born(hooks); });
  timed([] { return detail::suite_determinism(); });
  timed([] { return detail::suite_amplitudes(); });
  timed([&] { return detail::suite_full_short(hooks); });
  timed([&] { return detail::suite_rate_law(hooks); });
  if (level == ValidationLevel::full) {
    timed([] { return detail::suite_product_vs_full(); });
    timed([] { return detail::suite_pictures(); });
    timed([] { return detail::suite_chsh(); });
  }
  return out;
}

inline bool all_passed(const std::vector<SuiteResult>& rs) {
  for (const auto& r : rs)
    if (!r.passed) return false;
  return !rs.empty();
}

inline void print_validation(std::ostream& os, const std::vector<SuiteResult>& rs) {
  for (const auto& r : rs) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-5s %-38s", r.passed ? "PASS" : "FAIL", r.name.c_str());
    os << buf << " " << r.detail << " (" << detail::sci(r.seconds) << " s)\n";
  }
}

}  // namespace collapse
