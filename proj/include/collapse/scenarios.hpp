#pragma once

// Stern-Gerlach, Bell-CHSH and GHZ measurement setups: branch labels,
// amplitudes from the source state, per-setting seeding, trial execution with
// any engine, and the correlation estimators.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "collapse/config.hpp"
#include "collapse/parallel.hpp"
#include "collapse/ruin.hpp"
#include "collapse/trajectory.hpp"

namespace collapse {

/// Singlet amplitudes for analyzer angles a (left) and b (right) in the x-z
/// plane. Branch order (++, +-, -+, --), index 2 s_left + s_right with s = 1 for "-".
inline std::vector<cplx> build_bell_amplitudes(double a, double b) {
  auto spin = [](double theta, int s) -> std::array<double, 2> {
    const double c = std::cos(0.5 * theta), sn = std::sin(0.5 * theta);
    return s == 0 ? std::array<double, 2>{c, sn} : std::array<double, 2>{-sn, c};
  };
  std::vector<cplx> out(4);
  for (int s1 = 0; s1 < 2; ++s1)
    for (int s2 = 0; s2 < 2; ++s2) {
      const auto u = spin(a, s1), v = spin(b, s2);
      // <u v | (|01> - |10>) / sqrt 2
      out[2 * s1 + s2] = (u[0] * v[1] - u[1] * v[0]) / std::sqrt(2.0);
    }
  return out;
}

/// GHZ state (|000> + |111>)/sqrt 2 measured along cos(phi_j) X + sin(phi_j) Y.
/// Branch index 4 s1 + 2 s2 + s3 with s = 1 for outcome -1.
inline std::vector<cplx> build_ghz_amplitudes(const std::array<double, 3>& phi) {
  std::vector<cplx> out(8);
  const cplx phase = std::polar(1.0, -(phi[0] + phi[1] + phi[2]));
  for (int b = 0; b < 8; ++b) {
    const int sign = ((b >> 2) & 1) ^ ((b >> 1) & 1) ^ (b & 1) ? -1 : 1;
    out[b] = (1.0 + static_cast<double>(sign) * phase) / 4.0;
  }
  return out;
}

/// One measurement setting: the branch structure and its seed stream.
struct Setting {
  std::string label;
  std::vector<double> angles;
  std::vector<BranchLabel> labels;
  std::vector<cplx> amplitudes;
  std::vector<std::vector<int>> signs;  // [branch][particle], +1 or -1
  std::uint64_t seed = 0;

  int branches() const { return static_cast<int>(amplitudes.size()); }
  RealVector born_weights() const {
    RealVector w(branches());
    for (int k = 0; k < branches(); ++k) w(k) = std::norm(amplitudes[k]);
    return w;
  }
  /// Product of the particle outcomes of branch k.
  int parity(int k) const {
    int p = 1;
    for (int s : signs[k]) p *= s;
    return p;
  }
};

/// Seed of a setting's trial streams: the master seed folded with every angle,
/// so changing any setting changes all sampled hidden parameters.
inline std::uint64_t setting_seed(std::uint64_t master, const std::vector<double>& angles) {
  std::uint64_t s = derive_seed(master, std::uint64_t{0});
  for (double a : angles) s = derive_seed_from_value(s, a);
  return s;
}

inline std::vector<Setting> build_settings(const ScenarioConfig& c) {
  std::vector<Setting> out;
  auto pattern = [](int detectors, std::initializer_list<int> hit) {
    std::vector<bool> p(detectors, false);
    for (int d : hit) p[d] = true;
    return p;
  };
  switch (c.kind) {
    case ScenarioKind::stern_gerlach: {
      Setting s;
      s.label = "default";
      s.amplitudes = c.amplitudes;
      const int K = s.branches();
      for (int k = 0; k < K; ++k) {
        s.labels.push_back({k, pattern(K, {k})});
        s.signs.push_back({});
      }
      s.seed = setting_seed(c.seed, {});
      out.push_back(std::move(s));
      break;
    }
    case ScenarioKind::bell:
      for (double a : c.settings_a)
        for (double b : c.settings_b) {
          Setting s;
          std::ostringstream os;
          os.precision(17);
          os << "a=" << a << ",b=" << b;
          s.label = os.str();
          s.angles = {a, b};
          s.amplitudes = build_bell_amplitudes(a, b);
          for (int k = 0; k < 4; ++k) {
            const int s1 = k >> 1, s2 = k & 1;
            // detectors: 0 left-up, 1 left-down, 2 right-up, 3 right-down
            s.labels.push_back({k, pattern(4, {s1, 2 + s2})});
            s.signs.push_back({s1 ? -1 : 1, s2 ? -1 : 1});
          }
          s.seed = setting_seed(c.seed, s.angles);
          out.push_back(std::move(s));
        }
      break;
    case ScenarioKind::ghz:
      for (const auto& g : c.ghz_settings) {
        Setting s;
        s.label = g.label;
        s.angles.assign(g.angles.begin(), g.angles.end());
        s.amplitudes = build_ghz_amplitudes(g.angles);
        for (int k = 0; k < 8; ++k) {
          const int s1 = (k >> 2) & 1, s2 = (k >> 1) & 1, s3 = k & 1;
          s.labels.push_back({k, pattern(6, {s1, 2 + s2, 4 + s3})});
          s.signs.push_back({s1 ? -1 : 1, s2 ? -1 : 1, s3 ? -1 : 1});
        }
        s.seed = setting_seed(c.seed, s.angles);
        out.push_back(std::move(s));
      }
      break;
  }
  return out;
}

/// Initial detector states of one trial: states[k][d], sharing each
/// detector's hidden draw between its quiet and hit versions.
inline std::vector<std::vector<Vector>> sample_branch_states(const ScenarioConfig& c, const Setting& s,
                                                              const DetectorList& models, std::uint64_t trial_seed) {
  const int D = static_cast<int>(models.size());
  std::vector<DetectorStates> per_detector;
  for (int d = 0; d < D; ++d) {
    InitialStateSampler sampler(c.detector(d).sampler, derive_seed(trial_seed, static_cast<std::uint64_t>(d)));
    per_detector.push_back(sample_detector_states(sampler, *models[d], c.detector(d).hit_kick));
  }
  std::vector<std::vector<Vector>> states(s.branches(), std::vector<Vector>(D));
  for (int k = 0; k < s.branches(); ++k)
    for (int d = 0; d < D; ++d) states[k][d] = s.labels[k].hit_pattern[d] ? per_detector[d].hit : per_detector[d].quiet;
  return states;
}

inline DetectorList build_detector_models(const ScenarioConfig& c) {
  DetectorList out;
  for (int d = 0; d < c.detector_count(); ++d) {
    if (d > 0 && c.detectors.size() == 1) {
      out.push_back(out.front());
      continue;
    }
    out.push_back(std::make_shared<const DetectorModel>(c.detector(d).model()));
  }
  return out;
}

struct ScenarioTrial {
  int setting = 0;
  long trial = 0;
  std::uint64_t seed = 0;
  int winner = -1;
  long steps = 0;
  bool timed_out = false;
  bool diverged = false;  // the integrator lost control of the weight drift
  long revivals = 0;
  double max_weight_error = 0.0;

  bool decided() const { return !timed_out && !diverged; }
  const char* status() const { return diverged ? "diverged" : timed_out ? "timeout" : "ok"; }
};

inline DynamicsOptions dynamics_options(const ScenarioConfig& c) {
  DynamicsOptions o;
  o.picture = c.picture;
  o.epsilon = c.epsilon;
  return o;
}

inline ScenarioTrial run_trial(const ScenarioConfig& c, const Setting& s, int setting_index, long trial,
                               const DetectorList& models) {
  ScenarioTrial t;
  t.setting = setting_index;
  t.trial = trial;
  t.seed = derive_seed(s.seed, static_cast<std::uint64_t>(trial));
  if (c.engine == EngineKind::ruin) {
    NoiseModel noise = c.replay ? NoiseModel::replay(*c.replay) : NoiseModel(c.noise, s.branches(), t.seed);
    const RuinOutcome o = run_to_collapse(s.born_weights(), noise, RuinOptions{c.zeta, c.dt, c.max_steps, c.epsilon});
    t.winner = o.winner.value_or(-1);
    t.steps = o.steps;
    t.timed_out = o.timed_out;
    t.revivals = o.revivals;
    t.max_weight_error = o.final_weights.sum_error();
    return t;
  }
  const auto states = sample_branch_states(c, s, models, t.seed);
  TrajectoryOptions topt;
  topt.dt = c.dt;
  topt.max_steps = c.max_steps;
  TrajectorySummary sum;
  try {
    if (c.engine == EngineKind::full) {
      FullEngine engine(models, dynamics_options(c));
      sum = run_trajectory(engine, engine.assemble_initial_state(s.labels, s.amplitudes, states, c.zeta), topt);
    } else {
      ProductEngine engine(models, dynamics_options(c));
      sum = run_trajectory(engine, engine.assemble_initial_state(s.labels, s.amplitudes, states, c.zeta), topt);
    }
  } catch (const IntegrationDiverged&) {
    t.diverged = true;
    return t;
  }
  t.winner = sum.winner.value_or(-1);
  t.steps = sum.steps;
  t.timed_out = sum.timed_out;
  t.revivals = sum.revivals;
  t.max_weight_error = sum.max_weight_error;
  return t;
}

struct SettingResult {
  Setting setting;
  RealVector born;
  std::vector<long> counts;
  RealVector frequencies;
  std::vector<Interval> intervals;
  long trials = 0;
  long timeouts = 0;
  long divergences = 0;
  std::optional<double> correlator;        // E: mean product of particle outcomes
  std::optional<double> correlator_sigma;  // sqrt((1 - E^2) / N)
  std::optional<double> expected_correlator;
};

struct ChshResult {
  double s = 0.0;
  double sigma = 0.0;
};

struct CorrelationReport {
  ScenarioKind kind = ScenarioKind::stern_gerlach;
  EngineKind engine = EngineKind::ruin;
  std::uint64_t seed = 0;
  std::vector<SettingResult> settings;
  std::vector<ScenarioTrial> trials;  // ordered by (setting, trial)
  long total_trials = 0;
  long timeouts = 0;
  long divergences = 0;
  long revivals = 0;
  long zero_amplitude_wins = 0;
  double max_weight_error = 0.0;
  std::optional<ChshResult> chsh;

  double timeout_rate() const { return total_trials > 0 ? static_cast<double>(timeouts) / total_trials : 0.0; }
};

/// S = E(a,b) - E(a,b') + E(a',b) + E(a',b').
inline double chsh_statistic(double e_ab, double e_abp, double e_apb, double e_apbp) {
  return e_ab - e_abp + e_apb + e_apbp;
}

/// CHSH combination of a Bell report whose settings are (a,b), (a,b'), (a',b), (a',b').
inline ChshResult chsh_statistic(const CorrelationReport& r) {
  if (r.kind != ScenarioKind::bell || r.settings.size() != 4)
    throw std::invalid_argument("chsh_statistic: need a Bell report with exactly four setting pairs");
  double var = 0.0;
  double e[4];
  for (int i = 0; i < 4; ++i) {
    if (!r.settings[i].correlator) throw std::invalid_argument("chsh_statistic: missing correlator for a setting");
    e[i] = *r.settings[i].correlator;
    var += std::pow(r.settings[i].correlator_sigma.value_or(0.0), 2);
  }
  return {chsh_statistic(e[0], e[1], e[2], e[3]), std::sqrt(var)};
}

/// Deterministic fold of trial records (ordered by setting, then trial).
inline CorrelationReport assemble_report(const ScenarioConfig& c, const std::vector<Setting>& settings,
                                         std::vector<ScenarioTrial> trials) {
  CorrelationReport r;
  r.kind = c.kind;
  r.engine = c.engine;
  r.seed = c.seed;
  r.total_trials = static_cast<long>(trials.size());
  for (std::size_t si = 0; si < settings.size(); ++si) {
    const Setting& s = settings[si];
    SettingResult sr;
    sr.setting = s;
    sr.born = s.born_weights();
    sr.counts.assign(s.branches(), 0);
    for (const auto& t : trials) {
      if (t.setting != static_cast<int>(si)) continue;
      ++sr.trials;
      if (t.timed_out) ++sr.timeouts;
      if (t.diverged) ++sr.divergences;
      if (t.decided()) {
        ++sr.counts[t.winner];
        if (sr.born(t.winner) == 0.0) ++r.zero_amplitude_wins;
      }
    }
    const long decided = sr.trials - sr.timeouts - sr.divergences;
    sr.frequencies = RealVector::Zero(s.branches());
    for (int k = 0; k < s.branches(); ++k) {
      if (decided > 0) sr.frequencies(k) = static_cast<double>(sr.counts[k]) / decided;
      sr.intervals.push_back(wilson_interval(sr.counts[k], decided));
    }
    if (c.kind != ScenarioKind::stern_gerlach && decided > 0) {
      double e = 0.0, expected = 0.0;
      for (int k = 0; k < s.branches(); ++k) {
        e += s.parity(k) * sr.frequencies(k);
        expected += s.parity(k) * sr.born(k);
      }
      sr.correlator = e;
      sr.correlator_sigma = std::sqrt(std::max(0.0, 1.0 - e * e) / decided);
      sr.expected_correlator = expected;
    }
    r.timeouts += sr.timeouts;
    r.divergences += sr.divergences;
    r.settings.push_back(std::move(sr));
  }
  for (const auto& t : trials) {
    r.revivals += t.revivals;
    r.max_weight_error = std::max(r.max_weight_error, t.max_weight_error);
  }
  r.trials = std::move(trials);
  if (c.kind == ScenarioKind::bell && r.settings.size() == 4) {
    bool complete = true;
    for (const auto& s : r.settings) complete = complete && s.correlator.has_value();
    if (complete) r.chsh = chsh_statistic(r);
  }
  return r;
}

/// Runs config.trials trials for every setting. The report does not depend on `threads`.
inline CorrelationReport run_scenario(const ScenarioConfig& c, int threads = 1) {
  const std::vector<Setting> settings = build_settings(c);
  const DetectorList models = c.engine == EngineKind::ruin ? DetectorList{} : build_detector_models(c);
  if (c.engine == EngineKind::full) {
    Eigen::Index dim = 1;
    for (const auto& m : models) dim *= m->dim();
    if (dim > FullEngine::kMaxTensorDim)
      throw std::invalid_argument("the full engine is limited to a tensor dimension of " +
                                  std::to_string(FullEngine::kMaxTensorDim) + "; use the product engine");
  }
  const long n = c.trials;
  std::vector<ScenarioTrial> trials(settings.size() * n);
  parallel_for(trials.size(), threads, [&](std::size_t i) {
    const int si = static_cast<int>(i / n);
    trials[i] = run_trial(c, settings[si], si, static_cast<long>(i % n), models);
  });
  return assemble_report(c, settings, std::move(trials));
}

}  // namespace collapse
