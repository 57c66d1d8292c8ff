#pragma once

// The reduced stochastic game: dw_k = zeta w_k sum_m w_m dA_km with externally
// modeled pumping noise, absorption at epsilon, and winner statistics.

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "collapse/parallel.hpp"
#include "collapse/pumping.hpp"
#include "collapse/random.hpp"

namespace collapse {

enum class NoiseKind { gaussian, telegraph, replay };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  double amplitude = 1.0;  // sigma_A for white noise, level for telegraph noise
  double flip_rate = 1.0;  // telegraph only
};

/// Recorded pumping coefficients: a[i] held over a step of length dt[i].
struct ReplayTrace {
  std::vector<double> dt;
  std::vector<RealMatrix> a;

  std::size_t size() const { return a.size(); }
};

/// Source of antisymmetric pumping increments dA = integral of A over dt.
class NoiseModel {
 public:
  NoiseModel(NoiseSpec spec, int branches, std::uint64_t seed)
      : spec_(spec), branches_(branches), rng_(seed) {
    if (branches < 1) throw std::invalid_argument("NoiseModel: need at least one branch");
    if (spec.kind == NoiseKind::replay) throw std::invalid_argument("NoiseModel: use NoiseModel::replay for recorded traces");
    if (!(spec.amplitude >= 0.0)) throw std::invalid_argument("NoiseModel: amplitude must be non-negative");
    if (spec.kind == NoiseKind::telegraph) {
      if (!(spec.flip_rate > 0.0)) throw std::invalid_argument("NoiseModel: flip rate must be positive");
      level_ = RealMatrix::Zero(branches, branches);
      next_flip_ = RealMatrix::Zero(branches, branches);
      for (int k = 0; k < branches; ++k)
        for (int m = k + 1; m < branches; ++m) {
          level_(k, m) = rng_.uniform() < 0.5 ? -spec.amplitude : spec.amplitude;
          next_flip_(k, m) = rng_.exponential(spec.flip_rate);
        }
    }
  }

  static NoiseModel replay(ReplayTrace trace) {
    if (trace.a.empty() || trace.a.size() != trace.dt.size())
      throw std::invalid_argument("NoiseModel::replay: trace must be non-empty with one dt per entry");
    NoiseModel m;
    m.spec_.kind = NoiseKind::replay;
    m.branches_ = static_cast<int>(trace.a.front().rows());
    for (const auto& a : trace.a)
      if (a.rows() != m.branches_ || a.cols() != m.branches_)
        throw DimensionMismatch("NoiseModel::replay: inconsistent matrix sizes");
    m.trace_ = std::move(trace);
    return m;
  }

  /// Adds drift * dt to every increment. Only for constructing biased counterexamples.
  void set_drift(const RealMatrix& drift) {
    if (drift.rows() != branches_ || drift.cols() != branches_) throw DimensionMismatch("set_drift: size mismatch");
    drift_ = drift;
  }

  NoiseKind kind() const { return spec_.kind; }
  const NoiseSpec& spec() const { return spec_; }
  int branches() const { return branches_; }
  Rng& rng() { return rng_; }

  /// Recorded step length of the next replayed entry; holds the last entry's
  /// dt once the trace is exhausted.
  std::optional<double> forced_dt() const {
    if (spec_.kind != NoiseKind::replay) return std::nullopt;
    return trace_.dt[std::min(cursor_, trace_.size() - 1)];
  }

  /// The recorded coefficient matrix that the next replayed step will use.
  const RealMatrix& replay_rates() const { return trace_.a[std::min(cursor_, trace_.size() - 1)]; }

  /// Increment over dt; rows and columns of ruined branches are zero.
  PumpingMatrix sample(double dt, const std::vector<bool>& ruined = {}) {
    PumpingMatrix out;
    sample_into(out.a, dt, ruined);
    return out;
  }

  void sample_into(RealMatrix& out, double dt, const std::vector<bool>& ruined = {}) {
    if (!(dt > 0.0)) throw std::invalid_argument("sample_noise: dt must be positive");
    out.setZero(branches_, branches_);
    switch (spec_.kind) {
      case NoiseKind::gaussian: {
        const double sd = spec_.amplitude * std::sqrt(dt);
        for (int k = 0; k < branches_; ++k)
          for (int m = k + 1; m < branches_; ++m) out(k, m) = sd * rng_.normal();
        break;
      }
      case NoiseKind::telegraph:
        for (int k = 0; k < branches_; ++k)
          for (int m = k + 1; m < branches_; ++m) out(k, m) = telegraph_integral(k, m, dt);
        break;
      case NoiseKind::replay: {
        out = replay_rates() * dt;
        if (cursor_ < trace_.size()) ++cursor_;
        break;
      }
    }
    if (spec_.kind != NoiseKind::replay) {
      if (drift_.size() != 0)
        for (int k = 0; k < branches_; ++k)
          for (int m = k + 1; m < branches_; ++m) out(k, m) += drift_(k, m) * dt;
      for (int k = 0; k < branches_; ++k)
        for (int m = k + 1; m < branches_; ++m) out(m, k) = -out(k, m);
    }
    mask(out, ruined);
  }

  static void mask(RealMatrix& a, const std::vector<bool>& ruined) {
    for (std::size_t k = 0; k < ruined.size(); ++k)
      if (ruined[k]) {
        a.row(k).setZero();
        a.col(k).setZero();
      }
  }
  static void mask(PumpingMatrix& a, const std::vector<bool>& ruined) { mask(a.a, ruined); }

 private:
  NoiseModel() = default;

  double telegraph_integral(int k, int m, double dt) {
    double acc = 0.0, t = 0.0;
    while (next_flip_(k, m) < dt - t) {
      acc += level_(k, m) * next_flip_(k, m);
      t += next_flip_(k, m);
      level_(k, m) = -level_(k, m);
      next_flip_(k, m) = rng_.exponential(spec_.flip_rate);
    }
    const double rest = dt - t;
    acc += level_(k, m) * rest;
    next_flip_(k, m) -= rest;
    return acc;
  }

  NoiseSpec spec_;
  int branches_ = 0;
  Rng rng_{0};
  RealMatrix level_, next_flip_, drift_;
  ReplayTrace trace_;
  std::size_t cursor_ = 0;
};

inline PumpingMatrix sample_noise(NoiseModel& model, double dt, const std::vector<bool>& ruined = {}) {
  return model.sample(dt, ruined);
}

struct RuinState {
  WeightVector weights;
  std::vector<bool> ruined;
  double time = 0.0;
  std::uint64_t seed = 0;
  double epsilon = kDefaultEpsilon;

  int branches() const { return weights.size(); }
};

/// Valid initial state; branches starting below epsilon are absorbed at once.
inline RuinState make_ruin_state(const RealVector& initial, double epsilon = kDefaultEpsilon, std::uint64_t seed = 0) {
  RuinState s{WeightVector{initial}, std::vector<bool>(initial.size(), false), 0.0, seed, epsilon};
  if (initial.size() < 1) throw std::invalid_argument("ruin: need at least one branch");
  if (!s.weights.nonnegative() || s.weights.sum_error() > 1e-9)
    throw std::invalid_argument("ruin: initial weights must be non-negative and sum to one");
  absorb(s.weights, s.ruined, epsilon);
  return s;
}

inline constexpr double kRuinStepCap = 0.1;

namespace detail {

inline RealVector ruin_increment(const RealVector& w, const RealMatrix& da, double zeta) {
  return zeta * w.cwiseProduct(da * w);
}

inline bool within_cap(const RealVector& w, const RealVector& dw, double cap) {
  for (Eigen::Index k = 0; k < w.size(); ++k)
    if (std::abs(dw(k)) > cap * w(k)) return false;
  return true;
}

inline void apply_increment(RuinState& s, const RealMatrix& da, double zeta, int depth) {
  const RealVector dw = ruin_increment(s.weights.w, da, zeta);
  if (depth < 30 && !within_cap(s.weights.w, dw, kRuinStepCap)) {
    const double ratio = (dw.cwiseAbs().array() / s.weights.w.array().max(1e-300)).maxCoeff();
    const int pieces = static_cast<int>(std::ceil(ratio / kRuinStepCap));
    const RealMatrix part = da / static_cast<double>(pieces);
    for (int i = 0; i < pieces; ++i) apply_increment(s, part, zeta, depth + 1);
    return;
  }
  s.weights.w += dw;
  absorb(s.weights, s.ruined, s.epsilon);
}

}  // namespace detail

/// Euler-Maruyama update by a given increment. A step in which some
/// |dw_k| > 0.1 w_k is split into equal sub-increments.
inline RuinState step_ruin(const RuinState& state, const PumpingMatrix& increment, double zeta, double dt) {
  if (increment.size() != state.branches()) throw DimensionMismatch("step_ruin: increment size mismatch");
  RuinState out = state;
  PumpingMatrix da = increment;
  NoiseModel::mask(da, out.ruined);
  detail::apply_increment(out, da.a, zeta, 0);
  out.time += dt;
  return out;
}

namespace detail {

/// Applies white-noise increments over h. If a weight would turn negative the
/// interval is bisected along a Brownian bridge, keeping the path law intact.
inline void gaussian_substep(RuinState& s, const RealMatrix& db, double h, double sigma, double zeta, Rng& rng,
                             RealVector& dw, int depth) {
  const int K = s.branches();
  bool negative = false;
  for (int k = 0; k < K; ++k) {
    double acc = 0.0;
    for (int m = 0; m < K; ++m) acc += db(k, m) * s.weights.w(m);
    dw(k) = zeta * s.weights.w(k) * acc;
    if (s.weights.w(k) + dw(k) < 0.0) negative = true;
  }
  if (negative && depth < 40) {
    RealMatrix first = RealMatrix::Zero(K, K);
    const double bridge_sd = sigma * std::sqrt(h) * 0.5;
    for (int k = 0; k < K; ++k)
      for (int m = k + 1; m < K; ++m) {
        first(k, m) = 0.5 * db(k, m) + bridge_sd * rng.normal();
        first(m, k) = -first(k, m);
      }
    NoiseModel::mask(first, s.ruined);
    const RealMatrix second = db - first;
    gaussian_substep(s, first, 0.5 * h, sigma, zeta, rng, dw, depth + 1);
    gaussian_substep(s, second, 0.5 * h, sigma, zeta, rng, dw, depth + 1);
    return;
  }
  bool below = false;
  for (int k = 0; k < K; ++k) {
    s.weights.w(k) += dw(k);
    if (!s.ruined[k] && s.weights.w(k) < s.epsilon) below = true;
  }
  if (below) absorb(s.weights, s.ruined, s.epsilon);
}

/// Substeps needed so that the standard deviation of every relative change
/// stays below the cap. Depends on the current weights only, not on the draw.
inline int predictable_substeps(const RealVector& w, double sigma, double zeta, double dt) {
  const double bound = zeta * sigma * std::sqrt(dt * w.squaredNorm());
  if (!(bound > kRuinStepCap)) return 1;
  const double r = bound / kRuinStepCap;
  return static_cast<int>(std::ceil(r * r));
}

}  // namespace detail

struct RuinOutcome {
  std::optional<int> winner;
  long steps = 0;
  double time = 0.0;
  bool timed_out = false;
  long revivals = 0;  // ruined branches found with non-zero weight (must stay 0)
  WeightVector final_weights;
};

struct RuinOptions {
  double zeta = 1.0;
  double dt = 0.01;
  long max_steps = 200000;
  double epsilon = kDefaultEpsilon;
};

using RuinObserver = std::function<void(long step, const RuinState&)>;

/// Plays the game until one branch remains or max_steps is reached. The
/// observer, if given, sees the state before the first step and after every step.
inline RuinOutcome run_to_collapse(const RealVector& initial, NoiseModel& noise, const RuinOptions& opt,
                                   const RuinObserver& observer = {}) {
  if (initial.size() != noise.branches()) throw DimensionMismatch("run_to_collapse: noise size mismatch");
  if (!(opt.dt > 0.0) || opt.max_steps < 0) throw std::invalid_argument("run_to_collapse: invalid dt or max_steps");
  RuinState s = make_ruin_state(initial, opt.epsilon, noise.rng().seed());
  RuinOutcome out;
  RealMatrix db;
  RealVector dw(s.branches());
  if (observer) observer(0, s);
  auto check_revival = [&] {
    for (int k = 0; k < s.branches(); ++k)
      if (s.ruined[k] && s.weights[k] != 0.0) ++out.revivals;
  };
  while (!detect_collapse(s.weights, opt.epsilon)) {
    if (out.steps >= opt.max_steps) {
      out.timed_out = true;
      break;
    }
    if (noise.kind() == NoiseKind::gaussian && noise.spec().amplitude > 0.0) {
      const double sigma = noise.spec().amplitude;
      const int n = detail::predictable_substeps(s.weights.w, sigma, opt.zeta, opt.dt);
      const double h = opt.dt / n;
      for (int i = 0; i < n; ++i) {
        noise.sample_into(db, h, s.ruined);
        detail::gaussian_substep(s, db, h, sigma, opt.zeta, noise.rng(), dw, 0);
      }
      s.time += opt.dt;
    } else {
      const double dt = noise.forced_dt().value_or(opt.dt);
      s = step_ruin(s, noise.sample(dt, s.ruined), opt.zeta, dt);
    }
    ++out.steps;
    check_revival();
    if (observer) observer(out.steps, s);
  }
  out.winner = detect_collapse(s.weights, opt.epsilon);
  if (out.timed_out) out.winner.reset();
  out.time = s.time;
  out.final_weights = s.weights;
  return out;
}

/// Wilson score interval at ~95% (z = 1.96).
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline Interval wilson_interval(long successes, long n, double z = 1.959963984540054) {
  if (n <= 0) return {0.0, 1.0};
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

struct TrialRecord {
  long trial = 0;
  std::uint64_t seed = 0;
  int winner = -1;  // -1 on timeout
  long steps = 0;
  bool timed_out = false;
  long revivals = 0;
};

struct BornReport {
  RealVector initial;
  std::vector<long> counts;
  RealVector frequencies;
  std::vector<Interval> intervals;
  long trials = 0;
  long timeouts = 0;
  long revivals = 0;
  std::vector<TrialRecord> records;

  double timeout_rate() const { return trials > 0 ? static_cast<double>(timeouts) / trials : 0.0; }
  /// Binomial standard error of the winner frequency of branch k under the initial weight.
  double sigma(int k) const {
    const long n = trials - timeouts;
    return n > 0 ? std::sqrt(initial(k) * (1.0 - initial(k)) / n) : 0.0;
  }
};

inline BornReport fold_born_report(const RealVector& initial, std::vector<TrialRecord> records) {
  BornReport r;
  r.initial = initial;
  r.counts.assign(initial.size(), 0);
  r.trials = static_cast<long>(records.size());
  for (const auto& t : records) {
    if (t.timed_out) ++r.timeouts;
    else ++r.counts[t.winner];
    r.revivals += t.revivals;
  }
  const long decided = r.trials - r.timeouts;
  r.frequencies = RealVector::Zero(initial.size());
  for (int k = 0; k < initial.size(); ++k) {
    if (decided > 0) r.frequencies(k) = static_cast<double>(r.counts[k]) / decided;
    r.intervals.push_back(wilson_interval(r.counts[k], decided));
  }
  r.records = std::move(records);
  return r;
}

/// Trial i uses derive_seed(master_seed, i). Results do not depend on `threads`.
inline BornReport born_statistics(const RealVector& initial, const NoiseSpec& spec, long trials,
                                  std::uint64_t master_seed, const RuinOptions& opt = {}, int threads = 1) {
  if (trials < 100) throw std::invalid_argument("born_statistics: need at least 100 trials");
  std::vector<TrialRecord> records(trials);
  parallel_for(static_cast<std::size_t>(trials), threads, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(master_seed, static_cast<std::uint64_t>(i));
    NoiseModel noise(spec, static_cast<int>(initial.size()), seed);
    const RuinOutcome o = run_to_collapse(initial, noise, opt);
    records[i] = {static_cast<long>(i), seed, o.winner.value_or(-1), o.steps, o.timed_out, o.revivals};
  });
  return fold_born_report(initial, std::move(records));
}

/// Weights of each trajectory at fixed sample steps; collapsed trajectories
/// keep their final weights.
struct TrajectoryEnsemble {
  RealVector initial;
  std::vector<long> sample_steps;
  std::vector<double> sample_times;
  std::vector<std::vector<RealVector>> weights;  // [trajectory][sample]
};

inline TrajectoryEnsemble sample_trajectories(const RealVector& initial, const NoiseSpec& spec, long trajectories,
                                              std::uint64_t master_seed, std::vector<long> sample_steps,
                                              const RuinOptions& opt = {}, const RealMatrix& drift = {},
                                              int threads = 1) {
  TrajectoryEnsemble ens;
  ens.initial = initial;
  ens.sample_steps = std::move(sample_steps);
  for (long s : ens.sample_steps) ens.sample_times.push_back(s * opt.dt);
  ens.weights.assign(trajectories, {});
  const long last = ens.sample_steps.empty() ? 0 : ens.sample_steps.back();
  parallel_for(static_cast<std::size_t>(trajectories), threads, [&](std::size_t i) {
    NoiseModel noise(spec, static_cast<int>(initial.size()), derive_seed(master_seed, static_cast<std::uint64_t>(i)));
    if (drift.size() != 0) noise.set_drift(drift);
    std::vector<RealVector> samples(ens.sample_steps.size());
    std::size_t next = 0;
    RuinOptions o = opt;
    o.max_steps = last;
    const RuinOutcome out = run_to_collapse(initial, noise, o, [&](long step, const RuinState& s) {
      while (next < ens.sample_steps.size() && ens.sample_steps[next] == step) samples[next++] = s.weights.w;
    });
    while (next < samples.size()) samples[next++] = out.final_weights.w;
    ens.weights[i] = std::move(samples);
  });
  return ens;
}

struct DriftReport {
  std::vector<double> times;
  RealMatrix mean_drift;    // K x T: E[w_k(t)] - w_k(0)
  RealMatrix std_error;     // K x T
  RealMatrix z;             // K x T
  double z_critical = 0.0;  // two-sided 95%, Bonferroni-corrected over K x T tests
  std::vector<int> flagged; // per branch: +1 significant positive drift, -1 negative, 0 none

  bool any_flagged() const {
    for (int f : flagged)
      if (f != 0) return true;
    return false;
  }
};

/// Inverse of the standard normal upper tail, by bisection on erfc.
inline double normal_upper_quantile(double tail) {
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(mid / std::sqrt(2.0)) > tail) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

inline DriftReport martingale_diagnostic(const TrajectoryEnsemble& ens) {
  const long n = static_cast<long>(ens.weights.size());
  if (n < 100) throw std::invalid_argument("martingale_diagnostic: need at least 100 trajectories");
  const int K = static_cast<int>(ens.initial.size());
  const int T = static_cast<int>(ens.sample_steps.size());
  DriftReport r;
  r.times = ens.sample_times;
  r.mean_drift = RealMatrix::Zero(K, T);
  r.std_error = RealMatrix::Zero(K, T);
  r.z = RealMatrix::Zero(K, T);
  r.flagged.assign(K, 0);
  r.z_critical = normal_upper_quantile(0.05 / (2.0 * std::max(1, K * T)));
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) {
      double sum = 0.0, sum2 = 0.0;
      for (long i = 0; i < n; ++i) {
        const double d = ens.weights[i][t](k) - ens.initial(k);
        sum += d;
        sum2 += d * d;
      }
      const double mean = sum / n;
      const double var = std::max(0.0, (sum2 - n * mean * mean) / (n - 1));
      const double se = std::sqrt(var / n);
      r.mean_drift(k, t) = mean;
      r.std_error(k, t) = se;
      r.z(k, t) = se > 0.0 ? mean / se : 0.0;
      if (std::abs(r.z(k, t)) > r.z_critical && r.flagged[k] == 0) r.flagged[k] = mean > 0.0 ? 1 : -1;
    }
  }
  return r;
}

}  // namespace collapse
