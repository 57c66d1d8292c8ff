#pragma once

// Drives a full or product engine from an assembled state until one branch
// remains, recording the quantities the invariant checks need.

#include <functional>
#include <optional>

#include "collapse/full_dynamics.hpp"
#include "collapse/product_dynamics.hpp"

namespace collapse {

struct TrajectoryOptions {
  double dt = 0.01;
  long max_steps = 10000;
  bool monitor_heating = false;  // evaluate the no-heating trace at every step
  bool stop_at_collapse = true;
};

struct TrajectorySummary {
  std::optional<int> winner;
  long steps = 0;
  double time = 0.0;
  bool timed_out = false;
  double max_weight_error = 0.0;   // max |sum w - 1| over visited states
  double max_no_heating = 0.0;     // max relative no-heating value (if monitored)
  long revivals = 0;
  WeightVector final_weights;
};

/// Called with the state at the start of each step (and once at the end with
/// step_dt = 0).
template <class State>
using TrajectoryObserver = std::function<void(long step, const State& state, double step_dt)>;

template <class Engine, class State>
TrajectorySummary run_trajectory(const Engine& engine, State state, const TrajectoryOptions& opt,
                                 const TrajectoryObserver<State>& observer = {}, State* final_state = nullptr) {
  if (!(opt.dt > 0.0) || opt.max_steps < 0) throw std::invalid_argument("run_trajectory: invalid dt or max_steps");
  TrajectorySummary out;
  const double eps = engine.options().epsilon;
  std::vector<bool> was_ruined = state.ruined;
  auto inspect = [&](const State& s) {
    const WeightVector w = engine.weights_unchecked(s);
    out.max_weight_error = std::max(out.max_weight_error, w.sum_error());
    for (int k = 0; k < s.branches(); ++k) {
      if (was_ruined[k] && (!s.ruined[k] || w[k] != 0.0)) ++out.revivals;
      was_ruined[k] = was_ruined[k] || s.ruined[k];
    }
    if (opt.monitor_heating) out.max_no_heating = std::max(out.max_no_heating, engine.no_heating(s).relative());
    return w;
  };
  WeightVector w = inspect(state);
  while (true) {
    if (opt.stop_at_collapse && detect_collapse(w, eps)) break;
    if (out.steps >= opt.max_steps) {
      if (opt.stop_at_collapse) out.timed_out = true;
      break;
    }
    if (observer) observer(out.steps, state, opt.dt);
    state = engine.step(state, opt.dt);
    ++out.steps;
    w = inspect(state);
    if (w.sum_error() > 1e-6) throw IntegrationDiverged("run_trajectory: total weight left the conservation band");
  }
  if (observer) observer(out.steps, state, 0.0);
  out.winner = out.timed_out ? std::nullopt : detect_collapse(w, eps);
  out.time = state.time;
  out.final_weights = w;
  if (final_state) *final_state = std::move(state);
  return out;
}

}  // namespace collapse
