#pragma once

// The run, validate and trace subcommands. Each returns a process exit code:
// 0 success, 1 configuration error, 2 invariant violation, 3 timeout rate
// above the allowed fraction.

#include <openssl/evp.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "collapse/config.hpp"
#include "collapse/io.hpp"
#include "collapse/scenarios.hpp"
#include "collapse/trajectory.hpp"
#include "collapse/validation.hpp"

namespace collapse {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kManifestSchema = "collapse-run/1";
inline constexpr double kMaxTimeoutRate = 0.05;
inline constexpr double kWeightErrorLimit = 1e-9;
inline constexpr double kNoHeatingLimit = 1e-10;

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitInvariant = 2, kExitTimeouts = 3 };

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<long> trials;
  std::optional<std::string> engine;
  int threads = 0;  // 0: COLLAPSE_THREADS or hardware concurrency
};

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'", 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

using FileSet = std::vector<std::pair<std::string, std::string>>;  // name, contents

/// Writes all files into a sibling temporary directory, then renames it onto
/// `out`, so readers never observe a partially written result.
inline void write_directory_atomically(const std::filesystem::path& out, const FileSet& files) {
  namespace fs = std::filesystem;
  const fs::path target = fs::absolute(out).lexically_normal();
  const fs::path parent = target.parent_path();
  fs::create_directories(parent);
  std::random_device rd;
  const std::string tag = std::to_string(::getpid()) + "-" + std::to_string(rd());
  const fs::path tmp = parent / ("." + target.filename().string() + ".tmp-" + tag);
  fs::create_directory(tmp);
  try {
    for (const auto& [name, data] : files) {
      std::ofstream f(tmp / name, std::ios::binary);
      f << data;
      f.close();
      if (!f) throw std::runtime_error("cannot write " + (tmp / name).string());
    }
    if (fs::exists(target)) {
      const fs::path old = parent / ("." + target.filename().string() + ".old-" + tag);
      fs::rename(target, old);
      fs::rename(tmp, target);
      fs::remove_all(old);
    } else {
      fs::rename(tmp, target);
    }
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

/// Loads a config and applies command-line overrides. Throws ConfigError.
inline ScenarioConfig load_with_overrides(const std::string& path, const RunOverrides& o) {
  ScenarioConfig c = load_config(path);
  if (o.seed) c.seed = *o.seed;
  if (o.trials) {
    if (*o.trials < 1) throw ConfigError("--trials must be at least 1", 0);
    c.trials = *o.trials;
  }
  if (o.engine) {
    try {
      c.engine = parse_engine(*o.engine);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--engine: ") + e.what(), 0);
    }
    if (c.replay && c.engine != EngineKind::ruin) throw ConfigError("replay noise drives the ruin engine only", 0);
  }
  return c;
}

inline std::string trials_csv(const CorrelationReport& r) {
  std::string s = "setting,trial,seed,winner,steps,status\n";
  for (const auto& t : r.trials)
    s += std::to_string(t.setting) + "," + std::to_string(t.trial) + "," + std::to_string(t.seed) + "," +
         std::to_string(t.winner) + "," + std::to_string(t.steps) + "," + t.status() + "\n";
  return s;
}

inline nlohmann::json summary_json(const CorrelationReport& r) {
  using nlohmann::json;
  json j;
  j["kind"] = to_string(r.kind);
  j["engine"] = to_string(r.engine);
  j["seed"] = r.seed;
  j["total_trials"] = r.total_trials;
  j["timeouts"] = r.timeouts;
  j["divergences"] = r.divergences;
  j["timeout_rate"] = r.timeout_rate();
  json settings = json::array();
  for (const auto& s : r.settings) {
    json e;
    e["label"] = s.setting.label;
    e["angles"] = s.setting.angles;
    e["trials"] = s.trials;
    e["timeouts"] = s.timeouts;
    e["divergences"] = s.divergences;
    json branches = json::array();
    for (int k = 0; k < s.setting.branches(); ++k) {
      json b;
      b["index"] = k;
      if (!s.setting.signs.empty()) b["outcomes"] = s.setting.signs[k];
      b["initial_weight"] = s.born(k);
      b["wins"] = s.counts[k];
      b["frequency"] = s.frequencies(k);
      b["interval95"] = {s.intervals[k].lo, s.intervals[k].hi};
      branches.push_back(b);
    }
    e["branches"] = branches;
    if (s.correlator) {
      e["correlator"] = *s.correlator;
      e["correlator_sigma"] = *s.correlator_sigma;
      e["expected_correlator"] = *s.expected_correlator;
    }
    settings.push_back(e);
  }
  j["settings"] = settings;
  if (r.chsh) j["chsh"] = {{"s", r.chsh->s}, {"sigma", r.chsh->sigma}};
  j["invariants"] = {{"max_weight_error", r.max_weight_error},
                     {"revivals", r.revivals},
                     {"zero_amplitude_wins", r.zero_amplitude_wins},
                     {"divergences", r.divergences}};
  return j;
}

struct InvariantSummary {
  nlohmann::json detail;
  bool invariants_ok = true;
  bool timeouts_ok = true;
};

inline InvariantSummary summarize_invariants(const CorrelationReport& r) {
  InvariantSummary s;
  const bool weights = r.max_weight_error <= kWeightErrorLimit;
  const bool monotone = r.revivals == 0;
  const bool zero_wins = r.zero_amplitude_wins == 0;
  const bool integrated = r.divergences == 0;
  s.invariants_ok = weights && monotone && zero_wins && integrated;
  s.timeouts_ok = r.timeout_rate() <= kMaxTimeoutRate;
  s.detail = {{"weight_conservation", {{"max_error", r.max_weight_error}, {"limit", kWeightErrorLimit}, {"passed", weights}}},
              {"monotone_ruin", {{"revivals", r.revivals}, {"passed", monotone}}},
              {"zero_amplitude_wins", {{"count", r.zero_amplitude_wins}, {"passed", zero_wins}}},
              {"integration", {{"diverged_trials", r.divergences}, {"passed", integrated}}},
              {"timeout_rate", {{"value", r.timeout_rate()}, {"limit", kMaxTimeoutRate}, {"passed", s.timeouts_ok}}},
              {"passed", s.invariants_ok && s.timeouts_ok}};
  return s;
}

/// Runs a scenario and writes manifest.json, config.json, trials.csv and summary.json.
inline int cmd_run(const std::string& config_path, const std::string& out_dir, const RunOverrides& overrides,
                   std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  ScenarioConfig c;
  std::string config_text;
  try {
    config_text = read_file(config_path);
    c = load_with_overrides(config_path, overrides);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  const int threads = overrides.threads > 0 ? overrides.threads : default_threads();
  const auto started = std::chrono::system_clock::now();
  CorrelationReport report;
  try {
    report = run_scenario(c, threads);
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  const auto finished = std::chrono::system_clock::now();
  const InvariantSummary inv = summarize_invariants(report);

  FileSet files;
  files.emplace_back("config.json", config_to_json(c).dump(2) + "\n");
  files.emplace_back("trials.csv", trials_csv(report));
  files.emplace_back("summary.json", summary_json(report).dump(2) + "\n");
  nlohmann::json m;
  m["schema"] = kManifestSchema;
  m["tool_version"] = kToolVersion;
  m["config_schema"] = kSchemaVersion;
  m["config_path"] = config_path;
  m["config_sha256"] = sha256_hex(config_text);
  if (c.replay) m["replay_trace"] = c.replay_path;
  m["seed"] = c.seed;
  m["engine"] = to_string(c.engine);
  m["trials_per_setting"] = c.trials;
  m["threads"] = threads;
  m["started_at"] = utc_timestamp(started);
  m["finished_at"] = utc_timestamp(finished);
  nlohmann::json artifacts = nlohmann::json::array();
  for (const auto& [name, data] : files) artifacts.push_back({{"path", name}, {"sha256", sha256_hex(data)}});
  m["artifacts"] = artifacts;
  m["invariants"] = inv.detail;
  files.emplace(files.begin(), "manifest.json", m.dump(2) + "\n");
  try {
    write_directory_atomically(out_dir, files);
  } catch (const std::exception& e) {
    err << "cannot write output directory '" << out_dir << "': " << e.what() << "\n";
    return kExitConfig;
  }

  const auto precision = out.precision(5);
  out << to_string(c.kind) << " (" << to_string(c.engine) << "), " << report.total_trials << " trials, "
      << report.timeouts << " timeouts, " << report.divergences << " diverged\n";
  for (const auto& s : report.settings) {
    out << "  setting " << (s.setting.label.empty() ? "-" : s.setting.label) << ":";
    for (int k = 0; k < s.setting.branches(); ++k)
      out << " " << s.frequencies(k) << " (" << s.born(k) << ")";
    if (s.correlator) out << "  E = " << *s.correlator << " +- " << *s.correlator_sigma;
    out << "\n";
  }
  if (report.chsh) out << "  S = " << report.chsh->s << " +- " << report.chsh->sigma << "\n";
  out << "results in " << out_dir << "\n";
  out.precision(precision);
  if (!inv.invariants_ok) {
    err << "invariant violation: " << inv.detail.dump() << "\n";
    return kExitInvariant;
  }
  if (!inv.timeouts_ok) {
    err << "timeout rate " << report.timeout_rate() << " exceeds " << kMaxTimeoutRate << "\n";
    return kExitTimeouts;
  }
  return kExitOk;
}

inline int cmd_validate(ValidationLevel level, std::ostream& out = std::cout, const ValidationHooks& hooks = {}) {
  const auto results = run_validation(level, hooks);
  print_validation(out, results);
  const bool ok = all_passed(results);
  out << (ok ? "all suites passed\n" : "some suites failed\n");
  return ok ? kExitOk : kExitInvariant;
}

struct TraceResult {
  std::string global;  // trace.csv
  std::string local;   // trace_local.csv (product engine)
  TrajectorySummary summary;
  bool diverged = false;
  std::string divergence_message;
};

/// Records one trajectory (setting 0, trial 0) of a full or product config.
inline TraceResult trace_trajectory(const ScenarioConfig& c) {
  if (c.engine == EngineKind::ruin) throw ConfigError("trace needs the full or product engine", 0);
  const std::vector<Setting> settings = build_settings(c);
  const Setting& s = settings.front();
  const DetectorList models = build_detector_models(c);
  const std::uint64_t seed = derive_seed(s.seed, std::uint64_t{0});
  const auto states = sample_branch_states(c, s, models, seed);
  const int K = s.branches();
  TraceResult tr;
  tr.global = trace_header(K);
  if (c.engine == EngineKind::product) tr.local = local_trace_header(K);
  TrajectoryOptions topt;
  topt.dt = c.dt;
  topt.max_steps = c.max_steps;
  topt.monitor_heating = true;

  auto record = [&](const auto& engine, long step, const auto& st, double dt) {
    TraceRow row;
    row.step = step;
    row.t = st.time;
    row.dt = dt;
    row.w = engine.weights_unchecked(st).w;
    row.a = engine.pumping_coefficients(st).a;
    row.no_heating = engine.no_heating(st).relative();
    for (int k = 0; k < K; ++k) row.live.push_back(!st.ruined[k]);
    tr.global += trace_line(row);
    if constexpr (std::is_same_v<std::decay_t<decltype(st)>, ProductState>) {
      const auto local = engine.local_weights(st);
      const BranchMeans means = engine.branch_means(st);
      for (int d = 0; d < st.detectors(); ++d)
        tr.local += local_trace_line({st.time, d, local[d].w, means.x.col(d), means.p.col(d)});
    }
  };
  auto run = [&](const auto& engine) {
    using State = std::decay_t<decltype(engine.assemble_initial_state(s.labels, s.amplitudes, states, c.zeta))>;
    State st = engine.assemble_initial_state(s.labels, s.amplitudes, states, c.zeta);
    long last_step = 0;
    State last = st;
    TrajectoryObserver<State> obs = [&](long step, const State& x, double dt) {
      record(engine, step, x, dt);
      last_step = step;
      last = x;
    };
    try {
      tr.summary = run_trajectory(engine, st, topt, obs);
    } catch (const IntegrationDiverged& e) {
      tr.diverged = true;
      tr.divergence_message = e.what();
      tr.summary.steps = last_step;
      tr.summary.time = last.time;
    }
  };
  if (c.engine == EngineKind::full) run(FullEngine(models, dynamics_options(c)));
  else run(ProductEngine(models, dynamics_options(c)));
  return tr;
}

/// Writes trace.csv (and trace_local.csv for the product engine) plus trace_summary.json.
inline int cmd_trace(const std::string& config_path, const std::string& out_dir, const RunOverrides& overrides,
                     std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  ScenarioConfig c;
  std::string config_text;
  TraceResult tr;
  try {
    config_text = read_file(config_path);
    c = load_with_overrides(config_path, overrides);
    tr = trace_trajectory(c);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  const auto& sm = tr.summary;
  const bool weights_ok = sm.max_weight_error <= kWeightErrorLimit;
  const bool heating_ok = sm.max_no_heating <= kNoHeatingLimit;
  const bool ok = weights_ok && heating_ok && sm.revivals == 0 && !tr.diverged;
  nlohmann::json j;
  j["config_sha256"] = sha256_hex(config_text);
  j["engine"] = to_string(c.engine);
  j["seed"] = c.seed;
  j["steps"] = sm.steps;
  j["time"] = sm.time;
  j["status"] = tr.diverged ? "diverged" : sm.winner ? "collapsed" : "horizon";
  if (sm.winner) j["winner"] = *sm.winner;
  if (tr.diverged) j["message"] = tr.divergence_message;
  j["max_weight_error"] = sm.max_weight_error;
  j["max_no_heating"] = sm.max_no_heating;
  j["revivals"] = sm.revivals;
  j["passed"] = ok;
  FileSet files{{"trace.csv", tr.global}};
  if (!tr.local.empty()) files.emplace_back("trace_local.csv", tr.local);
  files.emplace_back("trace_summary.json", j.dump(2) + "\n");
  try {
    write_directory_atomically(out_dir, files);
  } catch (const std::exception& e) {
    err << "cannot write output directory '" << out_dir << "': " << e.what() << "\n";
    return kExitConfig;
  }
  out << "trace: " << sm.steps << " steps, status " << j["status"].get<std::string>() << ", max |sum w - 1| "
      << sm.max_weight_error << ", max no-heating " << sm.max_no_heating << "\n";
  if (!ok) {
    err << (tr.diverged ? "integration diverged: " + tr.divergence_message : std::string("invariant violation"))
        << "\n";
    return kExitInvariant;
  }
  return kExitOk;
}

}  // namespace collapse
