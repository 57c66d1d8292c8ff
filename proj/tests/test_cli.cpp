#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "collapse/commands.hpp"

using namespace collapse;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("collapse_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(COLLAPSE_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_path(const std::string& name) { return std::string(COLLAPSE_CONFIG_DIR) + "/" + name; }

/// Column `name` of every data row of a CSV document.
std::vector<std::string> column(const std::string& csv, const std::string& name) {
  std::istringstream in(csv);
  std::string line, cell;
  std::getline(in, line);
  std::vector<std::string> header;
  std::istringstream hs(line);
  while (std::getline(hs, cell, ',')) header.push_back(cell);
  const auto idx = std::find(header.begin(), header.end(), name) - header.begin();
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    for (long i = 0; std::getline(ls, cell, ','); ++i)
      if (i == idx) out.push_back(cell);
  }
  return out;
}

const char* kSmallBell = R"({"schema": "collapse-scenario/1", "kind": "bell",
  "settings": {"a": [0, 1.5707963267948966], "b": [0.7853981633974483, 2.356194490192345]},
  "trials": 300, "seed": 12})";

}  // namespace

TEST(Cli, RunWritesAllArtifacts) {
  const fs::path dir = scratch_dir("run");
  const fs::path cfg = write(dir / "bell.json", kSmallBell);
  std::ostringstream out, err;
  ASSERT_EQ(cmd_run(cfg.string(), (dir / "out").string(), RunOverrides{{}, {}, {}, 2}, out, err), kExitOk) << err.str();
  for (const char* f : {"manifest.json", "config.json", "trials.csv", "summary.json"})
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  const auto manifest = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest["schema"], kManifestSchema);
  EXPECT_EQ(manifest["config_sha256"], sha256_hex(slurp(cfg)));
  for (const auto& a : manifest["artifacts"])
    EXPECT_EQ(a["sha256"], sha256_hex(slurp(dir / "out" / a["path"].get<std::string>())));
  EXPECT_EQ(column(slurp(dir / "out" / "trials.csv"), "winner").size(), 4u * 300u);
  EXPECT_NE(out.str().find("S = "), std::string::npos);
}

TEST(Cli, RerunIsByteIdenticalAcrossThreadCounts) {
  const fs::path dir = scratch_dir("rerun");
  const fs::path cfg = write(dir / "bell.json", kSmallBell);
  std::ostringstream sink;
  ASSERT_EQ(cmd_run(cfg.string(), (dir / "a").string(), RunOverrides{{}, {}, {}, 1}, sink, sink), kExitOk);
  ASSERT_EQ(cmd_run(cfg.string(), (dir / "b").string(), RunOverrides{{}, {}, {}, 4}, sink, sink), kExitOk);
  EXPECT_EQ(slurp(dir / "a" / "trials.csv"), slurp(dir / "b" / "trials.csv"));
  EXPECT_EQ(slurp(dir / "a" / "summary.json"), slurp(dir / "b" / "summary.json"));
  ASSERT_EQ(cmd_run(cfg.string(), (dir / "c").string(), RunOverrides{99, {}, {}, 2}, sink, sink), kExitOk);
  EXPECT_NE(slurp(dir / "a" / "trials.csv"), slurp(dir / "c" / "trials.csv"));
}

TEST(Cli, OverridesApply) {
  const fs::path dir = scratch_dir("overrides");
  const fs::path cfg = write(dir / "bell.json", kSmallBell);
  std::ostringstream sink;
  ASSERT_EQ(cmd_run(cfg.string(), (dir / "out").string(), RunOverrides{7, 100, "ruin", 2}, sink, sink), kExitOk);
  const auto resolved = nlohmann::json::parse(slurp(dir / "out" / "config.json"));
  EXPECT_EQ(resolved["seed"], 7);
  EXPECT_EQ(resolved["trials"], 100);
}

TEST(Cli, BadConfigExitsWithOne) {
  const fs::path dir = scratch_dir("bad");
  const fs::path cfg = write(dir / "bad.json", R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach",
    "weights": [0.4, 0.5]})");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_run(cfg.string(), (dir / "out").string(), {}, out, err), kExitConfig);
  EXPECT_NE(err.str().find("amplitudes not normalized"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "out"));
  EXPECT_EQ(run_binary("run --config " + cfg.string() + " --out " + (dir / "out").string()), 1);
  EXPECT_EQ(run_binary("run --config " + (dir / "missing.json").string() + " --out " + (dir / "out").string()), 1);
  EXPECT_EQ(run_binary("frobnicate"), 1);
}

TEST(Cli, BinaryRunSucceeds) {
  const fs::path dir = scratch_dir("binary");
  const fs::path cfg = write(dir / "bell.json", kSmallBell);
  EXPECT_EQ(run_binary("run --config " + cfg.string() + " --out " + (dir / "out").string() + " --threads 2"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "trials.csv"));
}

TEST(Cli, ValidateDetectsPumpingSignError) {
  std::ostringstream out;
  EXPECT_EQ(cmd_validate(ValidationLevel::fast, out), kExitOk) << out.str();
  ValidationHooks broken;
  broken.pumping = [](const BranchMeans& m) {
    PumpingMatrix a = pumping_matrix(m);
    for (int k = 0; k < a.size(); ++k)
      for (int l = 0; l < k; ++l) a.a(k, l) = a.a(l, k);
    return a;
  };
  std::ostringstream bad;
  EXPECT_EQ(cmd_validate(ValidationLevel::fast, bad, broken), kExitInvariant);
  EXPECT_NE(bad.str().find("some suites failed"), std::string::npos);
}

TEST(Cli, TraceWithoutCouplingKeepsWeightsFlat) {
  const fs::path dir = scratch_dir("flat");
  const fs::path cfg = write(dir / "flat.json", R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach",
    "weights": [0.4, 0.6], "detector": {"grid": {"points": 16, "x_min": -8, "x_max": 8}},
    "engine": "full", "zeta": 0, "max_steps": 100, "trials": 1})");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_trace(cfg.string(), (dir / "out").string(), {}, out, err), kExitOk) << err.str();
  const std::string csv = slurp(dir / "out" / "trace.csv");
  const auto w0 = column(csv, "w_0");
  ASSERT_EQ(w0.size(), 101u);
  for (const auto& v : w0) EXPECT_NEAR(std::stod(v), 0.4, 1e-9);
  const auto summary = nlohmann::json::parse(slurp(dir / "out" / "trace_summary.json"));
  EXPECT_EQ(summary["status"], "horizon");
}

TEST(Cli, TraceRejectsRuinEngine) {
  const fs::path dir = scratch_dir("trace_ruin");
  const fs::path cfg = write(dir / "r.json", R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach", "weights": [1]})");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_trace(cfg.string(), (dir / "out").string(), {}, out, err), kExitConfig);
}

TEST(Cli, TraceThenReplayReachesTheSameWinner) {
  const fs::path dir = scratch_dir("replay");
  fs::copy_file(config_path("trace_collapse.json"), dir / "trace.json");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_trace((dir / "trace.json").string(), (dir / "traced").string(), {}, out, err), kExitOk) << err.str();
  const auto summary = nlohmann::json::parse(slurp(dir / "traced" / "trace_summary.json"));
  ASSERT_EQ(summary["status"], "collapsed");
  EXPECT_LE(summary["max_weight_error"].get<double>(), 1e-9);
  EXPECT_LE(summary["max_no_heating"].get<double>(), 1e-10);

  const fs::path replay = write(dir / "replay.json", R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach",
    "weights": [0.4, 0.6], "noise": {"kind": "replay", "trace": "traced/trace.csv"},
    "zeta": 1.0, "dt": 0.01, "epsilon": 0.3, "max_steps": 1000, "trials": 1})");
  ASSERT_EQ(cmd_run(replay.string(), (dir / "replayed").string(), RunOverrides{{}, {}, {}, 1}, out, err), kExitOk)
      << err.str();
  const auto winners = column(slurp(dir / "replayed" / "trials.csv"), "winner");
  ASSERT_EQ(winners.size(), 1u);
  EXPECT_EQ(std::stoi(winners[0]), summary["winner"].get<int>());
  const long traced_steps = summary["steps"].get<long>();
  const long replayed_steps = std::stol(column(slurp(dir / "replayed" / "trials.csv"), "steps")[0]);
  EXPECT_LE(std::abs(replayed_steps - traced_steps), 2);
}
