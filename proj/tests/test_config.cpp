#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "collapse/config.hpp"
#include "collapse/io.hpp"

using namespace collapse;

namespace {

int error_line(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

std::string error_message(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("collapse_test_config_" + name);
  std::filesystem::create_directories(dir);
  return dir;
}

const char* kTrace =
    "step,t,dt,w_0,w_1,A_0_1,no_heating,live_mask\n"
    "0,0,0.01,0.5,0.5,0.25,0,11\n"
    "1,0.01,0.02,0.51,0.49,-1.5,0,11\n"
    "2,0.03,0,0.52,0.48,0.75,0,11\n";

}  // namespace

TEST(Config, MinimalSternGerlachUsesDefaults) {
  const ScenarioConfig c = parse_config(R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach", "weights": [0.25, 0.75]})");
  EXPECT_EQ(c.kind, ScenarioKind::stern_gerlach);
  ASSERT_EQ(c.amplitudes.size(), 2u);
  EXPECT_DOUBLE_EQ(c.amplitudes[1].real(), std::sqrt(0.75));
  EXPECT_EQ(c.engine, EngineKind::ruin);
  EXPECT_EQ(c.detector_count(), 2);
  EXPECT_EQ(c.detectors.size(), 1u);
  EXPECT_EQ(c.epsilon, kDefaultEpsilon);
}

TEST(Config, ComplexAmplitudes) {
  const ScenarioConfig c =
      parse_config(R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach", "amplitudes": [[0.6, 0], [0, 0.8]]})");
  EXPECT_EQ(c.amplitudes[1], cplx(0.0, 0.8));
}

TEST(Config, UnnormalizedAmplitudesAreRejected) {
  const std::string text = "{\n  \"schema\": \"collapse-scenario/1\",\n  \"kind\": \"stern-gerlach\",\n"
                           "  \"weights\": [0.4, 0.5]\n}";
  EXPECT_NE(error_message(text).find("amplitudes not normalized"), std::string::npos);
  EXPECT_EQ(error_line(text), 4);
}

TEST(Config, UnknownFieldIsRejectedWithItsLine) {
  const std::string text = "{\n  \"schema\": \"collapse-scenario/1\",\n  \"kind\": \"bell\",\n"
                           "  \"settings\": {\"a\": [0], \"b\": [1]},\n  \"temperature\": 3\n}";
  EXPECT_EQ(error_line(text), 5);
  EXPECT_NE(error_message(text).find("temperature"), std::string::npos);
}

TEST(Config, NestedErrorsCarryLines) {
  const std::string text = "{\n  \"schema\": \"collapse-scenario/1\",\n  \"kind\": \"stern-gerlach\",\n"
                           "  \"weights\": [0.5, 0.5],\n  \"detector\": {\n    \"grid\": {\"points\": 16},\n"
                           "    \"mass\": -1\n  }\n}";
  EXPECT_EQ(error_line(text), 7);
}

TEST(Config, MalformedJsonCarriesLine) {
  const std::string text = "{\n  \"schema\": \"collapse-scenario/1\",\n  \"kind\": \"bell\"\n  \"trials\": 4\n}";
  EXPECT_EQ(error_line(text), 4);
}

TEST(Config, StructuralErrors) {
  EXPECT_THROW(parse_config(R"({"kind": "bell"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"schema": "collapse-scenario/2", "kind": "bell"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"schema": "collapse-scenario/1", "kind": "epr"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"schema": "collapse-scenario/1", "kind": "bell", "settings": {"a": [0]}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"schema": "collapse-scenario/1", "kind": "ghz", "settings": ["XZX"]})"), ConfigError);
  EXPECT_THROW(
      parse_config(R"({"schema": "collapse-scenario/1", "kind": "bell", "settings": {"a": [0], "b": [0]}, "weights": [1]})"),
      ConfigError);
  EXPECT_THROW(parse_config(R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach", "weights": [1], "engine": "fast"})"),
               ConfigError);
  EXPECT_THROW(parse_config(R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach", "weights": [1], "dt": 0})"),
               ConfigError);
  EXPECT_THROW(parse_config(R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach", "weights": [1], "epsilon": 0.5})"),
               ConfigError);
}

TEST(Config, DetectorListMustMatchScenario) {
  EXPECT_THROW(parse_config(R"({"schema": "collapse-scenario/1", "kind": "bell", "settings": {"a": [0], "b": [0]},
                               "detectors": [{}, {}]})"),
               ConfigError);
  const ScenarioConfig c = parse_config(R"({"schema": "collapse-scenario/1", "kind": "bell", "settings": {"a": [0], "b": [0]},
                               "detectors": [{}, {"mass": 2}, {}, {}]})");
  EXPECT_EQ(c.detector(1).mass, 2.0);
}

TEST(Config, GhzLabelsAndAngles) {
  const ScenarioConfig c =
      parse_config(R"({"schema": "collapse-scenario/1", "kind": "ghz", "settings": ["XYY", [0.1, 0.2, 0.3]]})");
  ASSERT_EQ(c.ghz_settings.size(), 2u);
  EXPECT_EQ(c.ghz_settings[0].angles[1], std::numbers::pi / 2.0);
  EXPECT_EQ(c.ghz_settings[1].angles[2], 0.3);
  EXPECT_EQ(c.detector_count(), 6);
}

TEST(Config, RoundTripsThroughJson) {
  const ScenarioConfig c = parse_config(R"({"schema": "collapse-scenario/1", "name": "rt", "kind": "ghz",
      "settings": ["XXX", [0.1, 0.2, 0.3]],
      "detector": {"grid": {"points": 24, "x_min": -5, "x_max": 6}, "potential": {"type": "double-well", "tilt": 0.2},
                   "momentum": "central-difference", "sampler": {"spread_x": 0.2}, "hit_kick": {"x": 2}},
      "engine": "product", "picture": "schroedinger", "noise": {"kind": "telegraph", "amplitude": 0.5, "flip_rate": 2},
      "zeta": 0.3, "dt": 0.005, "epsilon": 1e-5, "max_steps": 77, "trials": 12, "seed": 18446744073709551615})");
  const nlohmann::json j = config_to_json(c);
  const ScenarioConfig back = parse_config(j.dump(2));
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.seed, 18446744073709551615ull);
  EXPECT_EQ(back.detector(0).scheme, MomentumScheme::central_difference);
  EXPECT_EQ(back.noise.kind, NoiseKind::telegraph);
  EXPECT_EQ(back.ghz_settings[0].label, "XXX");
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"stern_gerlach.json", "stern_gerlach_k3.json", "bell_chsh.json", "ghz.json", "trace_full.json",
                           "trace_collapse.json"}) {
    EXPECT_NO_THROW(load_config(std::string(COLLAPSE_CONFIG_DIR) + "/" + name)) << name;
  }
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, ReplayNoiseLoadsTraceRelativeToConfig) {
  const auto dir = scratch_dir("replay");
  std::ofstream(dir / "trace.csv") << kTrace;
  std::ofstream(dir / "replay.json") << R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach", "weights": [0.5, 0.5],
      "noise": {"kind": "replay", "trace": "trace.csv"}})";
  const ScenarioConfig c = load_config((dir / "replay.json").string());
  ASSERT_TRUE(c.replay);
  EXPECT_EQ(c.replay->size(), 2u);
  EXPECT_EQ(c.replay_path, "trace.csv");

  std::ofstream(dir / "k3.json") << R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach", "weights": [0.2, 0.3, 0.5],
      "noise": {"kind": "replay", "trace": "trace.csv"}})";
  EXPECT_THROW(load_config((dir / "k3.json").string()), ConfigError);
  std::ofstream(dir / "full.json") << R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach", "weights": [0.5, 0.5],
      "engine": "full", "noise": {"kind": "replay", "trace": "trace.csv"}})";
  EXPECT_THROW(load_config((dir / "full.json").string()), ConfigError);
  std::ofstream(dir / "missing.json") << R"({"schema": "collapse-scenario/1", "kind": "stern-gerlach", "weights": [0.5, 0.5],
      "noise": {"kind": "replay", "trace": "absent.csv"}})";
  EXPECT_THROW(load_config((dir / "missing.json").string()), ConfigError);
}

TEST(TraceFormat, ParsesStepsAndSkipsFinalRow) {
  std::istringstream in(kTrace);
  const ReplayTrace t = parse_replay_trace(in);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.dt[1], 0.02);
  EXPECT_EQ(t.a[0](0, 1), 0.25);
  EXPECT_EQ(t.a[0](1, 0), -0.25);
  EXPECT_EQ(t.a[1](0, 1), -1.5);
}

TEST(TraceFormat, Errors) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return parse_replay_trace(in);
  };
  EXPECT_THROW(parse(""), TraceFormatError);
  EXPECT_THROW(parse("step,t,w_0\n0,0,1\n"), TraceFormatError);
  EXPECT_THROW(parse("step,t,dt,w_0,w_1,A_0_2\n0,0,0.1,0.5,0.5,1\n"), TraceFormatError);
  EXPECT_THROW(parse("step,t,dt,w_0,w_1,A_0_1\n0,0,0.1,0.5\n"), TraceFormatError);
  EXPECT_THROW(parse("step,t,dt,w_0,w_1,A_0_1\n0,0,0.1,0.5,0.5,abc\n"), TraceFormatError);
  EXPECT_THROW(parse("step,t,dt,w_0,w_1,A_0_1\n0,0,-0.1,0.5,0.5,1\n"), TraceFormatError);
  EXPECT_THROW(parse("step,t,dt,w_0,w_1,A_0_1\n0,0,0,0.5,0.5,1\n"), TraceFormatError);
}

TEST(TraceFormat, WriterRoundTripsThroughReader) {
  TraceRow row;
  row.step = 3;
  row.t = 0.1 + 0.2;
  row.dt = 1.0 / 3.0;
  row.w = RealVector::Constant(3, 1.0 / 3.0);
  row.a = RealMatrix::Zero(3, 3);
  row.a(0, 1) = std::nextafter(0.1, 1.0);
  row.a(0, 2) = -1e-300;
  row.a(1, 2) = 12345.678901234567;
  row.live = {true, false, true};
  const std::string line = trace_line(row);
  EXPECT_NE(line.find(",101\n"), std::string::npos);
  std::istringstream in(trace_header(3) + line);
  const ReplayTrace t = parse_replay_trace(in);
  EXPECT_EQ(t.dt[0], row.dt);
  for (int k = 0; k < 3; ++k)
    for (int m = k + 1; m < 3; ++m) EXPECT_EQ(t.a[0](k, m), row.a(k, m));
  EXPECT_EQ(trace_header(3), "step,t,dt,w_0,w_1,w_2,A_0_1,A_0_2,A_1_2,no_heating,live_mask\n");
}
