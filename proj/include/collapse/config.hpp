#pragma once

// Scenario configuration documents (JSON, schema "collapse-scenario/1").
// Unknown keys are rejected; every error carries the line it refers to.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "collapse/detector.hpp"
#include "collapse/full_dynamics.hpp"
#include "collapse/io.hpp"
#include "collapse/ruin.hpp"

namespace collapse {

inline constexpr const char* kSchemaVersion = "collapse-scenario/1";

enum class ScenarioKind { stern_gerlach, bell, ghz };
enum class EngineKind { full, product, ruin };

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct DetectorConfig {
  int points = 64;
  double x_min = -8.0;
  double x_max = 8.0;
  Potential potential = InvertedOscillator{1.0, 0.05};
  double mass = 1.0;
  MomentumScheme scheme = MomentumScheme::spectral;
  SamplerParams sampler;
  PhasePoint hit_kick{1.0, 1.0};

  DetectorModel model() const { return DetectorModel(Grid(points, x_min, x_max), potential, mass, scheme); }
};

struct GhzSetting {
  std::string label;
  std::array<double, 3> angles{};
};

struct ScenarioConfig {
  std::string name;
  ScenarioKind kind = ScenarioKind::stern_gerlach;
  std::vector<cplx> amplitudes;            // Stern-Gerlach only
  std::vector<double> settings_a, settings_b;  // Bell: left and right analyzer angles
  std::vector<GhzSetting> ghz_settings;    // GHZ
  std::vector<DetectorConfig> detectors;   // one entry (shared) or one per detector
  EngineKind engine = EngineKind::ruin;
  Picture picture = Picture::interaction;
  NoiseSpec noise;
  std::string replay_path;                     // noise kind "replay": trace file as written
  std::shared_ptr<const ReplayTrace> replay;   // loaded trace for replay noise
  double zeta = 1.0;
  double dt = 0.01;
  double epsilon = kDefaultEpsilon;
  long max_steps = 200000;
  long trials = 10000;
  std::uint64_t seed = 1;

  /// Detector count implied by the scenario kind.
  int detector_count() const {
    switch (kind) {
      case ScenarioKind::stern_gerlach: return static_cast<int>(amplitudes.size());
      case ScenarioKind::bell: return 4;
      case ScenarioKind::ghz: return 6;
    }
    return 0;
  }

  const DetectorConfig& detector(int d) const { return detectors.size() == 1 ? detectors[0] : detectors.at(d); }
};

inline std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::stern_gerlach: return "stern-gerlach";
    case ScenarioKind::bell: return "bell";
    case ScenarioKind::ghz: return "ghz";
  }
  return "";
}

inline std::string to_string(EngineKind e) {
  switch (e) {
    case EngineKind::full: return "full";
    case EngineKind::product: return "product";
    case EngineKind::ruin: return "ruin";
  }
  return "";
}

inline EngineKind parse_engine(const std::string& s) {
  if (s == "full") return EngineKind::full;
  if (s == "product") return EngineKind::product;
  if (s == "ruin") return EngineKind::ruin;
  throw std::invalid_argument("unknown engine '" + s + "' (expected full, product or ruin)");
}

/// Named GHZ settings: X = angle 0, Y = angle pi/2, per particle.
inline std::array<double, 3> ghz_angles_from_label(const std::string& label) {
  if (label.size() != 3) throw std::invalid_argument("GHZ setting label must have three letters");
  std::array<double, 3> out{};
  for (int j = 0; j < 3; ++j) {
    if (label[j] == 'X') out[j] = 0.0;
    else if (label[j] == 'Y') out[j] = std::numbers::pi / 2.0;
    else throw std::invalid_argument("GHZ setting letters must be X or Y");
  }
  return out;
}

namespace detail {

using nlohmann::json;

/// Finds the line of a key path by scanning the raw text for each quoted key in turn.
class LineLocator {
 public:
  explicit LineLocator(const std::string& text) : text_(text) {}

  int line_of(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    bool found = false;
    for (const auto& key : path) {
      const std::size_t at = text_.find("\"" + key + "\"", pos);
      if (at == std::string::npos) break;
      pos = at;
      found = true;
    }
    return found ? line_at(pos) : 0;
  }

  int line_at(std::size_t byte) const {
    int line = 1;
    for (std::size_t i = 0; i < byte && i < text_.size(); ++i)
      if (text_[i] == '\n') ++line;
    return line;
  }

 private:
  const std::string& text_;
};

class Reader {
 public:
  Reader(const json& j, std::vector<std::string> path, const LineLocator& loc)
      : j_(j), path_(std::move(path)), loc_(loc) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& msg, const std::string& key = "") const {
    std::vector<std::string> p = path_;
    if (!key.empty()) p.push_back(key);
    std::string where;
    for (const auto& s : p) where += (where.empty() ? "" : ".") + s;
    throw ConfigError(where.empty() ? msg : where + ": " + msg, loc_.line_of(p));
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!ok.count(it.key())) fail("unknown field '" + it.key() + "'", it.key());
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& raw(const std::string& key) const { return j_.at(key); }
  std::vector<std::string> child(const std::string& key) const {
    auto p = path_;
    p.push_back(key);
    return p;
  }
  const LineLocator& locator() const { return loc_; }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return number_value(j_.at(key), key);
  }
  double number_value(const json& v, const std::string& key) const {
    if (!v.is_number()) fail("expected a number", key);
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail("expected a finite number", key);
    return x;
  }
  double positive(const std::string& key, double fallback) const {
    const double x = number(key, fallback);
    if (!(x > 0.0)) fail("must be positive", key);
    return x;
  }
  long integer(const std::string& key, long fallback, long min_value) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) fail("expected an integer", key);
    const long x = v.get<long>();
    if (x < min_value) fail("must be at least " + std::to_string(min_value), key);
    return x;
  }
  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
      fail("expected a non-negative integer", key);
    return v.get<std::uint64_t>();
  }
  std::string string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) fail("expected a string", key);
    return v.get<std::string>();
  }
  std::vector<double> numbers(const std::string& key) const {
    const json& v = j_.at(key);
    if (!v.is_array() || v.empty()) fail("expected a non-empty array of numbers", key);
    std::vector<double> out;
    for (const auto& e : v) out.push_back(number_value(e, key));
    return out;
  }

 private:
  const json& j_;
  std::vector<std::string> path_;
  const LineLocator& loc_;
};

inline PhasePoint read_phase_point(const Reader& parent, const std::string& key, PhasePoint fallback) {
  if (!parent.has(key)) return fallback;
  Reader r(parent.raw(key), parent.child(key), parent.locator());
  r.allow({"x", "p"});
  return {r.number("x", fallback.x), r.number("p", fallback.p)};
}

inline DetectorConfig read_detector(const json& j, std::vector<std::string> path, const LineLocator& loc) {
  Reader r(j, path, loc);
  r.allow({"grid", "potential", "mass", "momentum", "sampler", "hit_kick"});
  DetectorConfig d;
  if (r.has("grid")) {
    Reader g(r.raw("grid"), r.child("grid"), loc);
    g.allow({"points", "x_min", "x_max"});
    d.points = static_cast<int>(g.integer("points", d.points, 2));
    d.x_min = g.number("x_min", d.x_min);
    d.x_max = g.number("x_max", d.x_max);
    if (!(d.x_max > d.x_min)) g.fail("x_max must exceed x_min", "x_max");
  }
  if (r.has("potential")) {
    Reader p(r.raw("potential"), r.child("potential"), loc);
    const std::string type = p.string("type", "");
    if (type == "inverted-oscillator") {
      p.allow({"type", "curvature", "quartic"});
      d.potential = InvertedOscillator{p.number("curvature", 1.0), p.number("quartic", 0.0)};
    } else if (type == "double-well") {
      p.allow({"type", "barrier_height", "tilt", "well_position"});
      d.potential = BiasedDoubleWell{p.number("barrier_height", 1.0), p.number("tilt", 0.1),
                                     p.positive("well_position", 1.0)};
    } else if (type == "kicked") {
      p.allow({"type", "kick_strength", "period", "frequency"});
      d.potential = KickedOscillator{p.number("kick_strength", 1.0), p.positive("period", 1.0),
                                     p.number("frequency", 1.0)};
    } else {
      p.fail("type must be inverted-oscillator, double-well or kicked", "type");
    }
  }
  d.mass = r.positive("mass", d.mass);
  const std::string scheme = r.string("momentum", "spectral");
  if (scheme == "spectral") d.scheme = MomentumScheme::spectral;
  else if (scheme == "central-difference") d.scheme = MomentumScheme::central_difference;
  else r.fail("must be spectral or central-difference", "momentum");
  if (r.has("sampler")) {
    Reader s(r.raw("sampler"), r.child("sampler"), loc);
    s.allow({"mean_x0", "mean_p0", "spread_x", "spread_p", "packet_width"});
    d.sampler.mean_x0 = s.number("mean_x0", d.sampler.mean_x0);
    d.sampler.mean_p0 = s.number("mean_p0", d.sampler.mean_p0);
    d.sampler.spread_x = s.positive("spread_x", d.sampler.spread_x);
    d.sampler.spread_p = s.positive("spread_p", d.sampler.spread_p);
    d.sampler.packet_width = s.positive("packet_width", d.sampler.packet_width);
  }
  d.hit_kick = read_phase_point(r, "hit_kick", d.hit_kick);
  return d;
}

inline cplx read_amplitude(const Reader& r, const json& v) {
  if (v.is_number()) return {v.get<double>(), 0.0};
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
    return {v[0].get<double>(), v[1].get<double>()};
  r.fail("each amplitude must be a number or a [re, im] pair", "amplitudes");
}

}  // namespace detail

/// Parses and validates a configuration document. Relative trace paths are
/// resolved against base_dir.
inline ScenarioConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  using nlohmann::json;
  detail::LineLocator loc(text);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const int line = loc.line_at(e.byte > 0 ? e.byte - 1 : 0);
    std::string msg = e.what();
    if (const auto pos = msg.find("syntax error"); pos != std::string::npos) msg = msg.substr(pos);
    throw ConfigError("malformed JSON: " + msg, line);
  }
  detail::Reader r(j, {}, loc);
  r.allow({"schema", "name", "kind", "amplitudes", "weights", "settings", "detector", "detectors", "engine",
           "picture", "noise", "zeta", "dt", "epsilon", "max_steps", "trials", "seed"});
  if (!r.has("schema")) throw ConfigError("missing field 'schema'", 1);
  if (r.string("schema", "") != kSchemaVersion)
    r.fail(std::string("unsupported schema (expected \"") + kSchemaVersion + "\")", "schema");

  ScenarioConfig c;
  c.name = r.string("name", "");
  const std::string kind = r.string("kind", "");
  if (kind == "stern-gerlach") c.kind = ScenarioKind::stern_gerlach;
  else if (kind == "bell") c.kind = ScenarioKind::bell;
  else if (kind == "ghz") c.kind = ScenarioKind::ghz;
  else if (!r.has("kind")) throw ConfigError("missing field 'kind'", 1);
  else r.fail("kind must be stern-gerlach, bell or ghz", "kind");

  if (c.kind == ScenarioKind::stern_gerlach) {
    if (r.has("amplitudes") == r.has("weights"))
      throw ConfigError("stern-gerlach needs exactly one of 'amplitudes' or 'weights'",
                        loc.line_of({r.has("weights") ? "weights" : "kind"}));
    if (r.has("settings")) r.fail("not used by stern-gerlach", "settings");
    if (r.has("weights")) {
      for (double w : r.numbers("weights")) {
        if (w < 0.0) r.fail("weights must be non-negative", "weights");
        c.amplitudes.emplace_back(std::sqrt(w), 0.0);
      }
    } else {
      const json& a = r.raw("amplitudes");
      if (!a.is_array() || a.empty()) r.fail("expected a non-empty array", "amplitudes");
      for (const auto& v : a) c.amplitudes.push_back(detail::read_amplitude(r, v));
    }
    double norm = 0.0;
    for (const auto& z : c.amplitudes) norm += std::norm(z);
    if (std::abs(norm - 1.0) > 1e-6)
      r.fail("amplitudes not normalized (sum of |c|^2 = " + std::to_string(norm) + ")",
             r.has("weights") ? "weights" : "amplitudes");
    for (auto& z : c.amplitudes) z /= std::sqrt(norm);
  } else {
    if (r.has("amplitudes") || r.has("weights"))
      r.fail("amplitudes follow from the source state and settings", r.has("weights") ? "weights" : "amplitudes");
    if (!r.has("settings")) throw ConfigError("missing field 'settings'", loc.line_of({"kind"}));
    if (c.kind == ScenarioKind::bell) {
      detail::Reader s(r.raw("settings"), r.child("settings"), loc);
      s.allow({"a", "b"});
      if (!s.has("a") || !s.has("b")) s.fail("needs both 'a' and 'b' angle lists");
      c.settings_a = s.numbers("a");
      c.settings_b = s.numbers("b");
    } else {
      const json& s = r.raw("settings");
      if (!s.is_array() || s.empty()) r.fail("expected a non-empty array of settings", "settings");
      for (const auto& e : s) {
        GhzSetting g;
        try {
          if (e.is_string()) {
            g.label = e.get<std::string>();
            g.angles = ghz_angles_from_label(g.label);
          } else if (e.is_array() && e.size() == 3) {
            for (int i = 0; i < 3; ++i) g.angles[i] = r.number_value(e[i], "settings");
            std::ostringstream os;
            os.precision(17);
            os << g.angles[0] << "," << g.angles[1] << "," << g.angles[2];
            g.label = os.str();
          } else {
            r.fail("each GHZ setting is a label like \"XYY\" or three angles", "settings");
          }
        } catch (const std::invalid_argument& ex) {
          r.fail(ex.what(), "settings");
        }
        c.ghz_settings.push_back(g);
      }
    }
  }

  if (r.has("detector") && r.has("detectors")) r.fail("give either 'detector' or 'detectors', not both", "detectors");
  if (r.has("detectors")) {
    const json& ds = r.raw("detectors");
    if (!ds.is_array() || ds.empty()) r.fail("expected a non-empty array", "detectors");
    for (const auto& d : ds) c.detectors.push_back(detail::read_detector(d, r.child("detectors"), loc));
    if (c.detectors.size() != 1 && static_cast<int>(c.detectors.size()) != c.detector_count())
      r.fail("expected 1 or " + std::to_string(c.detector_count()) + " detector entries", "detectors");
  } else if (r.has("detector")) {
    c.detectors.push_back(detail::read_detector(r.raw("detector"), r.child("detector"), loc));
  } else {
    c.detectors.push_back(DetectorConfig{});
  }

  try {
    c.engine = parse_engine(r.string("engine", "ruin"));
  } catch (const std::invalid_argument& e) {
    r.fail(e.what(), "engine");
  }
  const std::string picture = r.string("picture", "interaction");
  if (picture == "interaction") c.picture = Picture::interaction;
  else if (picture == "schroedinger") c.picture = Picture::schroedinger;
  else r.fail("must be interaction or schroedinger", "picture");

  if (r.has("noise")) {
    detail::Reader n(r.raw("noise"), r.child("noise"), loc);
    n.allow({"kind", "amplitude", "flip_rate", "trace"});
    const std::string k = n.string("kind", "gaussian");
    if (k == "gaussian") c.noise.kind = NoiseKind::gaussian;
    else if (k == "telegraph") c.noise.kind = NoiseKind::telegraph;
    else if (k == "replay") c.noise.kind = NoiseKind::replay;
    else n.fail("must be gaussian, telegraph or replay", "kind");
    if (c.noise.kind == NoiseKind::replay) {
      if (!n.has("trace")) n.fail("replay noise needs a 'trace' file");
      c.replay_path = n.string("trace", "");
      std::filesystem::path path(c.replay_path);
      if (path.is_relative()) path = base_dir / path;
      try {
        c.replay = std::make_shared<const ReplayTrace>(read_replay_trace(path.string()));
      } catch (const TraceFormatError& e) {
        n.fail(e.what(), "trace");
      }
    } else if (n.has("trace")) {
      n.fail("only used by replay noise", "trace");
    }
    c.noise.amplitude = n.number("amplitude", 1.0);
    if (c.noise.amplitude < 0.0) n.fail("must be non-negative", "amplitude");
    c.noise.flip_rate = n.positive("flip_rate", 1.0);
  }
  c.zeta = r.number("zeta", c.zeta);
  if (c.zeta < 0.0) r.fail("must be non-negative", "zeta");
  c.dt = r.positive("dt", c.dt);
  c.epsilon = r.positive("epsilon", c.epsilon);
  if (c.epsilon >= 0.5) r.fail("must be below 0.5", "epsilon");
  c.max_steps = r.integer("max_steps", c.max_steps, 1);
  c.trials = r.integer("trials", c.trials, 1);
  c.seed = r.unsigned_integer("seed", c.seed);
  if (c.replay) {
    if (c.engine != EngineKind::ruin) r.fail("replay noise drives the ruin engine only", "noise");
    const int K = c.kind == ScenarioKind::stern_gerlach ? static_cast<int>(c.amplitudes.size())
                  : c.kind == ScenarioKind::bell       ? 4
                                                       : 8;
    if (c.replay->a.front().rows() != K)
      r.fail("replay trace has " + std::to_string(c.replay->a.front().rows()) + " branches, scenario has " +
                 std::to_string(K),
             "noise");
  }
  return c;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'", 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::filesystem::path(path).parent_path());
}

inline nlohmann::json detector_to_json(const DetectorConfig& d) {
  nlohmann::json j;
  j["grid"] = {{"points", d.points}, {"x_min", d.x_min}, {"x_max", d.x_max}};
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, InvertedOscillator>)
          j["potential"] = {{"type", "inverted-oscillator"}, {"curvature", v.curvature}, {"quartic", v.quartic}};
        else if constexpr (std::is_same_v<T, BiasedDoubleWell>)
          j["potential"] = {{"type", "double-well"},
                            {"barrier_height", v.barrier_height},
                            {"tilt", v.tilt},
                            {"well_position", v.well_position}};
        else
          j["potential"] = {{"type", "kicked"},
                            {"kick_strength", v.kick_strength},
                            {"period", v.period},
                            {"frequency", v.frequency}};
      },
      d.potential);
  j["mass"] = d.mass;
  j["momentum"] = d.scheme == MomentumScheme::spectral ? "spectral" : "central-difference";
  j["sampler"] = {{"mean_x0", d.sampler.mean_x0},
                  {"mean_p0", d.sampler.mean_p0},
                  {"spread_x", d.sampler.spread_x},
                  {"spread_p", d.sampler.spread_p},
                  {"packet_width", d.sampler.packet_width}};
  j["hit_kick"] = {{"x", d.hit_kick.x}, {"p", d.hit_kick.p}};
  return j;
}

/// Fully resolved configuration (defaults filled in); parses back to the same config.
inline nlohmann::json config_to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["schema"] = kSchemaVersion;
  if (!c.name.empty()) j["name"] = c.name;
  j["kind"] = to_string(c.kind);
  if (c.kind == ScenarioKind::stern_gerlach) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& z : c.amplitudes) a.push_back({z.real(), z.imag()});
    j["amplitudes"] = a;
  } else if (c.kind == ScenarioKind::bell) {
    j["settings"] = {{"a", c.settings_a}, {"b", c.settings_b}};
  } else {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& g : c.ghz_settings) {
      if (g.label.size() == 3 && g.label.find_first_not_of("XY") == std::string::npos) s.push_back(g.label);
      else s.push_back({g.angles[0], g.angles[1], g.angles[2]});
    }
    j["settings"] = s;
  }
  nlohmann::json ds = nlohmann::json::array();
  for (const auto& d : c.detectors) ds.push_back(detector_to_json(d));
  j["detectors"] = ds;
  j["engine"] = to_string(c.engine);
  j["picture"] = c.picture == Picture::interaction ? "interaction" : "schroedinger";
  if (c.noise.kind == NoiseKind::replay)
    j["noise"] = {{"kind", "replay"}, {"trace", c.replay_path}};
  else
    j["noise"] = {{"kind", c.noise.kind == NoiseKind::telegraph ? "telegraph" : "gaussian"},
                  {"amplitude", c.noise.amplitude},
                  {"flip_rate", c.noise.flip_rate}};
  j["zeta"] = c.zeta;
  j["dt"] = c.dt;
  j["epsilon"] = c.epsilon;
  j["max_steps"] = c.max_steps;
  j["trials"] = c.trials;
  j["seed"] = c.seed;
  return j;
}

}  // namespace collapse
