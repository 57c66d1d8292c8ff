#pragma once

// CSV serialization of trial tables and per-step traces. Floating-point
// values are written with 17 significant digits so they round-trip exactly.

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "collapse/ruin.hpp"

namespace collapse {

class TraceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string live_mask_string(const std::vector<bool>& live) {
  std::string s;
  for (bool b : live) s += b ? '1' : '0';
  return s;
}

/// One row of a global trace: the state at the start of a step of length dt
/// (dt = 0 on the final row).
struct TraceRow {
  long step = 0;
  double t = 0.0;
  double dt = 0.0;
  RealVector w;
  RealMatrix a;
  double no_heating = 0.0;
  std::vector<bool> live;
};

inline std::string trace_header(int branches) {
  std::string h = "step,t,dt";
  for (int k = 0; k < branches; ++k) h += ",w_" + std::to_string(k);
  for (int k = 0; k < branches; ++k)
    for (int m = k + 1; m < branches; ++m) h += ",A_" + std::to_string(k) + "_" + std::to_string(m);
  return h + ",no_heating,live_mask\n";
}

inline std::string trace_line(const TraceRow& r) {
  const int K = static_cast<int>(r.w.size());
  std::string s = std::to_string(r.step) + "," + format_double(r.t) + "," + format_double(r.dt);
  for (int k = 0; k < K; ++k) s += "," + format_double(r.w(k));
  for (int k = 0; k < K; ++k)
    for (int m = k + 1; m < K; ++m) s += "," + format_double(r.a(k, m));
  return s + "," + format_double(r.no_heating) + "," + live_mask_string(r.live) + "\n";
}

/// One row of a product-engine trace: detector d's local weights and means.
struct LocalTraceRow {
  double t = 0.0;
  int detector = 0;
  RealVector w, x, p;
};

inline std::string local_trace_header(int branches) {
  std::string h = "t,d";
  for (const char* name : {"w", "x", "p"})
    for (int k = 0; k < branches; ++k) h += std::string(",") + name + "_" + std::to_string(k);
  return h + "\n";
}

inline std::string local_trace_line(const LocalTraceRow& r) {
  std::string s = format_double(r.t) + "," + std::to_string(r.detector);
  for (const RealVector* v : {&r.w, &r.x, &r.p})
    for (Eigen::Index k = 0; k < v->size(); ++k) s += "," + format_double((*v)(k));
  return s + "\n";
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_cell(const std::string& cell, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw TraceFormatError("trace line " + std::to_string(line) + ": not a number: '" + cell + "'");
  }
}

}  // namespace detail

/// Reads the pumping coefficients of a global trace. Rows with dt = 0 carry no
/// step and are skipped.
inline ReplayTrace parse_replay_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw TraceFormatError("trace is empty");
  const auto header = detail::split_csv(line);
  int dt_col = -1, K = 0;
  std::vector<std::array<int, 3>> a_cols;  // column, k, m
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    const std::string& h = header[i];
    if (h == "dt") dt_col = i;
    else if (h.rfind("w_", 0) == 0) ++K;
    else if (h.rfind("A_", 0) == 0) {
      int k = 0, m = 0;
      if (std::sscanf(h.c_str(), "A_%d_%d", &k, &m) != 2) throw TraceFormatError("trace header: bad column '" + h + "'");
      a_cols.push_back({i, k, m});
    }
  }
  if (dt_col < 0 || K < 1) throw TraceFormatError("trace header needs dt and w_k columns");
  for (const auto& c : a_cols)
    if (c[1] < 0 || c[2] >= K || c[1] >= c[2]) throw TraceFormatError("trace header: pumping column out of range");
  ReplayTrace trace;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size())
      throw TraceFormatError("trace line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                             " columns");
    const double dt = detail::parse_cell(cells[dt_col], lineno);
    if (dt == 0.0) continue;
    if (!(dt > 0.0)) throw TraceFormatError("trace line " + std::to_string(lineno) + ": negative dt");
    RealMatrix a = RealMatrix::Zero(K, K);
    for (const auto& c : a_cols) {
      const double v = detail::parse_cell(cells[c[0]], lineno);
      a(c[1], c[2]) = v;
      a(c[2], c[1]) = -v;
    }
    trace.dt.push_back(dt);
    trace.a.push_back(std::move(a));
  }
  if (trace.a.empty()) throw TraceFormatError("trace contains no steps");
  return trace;
}

inline ReplayTrace read_replay_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceFormatError("cannot read trace file '" + path + "'");
  return parse_replay_trace(in);
}

}  // namespace collapse
