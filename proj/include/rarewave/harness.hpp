#pragma once

// Experiment orchestration: key=value configs, single runs with the full analysis chain,
// studies over a parameter ladder, persistence (RWL1 snapshots, CSV, JSON, MANIFEST) and
// two-column plot data.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"
#include "rarewave/energy.hpp"
#include "rarewave/errors.hpp"
#include "rarewave/euler2d.hpp"
#include "rarewave/geometry.hpp"
#include "rarewave/initial_data.hpp"
#include "rarewave/riemann1d.hpp"
#include "rarewave/snapshot_io.hpp"

namespace rarewave {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration

struct AnalysisConfig {
  int order_cap = 2;
  std::vector<double> u_levels;  // empty: 0, 0.25, ... up to u*
  bool energies = true;
  bool background = true;  // subtract an eps = 0 run on the same grid
  double predicate_cap = 1e4;
  double time_ratio = 1.25;  // analysis times delta r^k
  std::vector<double> extra_times{0.25, 0.5};
  std::string snapshots = "ends";  // none | ends | all
  int level_set_order = 2;
};

struct RunConfig {
  PolytropicGas gas;
  double c0 = 1.0, v0 = 0.0;
  int n1 = 1024, n2 = 128;
  std::optional<double> x1_min, x1_max;  // default: domain of dependence
  double delta = 0.05, t_star = 1.0;
  std::optional<double> u_star;  // default (gamma + 1) c0 / (2 (gamma - 1))
  double epsilon = 0.01;
  double u_tail = 2.0, glue_head = 0.8, glue_tail = 0.4;
  std::vector<PerturbationMode> modes{PerturbationMode{}};
  double env_lo = 0.15, env_hi = 1.35;
  std::uint64_t seed = 1;
  bool random_phases = false;
  SolverConfig solver;
  AnalysisConfig analysis;
  std::string output_dir = "rarewave_out";
  int threads = 0;  // 0: OpenMP default

  double ustar() const { return u_star ? *u_star : u_star_default(gas, c0); }

  FanShape shape() const { return {v0, c0, u_tail, glue_head, glue_tail}; }

  // modes with phases drawn from the seed when requested
  PerturbationSpec perturbation(double eps) const {
    PerturbationSpec s;
    s.epsilon = eps;
    s.modes = modes;
    s.env_lo = env_lo;
    s.env_hi = env_hi;
    if (random_phases) {
      std::mt19937_64 rng(seed);
      for (auto& m : s.modes) m.phase = 2.0 * std::numbers::pi * static_cast<double>(rng() >> 11) * 0x1p-53;
    }
    return s;
  }

  RarefactionData data(double eps) const { return RarefactionData(gas, delta, shape(), perturbation(eps)); }
  RarefactionData data() const { return data(epsilon); }

  std::pair<double, double> domain() const {
    if (x1_min && x1_max) return {*x1_min, *x1_max};
    return data().domain_of_dependence(t_star);
  }
  Grid grid() const {
    const auto [lo, hi] = domain();
    return Grid(n1, n2, lo, hi);
  }

  std::vector<double> u_levels() const {
    if (!analysis.u_levels.empty()) return analysis.u_levels;
    std::vector<double> out;
    const double us = ustar();
    for (int k = 0; 0.25 * k < us - 1e-9; ++k) out.push_back(0.25 * k);
    out.push_back(us);
    return out;
  }
};

namespace detail {

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline double to_double(const std::string& v, const std::string& key, int line) {
  double x = 0.0;
  const char* b = v.data();
  const auto [p, ec] = std::from_chars(b, b + v.size(), x);
  if (ec != std::errc() || p != b + v.size() || !std::isfinite(x))
    throw ConfigError(key + ": expected a number, got '" + v + "'", line);
  return x;
}

inline long long to_int(const std::string& v, const std::string& key, int line) {
  long long x = 0;
  const char* b = v.data();
  const auto [p, ec] = std::from_chars(b, b + v.size(), x);
  if (ec != std::errc() || p != b + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'", line);
  return x;
}

inline bool to_bool(const std::string& v, const std::string& key, int line) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'", line);
}

inline std::vector<double> to_list(const std::string& v, const std::string& key, int line) {
  std::vector<double> out;
  if (trim(v).empty()) return out;
  for (const auto& p : split(v, ',')) out.push_back(to_double(p, key, line));
  return out;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t q = 0; q < v.size(); ++q) s += (q ? ", " : "") + fmt(v[q]);
  return s;
}

using Setter = void (*)(RunConfig&, const std::string&, const std::string&, int);

struct KeySpec {
  const char* section;
  const char* key;
  Setter set;
  bool repeatable = false;
};

inline const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> t = {
      {"gas", "gamma", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.gas.gamma = to_double(v, k, l); }},
      {"gas", "k0", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.gas.k0 = to_double(v, k, l); }},
      {"gas", "c0", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.c0 = to_double(v, k, l); }},
      {"gas", "v0", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.v0 = to_double(v, k, l); }},
      {"grid", "n1", [](RunConfig& c, const std::string& k, const std::string& v, int l) {
         const long long n = to_int(v, k, l);
         if (n < 8 || n > 1 << 16) throw ConfigError("n1 must lie in [8, 65536]", l);
         c.n1 = static_cast<int>(n); }},
      {"grid", "n2", [](RunConfig& c, const std::string& k, const std::string& v, int l) {
         const long long n = to_int(v, k, l);
         if (n < 8 || n > 1 << 16) throw ConfigError("n2 must lie in [8, 65536]", l);
         c.n2 = static_cast<int>(n); }},
      {"grid", "x1_min", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.x1_min = to_double(v, k, l); }},
      {"grid", "x1_max", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.x1_max = to_double(v, k, l); }},
      {"data", "delta", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.delta = to_double(v, k, l); }},
      {"data", "t_star", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.t_star = to_double(v, k, l); }},
      {"data", "u_star", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.u_star = to_double(v, k, l); }},
      {"data", "epsilon", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.epsilon = to_double(v, k, l); }},
      {"data", "u_tail", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.u_tail = to_double(v, k, l); }},
      {"data", "glue_head", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.glue_head = to_double(v, k, l); }},
      {"data", "glue_tail", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.glue_tail = to_double(v, k, l); }},
      {"data", "env_lo", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.env_lo = to_double(v, k, l); }},
      {"data", "env_hi", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.env_hi = to_double(v, k, l); }},
      {"data", "mode", [](RunConfig& c, const std::string& k, const std::string& v, int l) {
         const auto p = to_list(v, k, l);
         if (p.size() != 4 && p.size() != 5)
           throw ConfigError("mode: expected k1, k2, amp_c, amp_phi[, phase]", l);
         if (p[1] != std::round(p[1]) || p[1] < 1) throw ConfigError("mode: k2 must be a positive integer", l);
         c.modes.push_back({p[0], static_cast<int>(p[1]), p[2], p[3], p.size() == 5 ? p[4] : 0.0}); },
       true},
      {"data", "seed", [](RunConfig& c, const std::string& k, const std::string& v, int l) {
         const long long s = to_int(v, k, l);
         if (s < 0) throw ConfigError("seed must be non-negative", l);
         c.seed = static_cast<std::uint64_t>(s); }},
      {"data", "random_phases", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.random_phases = to_bool(v, k, l); }},
      {"solver", "cfl", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.solver.cfl = to_double(v, k, l); }},
      {"solver", "flux", [](RunConfig& c, const std::string&, const std::string& v, int l) {
         if (v == "rusanov") c.solver.flux = FluxKind::rusanov;
         else if (v == "hll") c.solver.flux = FluxKind::hll;
         else throw ConfigError("flux must be rusanov or hll", l); }},
      {"solver", "integrator", [](RunConfig& c, const std::string&, const std::string& v, int l) {
         if (v == "euler") c.solver.integrator = Integrator::euler;
         else if (v == "ssprk2") c.solver.integrator = Integrator::ssprk2;
         else throw ConfigError("integrator must be euler or ssprk2", l); }},
      {"analysis", "order_cap", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.analysis.order_cap = static_cast<int>(to_int(v, k, l)); }},
      {"analysis", "u_levels", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.analysis.u_levels = to_list(v, k, l); }},
      {"analysis", "energies", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.analysis.energies = to_bool(v, k, l); }},
      {"analysis", "background", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.analysis.background = to_bool(v, k, l); }},
      {"analysis", "predicate_cap", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.analysis.predicate_cap = to_double(v, k, l); }},
      {"analysis", "time_ratio", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.analysis.time_ratio = to_double(v, k, l); }},
      {"analysis", "extra_times", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.analysis.extra_times = to_list(v, k, l); }},
      {"analysis", "snapshots", [](RunConfig& c, const std::string&, const std::string& v, int l) {
         if (v != "none" && v != "ends" && v != "all") throw ConfigError("snapshots must be none, ends or all", l);
         c.analysis.snapshots = v; }},
      {"analysis", "level_set_order", [](RunConfig& c, const std::string& k, const std::string& v, int l) { c.analysis.level_set_order = static_cast<int>(to_int(v, k, l)); }},
      {"output", "dir", [](RunConfig& c, const std::string&, const std::string& v, int l) {
         if (v.empty()) throw ConfigError("dir must not be empty", l);
         c.output_dir = v; }},
      {"output", "threads", [](RunConfig& c, const std::string& k, const std::string& v, int l) {
         const long long n = to_int(v, k, l);
         if (n < 0 || n > 4096) throw ConfigError("threads must lie in [0, 4096]", l);
         c.threads = static_cast<int>(n); }},
  };
  return t;
}

}  // namespace detail

// Checks every invariant; `line_of` maps a key to the line that set it (0 for defaults).
inline void validate_config(const RunConfig& c, const std::map<std::string, int>& line_of = {}) {
  auto line = [&](const char* key) {
    const auto it = line_of.find(key);
    return it == line_of.end() ? 0 : it->second;
  };
  auto need = [&](bool ok, const char* key, const std::string& msg) {
    if (!ok) throw ConfigError(msg, line(key));
  };
  const double g = c.gas.gamma;
  need(g > 1.0 && g < 3.0, "gamma", "gamma must lie in (1, 3), got " + detail::fmt(g));
  need(c.gas.k0 > 0.0, "k0", "k0 must be positive");
  need(c.c0 > 0.0, "c0", "c0 must be positive");
  need(c.v0 + c.c0 > 0.0, "v0", "v0 + c0 must be positive (forward fan head)");
  need(c.delta > 0.0, "delta", "delta must be positive");
  need(c.t_star <= 1.0, "t_star", "t_star must be <= 1");
  need(c.t_star > c.delta, "t_star", "t_star must exceed delta");
  need(c.epsilon >= 0.0 && c.epsilon <= 0.1, "epsilon", "epsilon must lie in [0, 0.1]");
  need(c.u_tail > 0.0, "u_tail", "u_tail must be positive");
  need(c.glue_head >= 0.0 && c.glue_tail >= 0.0, "glue_head", "glue widths must be non-negative");
  need(c.env_hi > c.env_lo, "env_hi", "env_hi must exceed env_lo");
  const double vac = (g + 1.0) / (g - 1.0) * c.c0;
  const double us = c.ustar();
  need(us > 0.0, "u_star", "u_star must be positive");
  need(us <= vac, "u_star", "u_star = " + detail::fmt(us) + " exceeds the vacuum bound (gamma+1)/(gamma-1) c0 = " + detail::fmt(vac));
  need(us <= c.u_tail, "u_star", "u_star exceeds the fan tail u_tail = " + detail::fmt(c.u_tail));
  need(static_cast<bool>(c.x1_min) == static_cast<bool>(c.x1_max), c.x1_min ? "x1_min" : "x1_max",
       "x1_min and x1_max must be given together");
  if (c.x1_min) need(*c.x1_max > *c.x1_min, "x1_max", "x1_max must exceed x1_min");
  need(c.solver.cfl > 0.0 && c.solver.cfl <= 0.9, "cfl", "cfl must lie in (0, 0.9]");
  const AnalysisConfig& a = c.analysis;
  need(a.order_cap >= 0 && a.order_cap <= kOrderCap, "order_cap", "order_cap must lie in [0, 3]");
  need(a.predicate_cap > 0.0, "predicate_cap", "predicate_cap must be positive");
  need(a.time_ratio > 1.0, "time_ratio", "time_ratio must exceed 1");
  need(a.level_set_order == 1 || a.level_set_order == 2, "level_set_order", "level_set_order must be 1 or 2");
  for (std::size_t q = 0; q < a.u_levels.size(); ++q) {
    need(a.u_levels[q] >= 0.0 && a.u_levels[q] <= us, "u_levels", "u_levels must lie in [0, u_star]");
    need(q == 0 || a.u_levels[q] > a.u_levels[q - 1], "u_levels", "u_levels must increase");
  }
  for (double t : a.extra_times)
    need(t > c.delta && t < c.t_star, "extra_times", "extra_times must lie in (delta, t_star)");
  for (const auto& m : c.modes) need(m.k2 >= 1, "mode", "mode k2 must be a positive integer");
  try {
    const RarefactionData d = c.data();
    need(d.min_sound_speed() > 0.0, "u_tail", "fan reaches vacuum inside the data: reduce u_tail or glue_tail");
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  const auto [lo, hi] = c.domain();
  const double dx = (hi - lo) / c.n1;
  need(c.delta >= 4.0 * dx / (c.v0 + c.c0), "delta",
       "delta = " + detail::fmt(c.delta) + " is below 4 dx / (v0 + c0) = " + detail::fmt(4.0 * dx / (c.v0 + c.c0)));
}

// Flat key=value text with optional [section] headers; '#' and ';' start comments.
// Keys before any header may come from any section. The empty text yields the defaults.
inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::map<std::string, int> line_of;
  std::string section;
  bool modes_seen = false;
  std::istringstream is(text);
  std::string raw;
  int ln = 0;
  while (std::getline(is, raw)) {
    ++ln;
    if (ln == 1 && raw.rfind("\xEF\xBB\xBF", 0) == 0) raw.erase(0, 3);
    const auto hash = raw.find_first_of("#;");
    std::string s = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError("malformed section header", ln);
      section = detail::trim(s.substr(1, s.size() - 2));
      const auto& t = detail::key_table();
      if (std::none_of(t.begin(), t.end(), [&](const auto& k) { return section == k.section; }))
        throw ConfigError("unknown section [" + section + "]", ln);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value", ln);
    const std::string key = detail::trim(s.substr(0, eq)), val = detail::trim(s.substr(eq + 1));
    const detail::KeySpec* spec = nullptr;
    for (const auto& k : detail::key_table())
      if (key == k.key && (section.empty() || section == k.section)) spec = &k;
    if (!spec) {
      if (section.empty()) throw ConfigError("unknown key '" + key + "'", ln);
      throw ConfigError("unknown key '" + key + "' in [" + section + "]", ln);
    }
    if (!spec->repeatable && line_of.count(key))
      throw ConfigError("duplicate key '" + key + "' (first set on line " + std::to_string(line_of[key]) + ")", ln);
    if (spec->repeatable && !modes_seen) {
      c.modes.clear();
      modes_seen = true;
    }
    line_of[key] = ln;
    spec->set(c, key, val, ln);
  }
  validate_config(c, line_of);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

// Canonical text of every setting that affects results; parse_config round-trips it.
inline std::string canonical_text(const RunConfig& c, bool with_output = false) {
  using detail::fmt;
  std::ostringstream os;
  os << "[gas]\ngamma = " << fmt(c.gas.gamma) << "\nk0 = " << fmt(c.gas.k0) << "\nc0 = " << fmt(c.c0)
     << "\nv0 = " << fmt(c.v0) << "\n\n[grid]\nn1 = " << c.n1 << "\nn2 = " << c.n2 << "\n";
  if (c.x1_min) os << "x1_min = " << fmt(*c.x1_min) << "\nx1_max = " << fmt(*c.x1_max) << "\n";
  os << "\n[data]\ndelta = " << fmt(c.delta) << "\nt_star = " << fmt(c.t_star) << "\n";
  if (c.u_star) os << "u_star = " << fmt(*c.u_star) << "\n";
  os << "epsilon = " << fmt(c.epsilon) << "\nu_tail = " << fmt(c.u_tail) << "\nglue_head = " << fmt(c.glue_head)
     << "\nglue_tail = " << fmt(c.glue_tail) << "\nenv_lo = " << fmt(c.env_lo) << "\nenv_hi = " << fmt(c.env_hi)
     << "\n";
  for (const auto& m : c.modes)
    os << "mode = " << fmt(m.k1) << ", " << m.k2 << ", " << fmt(m.amp_c) << ", " << fmt(m.amp_phi) << ", "
       << fmt(m.phase) << "\n";
  os << "seed = " << c.seed << "\nrandom_phases = " << (c.random_phases ? "true" : "false") << "\n\n[solver]\ncfl = "
     << fmt(c.solver.cfl) << "\nflux = " << (c.solver.flux == FluxKind::rusanov ? "rusanov" : "hll")
     << "\nintegrator = " << (c.solver.integrator == Integrator::ssprk2 ? "ssprk2" : "euler") << "\n\n[analysis]\n";
  const AnalysisConfig& a = c.analysis;
  os << "order_cap = " << a.order_cap << "\n";
  if (!a.u_levels.empty()) os << "u_levels = " << detail::join(a.u_levels) << "\n";
  os << "energies = " << (a.energies ? "true" : "false") << "\nbackground = " << (a.background ? "true" : "false")
     << "\npredicate_cap = " << fmt(a.predicate_cap) << "\ntime_ratio = " << fmt(a.time_ratio)
     << "\nextra_times = " << detail::join(a.extra_times) << "\nsnapshots = " << a.snapshots
     << "\nlevel_set_order = " << a.level_set_order << "\n";
  if (with_output) os << "\n[output]\ndir = " << c.output_dir << "\nthreads = " << c.threads << "\n";
  return os.str();
}

// FNV-1a, 64 bit
inline std::uint64_t content_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const RunConfig& c) { return hash_hex(content_hash("rarewave-run-v1\n" + canonical_text(c))); }

// ---------------------------------------------------------------------------
// single run

struct GeometryRow {
  double t = 0.0;
  std::size_t band_cells = 0;
  double kappa_t = 0.0;  // max |kappa / t - 1|
  double T1p = 0.0, T2 = 0.0, chi = 0.0, zeta = 0.0, eta = 0.0;
  double Lmu_min = 0.0, Trw_max = 0.0, Lbar_r_w_max = 0.0;
  double yring = 0.0, zring = 0.0;
  double Ry = 0.0, Rz = 0.0;
  double Lkappa = 0.0, LT1 = 0.0, LT2 = 0.0;
  double Lkappa_unit = 0.0;  // max |1 - m' - e' kappa|, the residual with L kappa = 1
  double mprime_dev = 0.0;   // max |m' - 1|
  double mu_check = 0.0;
  double curl = 0.0;
};

inline GeometryRow geometry_row(const TimeStencil& st, const PolytropicGas& gas, double u_star) {
  const Grid& g = st.grid();
  const TimeSlice& m = st.at();
  const Foliation& F = m.fol;
  const double t = st.t();
  const Mask band = band_mask(g, F.u, 0.0, u_star);
  GeometryRow r;
  r.t = t;
  r.band_cells = static_cast<std::size_t>(std::count(band.begin(), band.end(), 1));
  if (r.band_cells == 0) throw NumericalError("empty analysis band at t = " + detail::fmt(t));
  const std::size_t n = g.size();
  Plane a(n), b(n);
  for (std::size_t k = 0; k < n; ++k) a[k] = F.kappa[k] / t - 1.0, b[k] = F.T1[k] + 1.0;
  r.kappa_t = masked_max_abs(a, band);
  r.T1p = masked_max_abs(b, band);
  r.T2 = masked_max_abs(F.T2, band);
  r.chi = masked_max_abs(F.chi, band);
  r.zeta = masked_max_abs(F.zeta, band);
  r.eta = masked_max_abs(F.eta, band);
  const SignMonitors sm = sign_monitors(st);
  r.Lmu_min = masked_min(sm.Lmu, band);
  r.Trw_max = masked_max(sm.Trw, band);
  r.Lbar_r_w_max = masked_max(sm.Lbar_r_w, band);
  const SecondFrame sf = second_frame(m.p, g, t);
  r.yring = masked_max_abs(sf.yring, band);
  r.zring = masked_max_abs(sf.zring, band);
  r.Ry = masked_max_abs(commutation_residual_y(st, sf), band);
  r.Rz = masked_max_abs(commutation_residual_z(st, sf), band);
  const StructureReport sr = structure_residuals(st, gas);
  r.Lkappa = masked_max_abs(sr.Lkappa_res, band);
  r.LT1 = masked_max_abs(sr.LT1_res, band);
  r.LT2 = masked_max_abs(sr.LT2_res, band);
  for (std::size_t k = 0; k < n; ++k) a[k] = 1.0 - sr.mprime[k] - sr.eprime_kappa[k], b[k] = sr.mprime[k] - 1.0;
  r.Lkappa_unit = masked_max_abs(a, band);
  r.mprime_dev = masked_max_abs(b, band);
  r.mu_check = masked_max_abs(mu_crosscheck(st), band);
  r.curl = masked_max_abs(vorticity(m.p, g), band);
  return r;
}

struct RunResult {
  std::string status = "complete";  // complete | failed
  std::string error;
  std::string hash;
  bool reused = false;  // loaded from a completed run directory
  double epsilon = 0.0, delta = 0.0, t_star = 0.0, u_star = 0.0;
  int n1 = 0, n2 = 0;
  double x1_min = 0.0, x1_max = 0.0, dx1 = 0.0;
  double wall_seconds = 0.0;
  std::vector<GeometryRow> geometry;
  EnergyReport energy;      // background-subtracted when available
  EnergyReport energy_raw;  // empty unless subtracted
  PredicateReport predicates;
  bool has_gronwall = false;
  GronwallFit gronwall;
  double l1_error = -1.0;      // eps = 0 only: L1 distance from the exact simple wave at t*
  double x2_variation = -1.0;  // at t*

  bool complete() const { return status == "complete"; }
  bool pass() const { return complete() && predicates.all_pass(); }

  const GeometryRow* geometry_at(double t) const {
    for (const auto& r : geometry)
      if (std::abs(r.t - t) <= 1e-9) return &r;
    return nullptr;
  }
  // largest level not above u*
  double u_report() const {
    double best = -1.0;
    for (const auto& r : energy.rows)
      if (r.u <= u_star + 1e-12) best = std::max(best, r.u);
    return best;
  }
  // E + Ebar of one psi at order n, (t, u)
  double energy_of(Invariant psi, int n, double t, double u) const {
    std::array<bool, 3> use{};
    use[static_cast<int>(psi)] = true;
    return energy.total(t, u, n, use, [](const EnergyRow& r) { return r.E + r.Ebar; });
  }
  double energy_all(int n, double t, double u) const {
    return energy.total(t, u, n, {true, true, true}, [](const EnergyRow& r) { return r.E + r.Ebar; });
  }
  double flux_of(Invariant psi, int n, double t, double u) const {
    std::array<bool, 3> use{};
    use[static_cast<int>(psi)] = true;
    return energy.total(t, u, n, use, [](const EnergyRow& r) { return r.F + r.Fbar; });
  }
  double ring_energy(double t, double u) const {
    return energy.total(t, u, 0, {true, false, false}, [](const EnergyRow& r) { return r.E_ring; });
  }
  std::vector<double> energy_times() const {
    std::vector<double> ts;
    for (const auto& r : energy.rows)
      if (ts.empty() || r.t != ts.back()) ts.push_back(r.t);
    return ts;
  }
};

// Analysis times: delta r^k below t*, the extra times, and t*.
inline std::vector<double> analysis_times(const RunConfig& c) {
  std::vector<double> ts;
  for (double t = c.delta; t < c.t_star * (1.0 - 1e-9); t *= c.analysis.time_ratio) ts.push_back(t);
  for (double t : c.analysis.extra_times) ts.push_back(t);
  ts.push_back(c.t_star);
  std::sort(ts.begin(), ts.end());
  std::vector<double> out;
  for (double t : ts)
    if (out.empty() || t - out.back() > 1e-9) out.push_back(t);
  return out;
}

namespace detail {

inline std::vector<NamedPlane> snapshot_planes(const TimeSlice& s) {
  const SecondFrame sf = second_frame(s.p, s.fol.grid, s.t);
  const Foliation& F = s.fol;
  return {{"u", F.u},       {"kappa", F.kappa}, {"mu", F.mu},       {"T1", F.T1},       {"T2", F.T2},
          {"chi", F.chi},   {"zeta", F.zeta},   {"eta", F.eta},     {"yring", sf.yring}, {"zring", sf.zring}};
}

}  // namespace detail

// Evolves the data (and its eps = 0 background when energies are subtracted) in lockstep,
// tracking u, and evaluates every diagnostic on three-level stencils around each analysis
// time. The stencil at t = delta is extrapolated from the data alone.
inline RunResult simulate(const RunConfig& cfg, const std::string& snapshot_dir = {}) {
  const auto start = std::chrono::steady_clock::now();
  validate_config(cfg);
  const PolytropicGas& gas = cfg.gas;
  const Grid g = cfg.grid();
  RunResult res;
  res.hash = config_hash(cfg);
  res.epsilon = cfg.epsilon, res.delta = cfg.delta, res.t_star = cfg.t_star, res.u_star = cfg.ustar();
  res.n1 = g.n1, res.n2 = g.n2, res.x1_min = g.x1_min, res.x1_max = g.x1_max, res.dx1 = g.dx1;

  const bool with_bg = cfg.analysis.energies && cfg.analysis.background && cfg.epsilon > 0.0;
  std::vector<RarefactionData> data{cfg.data()};
  if (with_bg) data.push_back(cfg.data(0.0));
  const std::size_t nm = data.size();
  std::vector<FlowField> members;
  std::vector<Plane> u0;
  std::vector<LevelSetTracker> ls;
  const double band_hi = cfg.u_tail + 0.5;
  for (const auto& d : data) {
    members.push_back(init_perturbed_rarefaction(gas, g, d));
    u0.push_back(map_plane(g, [&](std::size_t k) {
      return d.u_init(g.x1(static_cast<int>(k % g.n1)), g.x2(static_cast<int>(k / g.n1)));
    }));
    ls.emplace_back(g, u0.back(), -0.5, band_hi, cfg.analysis.level_set_order);
  }
  res.predicates = check_data_predicates(field_planes(members[0]), g, u0[0], gas, cfg.c0, cfg.epsilon, cfg.delta,
                                         cfg.analysis.predicate_cap);

  EnergyOptions eo;
  eo.order_cap = cfg.analysis.order_cap;
  eo.u_levels = cfg.u_levels();
  std::optional<EnergyAccumulator> raw, sub;
  if (cfg.analysis.energies) {
    raw.emplace(eo, cfg.epsilon);
    if (with_bg) sub.emplace(eo, cfg.epsilon);
  }
  const std::vector<double> centers = analysis_times(cfg);
  const std::string snaps = cfg.analysis.snapshots;
  if (!snapshot_dir.empty() && snaps != "none") fs::create_directories(snapshot_dir);
  auto snapshot = [&](std::size_t a, const FlowField& f, const TimeSlice& s) {
    if (snapshot_dir.empty() || snaps == "none") return;
    if (snaps == "ends" && a != 0 && a + 1 != centers.size()) return;
    char name[32];
    std::snprintf(name, sizeof name, "t%03zu.rwl1", a);
    write_snapshot((fs::path(snapshot_dir) / name).string(), f, detail::snapshot_planes(s));
  };
  auto analyze = [&](std::size_t a, const std::vector<TimeStencil>& st) {
    res.geometry.push_back(geometry_row(st[0], gas, res.u_star));
    if (raw) raw->add(st[0]);
    if (sub) sub->add(st[0], &st[1]);
    (void)a;
  };

  // t = delta from the data
  {
    std::vector<std::array<TimeSlice, 3>> ds;
    for (std::size_t q = 0; q < nm; ++q)
      ds.push_back(data_slices(field_planes(members[q]), g, cfg.delta, u0[q], gas, 1e-3 * cfg.delta));
    std::vector<TimeStencil> st;
    for (auto& d : ds) st.push_back({{&d[0], &d[1], &d[2]}, 1});
    analyze(0, st);
    snapshot(0, members[0], ds[0][1]);
  }

  // solver stencils: {t - h, t, t + h}, one-sided {t - 2h, t - h, t} at t*
  double gap = 1e300;
  for (std::size_t a = 1; a < centers.size(); ++a) gap = std::min(gap, centers[a] - centers[a - 1]);
  const double h = std::min(g.dx1, 0.25 * gap);
  std::vector<double> times;
  std::vector<std::pair<std::size_t, int>> tag;
  for (std::size_t a = 1; a < centers.size(); ++a) {
    const bool last = a + 1 == centers.size();
    const double t0 = last ? centers[a] - 2.0 * h : centers[a] - h;
    for (int q = 0; q < 3; ++q) {
      times.push_back(q == (last ? 2 : 1) ? centers[a] : t0 + q * h);
      tag.push_back({a, q});
    }
  }
  std::vector<std::array<TimeSlice, 3>> sl(nm);
  FlowField centre_field;
  run_lockstep(
      members, cfg.solver, times,
      [&](const std::vector<FlowField>& b, const std::vector<FlowField>& f) {
        for (std::size_t q = 0; q < nm; ++q) ls[q].advance(b[q], f[q]);
      },
      [&](std::size_t idx, const std::vector<FlowField>& f) {
        const auto [a, q] = tag[idx];
        const bool last = a + 1 == centers.size();
        const int e = last ? 2 : 1;
        for (std::size_t m = 0; m < nm; ++m) sl[m][q] = make_slice(f[m], ls[m].u());
        if (q == e) centre_field = f[0];
        if (q < 2) return;
        std::vector<TimeStencil> st;
        for (auto& s : sl) st.push_back({{&s[0], &s[1], &s[2]}, e});
        analyze(a, st);
        snapshot(a, centre_field, sl[0][e]);
        if (last) {
          res.x2_variation = x2_variation(centre_field);
          if (cfg.epsilon == 0.0) {
            const SimpleWaveOracle oracle(data[0]);
            res.l1_error = l1_error(centre_field, [&](double x, double t) { return oracle.state(x, t); });
          }
        }
      });

  if (sub) {
    res.energy = sub->report();
    res.energy_raw = raw->report();
  } else if (raw) {
    res.energy = raw->report();
  }
  // refined Gronwall lemma on the measured order-1 (or order-0) energies
  const std::vector<double> ul = eo.u_levels;
  if (raw && ul.front() == 0.0 && res.energy.edge_cells == 0) {
    const int n = std::min(1, cfg.analysis.order_cap);
    GronwallInstance gi;
    gi.t = res.energy_times();
    gi.u = ul;
    for (double t : gi.t)
      for (double u : ul) {
        gi.E.push_back(res.energy.total(t, u, n, {true, true, true}, [](const EnergyRow& r) { return r.E + r.Ebar; }));
        gi.F.push_back(res.energy.total(t, u, n, {true, true, true}, [](const EnergyRow& r) { return r.F + r.Fbar; }));
      }
    try {
      res.gronwall = fit_gronwall(gi);
      res.has_gronwall = true;
    } catch (const PreconditionError& e) {
      res.gronwall.note = e.what();
    }
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// ---------------------------------------------------------------------------
// JSON

NLOHMANN_JSON_SERIALIZE_ENUM(Invariant, {{Invariant::wbar, "wbar"}, {Invariant::w, "w"}, {Invariant::psi2, "psi2"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GeometryRow, t, band_cells, kappa_t, T1p, T2, chi, zeta, eta, Lmu_min, Trw_max,
                                   Lbar_r_w_max, yring, zring, Ry, Rz, Lkappa, LT1, LT2, Lkappa_unit, mprime_dev,
                                   mu_check, curl)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EnergyRow, t, u, psi, n, E, Ebar, F, Fbar, E_ring, F_ring)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EnergyReport, epsilon, background_subtracted, rows, edge_cells, nonpositive_kappa)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Predicate, name, norm, scale, constant, pass)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PredicateReport, u_star, cap, items)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GronwallVerdict, pass, max_ratio, slack, worst_t, worst_u)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GronwallFit, A, B, C, A_hyp, rel_residual, applicable, verdict, note)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunResult, status, error, hash, epsilon, delta, t_star, u_star, n1, n2, x1_min,
                                   x1_max, dx1, wall_seconds, geometry, energy, energy_raw, predicates,
                                   has_gronwall, gronwall, l1_error, x2_variation)

inline json state_json(const PrimitiveState& s) { return {{"c", s.c}, {"v1", s.v1}, {"v2", s.v2}}; }

inline json wave_json(const WaveDescriptor& w) {
  return {{"kind", w.kind == WaveKind::shock ? "shock" : "rarefaction"},
          {"lo", w.lo},
          {"hi", w.hi},
          {"strength", w.strength},
          {"degenerate", w.degenerate()}};
}

inline json fan_json(const WaveFan& f) {
  return {{"gamma", f.gas.gamma},     {"k0", f.gas.k0},
          {"left", state_json(f.left)}, {"middle", state_json(f.middle)},
          {"right", state_json(f.right)}, {"vacuum_middle", f.vacuum_middle},
          {"wave1", wave_json(f.wave1)}, {"wave2", wave_json(f.wave2)}};
}

// {A, B, C, t: [..], u: [..], E: [[..] per t] or flat, F: same}
inline GronwallInstance gronwall_from_json(const json& j) {
  GronwallInstance g;
  try {
    g.A = j.at("A").get<double>();
    g.B = j.at("B").get<double>();
    g.C = j.at("C").get<double>();
    g.t = j.at("t").get<std::vector<double>>();
    g.u = j.at("u").get<std::vector<double>>();
    for (auto [key, out] : {std::pair{"E", &g.E}, std::pair{"F", &g.F}}) {
      const json& a = j.at(key);
      if (!a.is_array()) throw ConfigError(std::string(key) + " must be an array");
      for (const auto& row : a) {
        if (row.is_array())
          for (const auto& x : row) out->push_back(x.get<double>());
        else
          out->push_back(row.get<double>());
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed Gronwall instance: ") + e.what());
  }
  return g;
}

inline json gronwall_to_json(const GronwallInstance& g) {
  json E = json::array(), F = json::array();
  for (std::size_t i = 0; i < g.t.size(); ++i) {
    json e = json::array(), f = json::array();
    for (std::size_t j = 0; j < g.u.size(); ++j) e.push_back(g.E[g.at(i, j)]), f.push_back(g.F[g.at(i, j)]);
    E.push_back(e), F.push_back(f);
  }
  return {{"A", g.A}, {"B", g.B}, {"C", g.C}, {"t", g.t}, {"u", g.u}, {"E", E}, {"F", F}};
}

// ---------------------------------------------------------------------------
// persistence

namespace detail {

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << s;
  if (!os) throw std::runtime_error("write failed: " + p.string());
}

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::map<std::string, std::string> read_manifest(const fs::path& dir) {
  std::map<std::string, std::string> m;
  std::ifstream is(dir / "MANIFEST");
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

inline void write_manifest(const fs::path& dir, const std::string& status, const std::string& hash,
                           const std::string& error = {}) {
  std::string one_line = error;
  std::replace(one_line.begin(), one_line.end(), '\n', ' ');
  std::ostringstream os;
  os << "status=" << status << "\nhash=" << hash << "\n";
  if (!one_line.empty()) os << "error=" << one_line << "\n";
  write_text(dir / "MANIFEST", os.str());
}

}  // namespace detail

inline std::string geometry_csv(const std::vector<GeometryRow>& rows) {
  using detail::fmt;
  std::ostringstream os;
  os << "t,band_cells,kappa_over_t,T1_plus_1,T2,chi,zeta,eta,Lmu_min,Trw_max,Lbar_r_w_max,yring,zring,Ry,Rz,"
        "Lkappa_res,LT1_res,LT2_res,Lkappa_unit_res,mprime_dev,mu_check,curl\n";
  for (const auto& r : rows)
    os << fmt(r.t) << "," << r.band_cells << "," << fmt(r.kappa_t) << "," << fmt(r.T1p) << "," << fmt(r.T2) << ","
       << fmt(r.chi) << "," << fmt(r.zeta) << "," << fmt(r.eta) << "," << fmt(r.Lmu_min) << "," << fmt(r.Trw_max)
       << "," << fmt(r.Lbar_r_w_max) << "," << fmt(r.yring) << "," << fmt(r.zring) << "," << fmt(r.Ry) << ","
       << fmt(r.Rz) << "," << fmt(r.Lkappa) << "," << fmt(r.LT1) << "," << fmt(r.LT2) << "," << fmt(r.Lkappa_unit)
       << "," << fmt(r.mprime_dev) << "," << fmt(r.mu_check) << "," << fmt(r.curl) << "\n";
  return os.str();
}

// one row per (t, u, psi, n)
inline std::string energy_csv(const EnergyReport& rep) {
  using detail::fmt;
  std::ostringstream os;
  os << "t,u,psi,n,E,Ebar,F,Fbar,E_ring,F_ring\n";
  for (const auto& r : rep.rows)
    os << fmt(r.t) << "," << fmt(r.u) << "," << name(r.psi) << "," << r.n << "," << fmt(r.E) << "," << fmt(r.Ebar)
       << "," << fmt(r.F) << "," << fmt(r.Fbar) << "," << fmt(r.E_ring) << "," << fmt(r.F_ring) << "\n";
  return os.str();
}

inline void write_run_outputs(const RunResult& r, const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  detail::write_text(dir / "config.txt", canonical_text(cfg, true));
  detail::write_text(dir / "geometry.csv", geometry_csv(r.geometry));
  detail::write_text(dir / "energy.csv", energy_csv(r.energy));
  if (r.energy.background_subtracted) detail::write_text(dir / "energy_raw.csv", energy_csv(r.energy_raw));
  json ej{{"primary", r.energy}};
  if (r.energy.background_subtracted) ej["raw"] = r.energy_raw;
  detail::write_text(dir / "energy.json", ej.dump(1) + "\n");
  detail::write_text(dir / "predicates.json", json(r.predicates).dump(1) + "\n");
  json gj{{"computed", r.has_gronwall}, {"fit", r.gronwall}};
  detail::write_text(dir / "gronwall.json", gj.dump(1) + "\n");
  detail::write_text(dir / "summary.json", json(r).dump(1) + "\n");
}

// Runs cfg in `dir` unless a completed run with the same content hash is already there.
// Failures leave MANIFEST status=failed and are returned, not thrown.
inline RunResult run_or_reuse(const RunConfig& cfg, const fs::path& dir, bool force = false) {
  const std::string hash = config_hash(cfg);
  if (!force && fs::exists(dir / "MANIFEST")) {
    const auto m = detail::read_manifest(dir);
    const auto st = m.find("status"), h = m.find("hash");
    if (st != m.end() && st->second == "complete" && h != m.end() && h->second == hash) {
      try {
        RunResult r = json::parse(detail::read_text(dir / "summary.json")).get<RunResult>();
        r.reused = true;
        return r;
      } catch (const std::exception&) {
        // unreadable summary: run again
      }
    }
  }
  fs::create_directories(dir);
  detail::write_manifest(dir, "running", hash);
  RunResult r;
  try {
    r = simulate(cfg, (dir / "snapshots").string());
    write_run_outputs(r, cfg, dir);
    detail::write_manifest(dir, "complete", hash);
  } catch (const ConfigError&) {
    detail::write_manifest(dir, "failed", hash, "configuration error");
    throw;
  } catch (const std::exception& e) {
    r = RunResult{};
    r.status = "failed";
    r.error = e.what();
    r.hash = hash;
    r.epsilon = cfg.epsilon, r.delta = cfg.delta, r.t_star = cfg.t_star, r.u_star = cfg.ustar();
    r.n1 = cfg.n1, r.n2 = cfg.n2;
    detail::write_manifest(dir, "failed", hash, e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// studies

enum class StudyKind { single, convergence, epsilon_scaling, delta_robustness };

inline const char* name(StudyKind k) {
  switch (k) {
    case StudyKind::single: return "single";
    case StudyKind::convergence: return "convergence";
    case StudyKind::epsilon_scaling: return "epsilon_scaling";
    case StudyKind::delta_robustness: return "delta_robustness";
  }
  return "?";
}

struct StudySpec {
  StudyKind kind = StudyKind::single;
  std::vector<double> ladder;  // resolutions n1, epsilon values or delta values
  int workers = 1;
};

inline void validate_study(const StudySpec& s) {
  if (s.kind != StudyKind::single && s.ladder.size() < 2)
    throw ConfigError(std::string(name(s.kind)) + " study needs a ladder of at least 2 values");
  if (s.workers < 1) throw ConfigError("workers must be at least 1");
  std::set<double> seen(s.ladder.begin(), s.ladder.end());
  if (seen.size() != s.ladder.size()) throw ConfigError("ladder values must be distinct");
  if (s.kind == StudyKind::convergence)
    for (double n : s.ladder)
      if (n != std::round(n) || n < 8) throw ConfigError("convergence ladder holds resolutions n1 >= 8");
}

inline StudySpec parse_study(const std::string& text) {
  StudySpec s;
  std::istringstream is(text);
  std::string raw;
  int ln = 0;
  std::set<std::string> seen;
  while (std::getline(is, raw)) {
    ++ln;
    const auto hash = raw.find_first_of("#;");
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line != "[study]") throw ConfigError("unknown section " + line, ln);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value", ln);
    const std::string key = detail::trim(line.substr(0, eq)), val = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'", ln);
    if (key == "kind") {
      if (val == "single") s.kind = StudyKind::single;
      else if (val == "convergence") s.kind = StudyKind::convergence;
      else if (val == "epsilon_scaling") s.kind = StudyKind::epsilon_scaling;
      else if (val == "delta_robustness") s.kind = StudyKind::delta_robustness;
      else throw ConfigError("kind must be single, convergence, epsilon_scaling or delta_robustness", ln);
    } else if (key == "ladder") {
      s.ladder = detail::to_list(val, key, ln);
    } else if (key == "workers") {
      const long long w = detail::to_int(val, key, ln);
      if (w < 1 || w > 256) throw ConfigError("workers must lie in [1, 256]", ln);
      s.workers = static_cast<int>(w);
    } else {
      throw ConfigError("unknown key '" + key + "'", ln);
    }
  }
  if (!seen.count("kind")) throw ConfigError("study spec needs kind");
  validate_study(s);
  return s;
}

struct StudyMember {
  std::string label;
  double param = 0.0;
  RunConfig config;
  RunResult result;
};

// ratio of a quantity between two members, with an acceptance window when one applies
struct Metric {
  std::string name;
  std::string members;
  double a = 0.0, b = 0.0, ratio = 0.0;
  bool windowed = false;
  double lo = 0.0, hi = 0.0;
  bool pass = true;
};

struct SlopeFit {
  std::string name;
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
  int points = 0;
  bool windowed = false;
  double lo = 0.0, hi = 0.0;
  bool pass = true;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Metric, name, members, a, b, ratio, windowed, lo, hi, pass)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SlopeFit, name, slope, intercept, r2, points, windowed, lo, hi, pass)

struct StudyReport {
  StudyKind kind = StudyKind::single;
  std::vector<StudyMember> members;
  std::vector<Metric> metrics;
  std::vector<SlopeFit> fits;

  bool pass() const {
    if (members.empty()) return false;
    for (const auto& m : members)
      if (!m.result.pass()) return false;
    for (const auto& m : metrics)
      if (!m.pass) return false;
    for (const auto& f : fits)
      if (!f.pass) return false;
    return true;
  }
};

inline json study_json(const StudyReport& r) {
  json mem = json::array();
  for (const auto& m : r.members) {
    json j{{"label", m.label},
           {"param", m.param},
           {"status", m.result.status},
           {"reused", m.result.reused},
           {"hash", m.result.hash},
           {"wall_seconds", m.result.wall_seconds},
           {"predicates_pass", m.result.predicates.all_pass()}};
    if (!m.result.error.empty()) j["error"] = m.result.error;
    mem.push_back(j);
  }
  return {{"kind", name(r.kind)}, {"pass", r.pass()}, {"members", mem}, {"metrics", r.metrics}, {"fits", r.fits}};
}

// least-squares line y = slope x + intercept
inline SlopeFit fit_line(const std::string& nm, const std::vector<double>& x, const std::vector<double>& y) {
  SlopeFit f;
  f.name = nm;
  f.points = static_cast<int>(x.size());
  if (x.size() < 2) return f;
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) sx += x[k], sy += y[k];
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
    syy += (y[k] - my) * (y[k] - my);
  }
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

// log-log slope of E_1(t, u*) per psi over [4 delta, t*]
inline std::vector<SlopeFit> t_slope_fits(const RunResult& r, const std::string& label) {
  std::vector<SlopeFit> out;
  if (!r.complete() || r.energy.rows.empty()) return out;
  const double u = r.u_report();
  for (Invariant psi : {Invariant::wbar, Invariant::w, Invariant::psi2}) {
    std::vector<double> x, y;
    for (double t : r.energy_times()) {
      if (t < 4.0 * r.delta * (1.0 - 1e-12)) continue;
      const double e = r.energy_of(psi, 1, t, u);
      if (e > 0.0) x.push_back(std::log(t)), y.push_back(std::log(e));
    }
    SlopeFit f = fit_line(label + " E1(" + name(psi) + ") vs t", x, y);
    f.windowed = true, f.lo = 1.7, f.hi = 2.3;
    f.pass = f.points >= 2 && f.slope >= f.lo && f.slope <= f.hi;
    out.push_back(f);
  }
  return out;
}

namespace detail {

inline Metric ratio_metric(const std::string& nm, const std::string& who, double a, double b,
                           std::optional<std::pair<double, double>> window) {
  Metric m;
  m.name = nm, m.members = who, m.a = a, m.b = b;
  m.ratio = b != 0.0 ? a / b : std::numeric_limits<double>::infinity();
  if (window) {
    m.windowed = true;
    m.lo = window->first, m.hi = window->second;
    m.pass = m.ratio >= m.lo && m.ratio <= m.hi;
  }
  return m;
}

// max over analysis times in [t_lo, t*] of one geometry column
template <class Col>
double geo_max(const RunResult& r, double t_lo, Col col) {
  double m = -1e300;
  for (const auto& g : r.geometry)
    if (g.t >= t_lo - 1e-12) m = std::max(m, col(g));
  return m;
}

inline std::string label_for(StudyKind k, double p) {
  char buf[64];
  switch (k) {
    case StudyKind::convergence: std::snprintf(buf, sizeof buf, "n1_%d", static_cast<int>(p)); break;
    case StudyKind::epsilon_scaling: std::snprintf(buf, sizeof buf, "eps_%g", p); break;
    case StudyKind::delta_robustness: std::snprintf(buf, sizeof buf, "delta_%g", p); break;
    case StudyKind::single: std::snprintf(buf, sizeof buf, "run"); break;
  }
  return buf;
}

}  // namespace detail

inline std::vector<StudyMember> study_members(const StudySpec& spec, const RunConfig& base) {
  validate_study(spec);
  std::vector<StudyMember> out;
  if (spec.kind == StudyKind::single) {
    out.push_back({"run", 0.0, base, {}});
    return out;
  }
  // epsilon members share the grid of the largest epsilon
  std::optional<std::pair<double, double>> shared;
  if (spec.kind == StudyKind::epsilon_scaling && !base.x1_min) {
    RunConfig c = base;
    c.epsilon = *std::max_element(spec.ladder.begin(), spec.ladder.end());
    shared = c.domain();
  }
  for (double p : spec.ladder) {
    RunConfig c = base;
    switch (spec.kind) {
      case StudyKind::convergence:
        c.n1 = static_cast<int>(p);
        c.n2 = std::max(8, static_cast<int>(std::lround(static_cast<double>(base.n2) * p / base.n1)));
        break;
      case StudyKind::epsilon_scaling:
        c.epsilon = p;
        if (shared) c.x1_min = shared->first, c.x1_max = shared->second;
        break;
      case StudyKind::delta_robustness: c.delta = p; break;
      case StudyKind::single: break;
    }
    try {
      validate_config(c);
    } catch (const ConfigError& e) {
      throw ConfigError("study member " + detail::label_for(spec.kind, p) + ": " + e.what());
    }
    out.push_back({detail::label_for(spec.kind, p), p, c, {}});
  }
  return out;
}

// Cross-member metrics. Ladder neighbours are compared; r is the parameter ratio.
inline void study_metrics(StudyReport& rep) {
  auto& M = rep.members;
  for (const auto& m : M) {
    for (auto f : t_slope_fits(m.result, m.label))
      if (m.result.epsilon > 0.0) rep.fits.push_back(f);
    const auto& pr = m.result.predicates;
    double worst = 0.0;
    for (const auto& p : pr.items) worst = std::max(worst, p.constant);
    if (m.result.complete()) {
      Metric pm = detail::ratio_metric(m.label + " data predicate constant (max)", m.label, worst, pr.cap, std::nullopt);
      pm.windowed = true, pm.lo = 0.0, pm.hi = 1.0, pm.pass = pr.all_pass();
      rep.metrics.push_back(pm);
    }
  }
  for (std::size_t q = 0; q + 1 < M.size(); ++q) {
    const RunResult& A = M[q].result;
    const RunResult& B = M[q + 1].result;
    if (!A.complete() || !B.complete()) continue;
    if (rep.kind == StudyKind::convergence) {
      // coarse first
      const bool fwd = M[q].param < M[q + 1].param;
      const RunResult& c = fwd ? A : B;
      const RunResult& f = fwd ? B : A;
      const std::string who = (fwd ? M[q].label : M[q + 1].label) + " / " + (fwd ? M[q + 1].label : M[q].label);
      const double r = static_cast<double>(f.n1) / c.n1;
      if (c.l1_error > 0.0 && f.l1_error > 0.0)
        rep.metrics.push_back(detail::ratio_metric("L1 fan error at t*", who, c.l1_error, f.l1_error,
                                                   std::pair{0.8 * r, 1.2 * r}));
      const GeometryRow* gc = c.geometry_at(c.t_star);
      const GeometryRow* gf = f.geometry_at(f.t_star);
      if (!gc || !gf) continue;
      for (auto [nm, a, b] : {std::tuple{"R_y at t*", gc->Ry, gf->Ry}, std::tuple{"R_z at t*", gc->Rz, gf->Rz},
                              std::tuple{"L kappa - m' - e' kappa at t*", gc->Lkappa, gf->Lkappa},
                              std::tuple{"L That1 residual at t*", gc->LT1, gf->LT1},
                              std::tuple{"L That2 residual at t*", gc->LT2, gf->LT2}}) {
        Metric m = detail::ratio_metric(nm, who, a, b, std::pair{0.75 * r, 1e300});
        // both at round-off: nothing left to converge
        if (a <= 1e-12 && b <= 1e-12) m.pass = true;
        rep.metrics.push_back(m);
      }
      rep.metrics.push_back(detail::ratio_metric(
          "max |kappa/t - 1| over [2 delta, t*]", who,
          detail::geo_max(c, 2 * c.delta, [](const GeometryRow& g) { return g.kappa_t; }),
          detail::geo_max(f, 2 * f.delta, [](const GeometryRow& g) { return g.kappa_t; }), std::nullopt));
    } else if (rep.kind == StudyKind::epsilon_scaling) {
      const bool fwd = A.epsilon > B.epsilon;
      const RunResult& hi = fwd ? A : B;
      const RunResult& lo = fwd ? B : A;
      const std::string who = (fwd ? M[q].label : M[q + 1].label) + " / " + (fwd ? M[q + 1].label : M[q].label);
      const double r = hi.epsilon / lo.epsilon;
      const std::pair<double, double> sq{0.75 * r * r, 1.25 * r * r}, lin{0.8 * r, 1.2 * r};
      auto gmax = [](const RunResult& x, auto col) { return detail::geo_max(x, 2 * x.delta, col); };
      rep.metrics.push_back(detail::ratio_metric("max |That1 + 1|", who,
                                                 gmax(hi, [](const GeometryRow& g) { return g.T1p; }),
                                                 gmax(lo, [](const GeometryRow& g) { return g.T1p; }), sq));
      rep.metrics.push_back(detail::ratio_metric("max |That2|", who,
                                                 gmax(hi, [](const GeometryRow& g) { return g.T2; }),
                                                 gmax(lo, [](const GeometryRow& g) { return g.T2; }), lin));
      for (double t : {0.25, 0.5, hi.t_star}) {
        const GeometryRow* a = hi.geometry_at(t);
        const GeometryRow* b = lo.geometry_at(t);
        if (a && b)
          rep.metrics.push_back(
              detail::ratio_metric("max |yring| at t = " + detail::fmt(t), who, a->yring, b->yring, lin));
      }
      if (!hi.energy.rows.empty() && !lo.energy.rows.empty()) {
        const double t = hi.t_star, u = hi.u_report();
        rep.metrics.push_back(detail::ratio_metric("E0(w)", who, hi.energy_of(Invariant::w, 0, t, u),
                                                   lo.energy_of(Invariant::w, 0, t, u), sq));
        rep.metrics.push_back(detail::ratio_metric("E0(psi2)", who, hi.energy_of(Invariant::psi2, 0, t, u),
                                                   lo.energy_of(Invariant::psi2, 0, t, u), sq));
        rep.metrics.push_back(
            detail::ratio_metric("Ering0(wbar)", who, hi.ring_energy(t, u), lo.ring_energy(t, u), sq));
        if (hi.energy.rows.back().n >= 1)
          rep.metrics.push_back(
              detail::ratio_metric("E1", who, hi.energy_all(1, t, u), lo.energy_all(1, t, u), sq));
      }
    } else if (rep.kind == StudyKind::delta_robustness) {
      const std::string who = M[q].label + " / " + M[q + 1].label;
      if (!A.energy.rows.empty() && !B.energy.rows.empty() && A.epsilon > 0.0 && B.epsilon > 0.0) {
        const double ea = A.energy_all(std::min(1, A.energy.rows.back().n), A.t_star, A.u_report());
        const double eb = B.energy_all(std::min(1, B.energy.rows.back().n), B.t_star, B.u_report());
        rep.metrics.push_back(detail::ratio_metric("E1(t*, u*) / eps^2", who, ea / (A.epsilon * A.epsilon),
                                                   eb / (B.epsilon * B.epsilon), std::nullopt));
      }
      if (A.has_gronwall && B.has_gronwall)
        rep.metrics.push_back(
            detail::ratio_metric("Gronwall A (hypothesis)", who, A.gronwall.A_hyp, B.gronwall.A_hyp, std::nullopt));
      rep.metrics.push_back(detail::ratio_metric(
          "max |kappa/t - 1|", who, detail::geo_max(A, 2 * A.delta, [](const GeometryRow& g) { return g.kappa_t; }),
          detail::geo_max(B, 2 * B.delta, [](const GeometryRow& g) { return g.kappa_t; }), std::nullopt));
    }
  }
  // log-log fits across the whole ladder
  std::vector<const RunResult*> ok;
  for (const auto& m : M)
    if (m.result.complete()) ok.push_back(&m.result);
  if (ok.size() < 2) return;
  if (rep.kind == StudyKind::convergence) {
    for (auto [nm, col] : {std::pair<const char*, double GeometryRow::*>{"R_y", &GeometryRow::Ry},
                           {"R_z", &GeometryRow::Rz},
                           {"L kappa residual", &GeometryRow::Lkappa}}) {
      std::vector<double> x, y;
      for (const RunResult* r : ok)
        if (const GeometryRow* g = r->geometry_at(r->t_star); g && g->*col > 0.0)
          x.push_back(std::log(r->dx1)), y.push_back(std::log(g->*col));
      rep.fits.push_back(fit_line(std::string(nm) + " at t* vs dx1", x, y));
    }
    std::vector<double> x, y;
    for (const RunResult* r : ok)
      if (r->l1_error > 0.0) x.push_back(std::log(r->dx1)), y.push_back(std::log(r->l1_error));
    if (x.size() >= 2) rep.fits.push_back(fit_line("L1 fan error vs dx1", x, y));
  } else if (rep.kind == StudyKind::epsilon_scaling) {
    auto eps_fit = [&](const std::string& nm, auto value) {
      std::vector<double> x, y;
      for (const RunResult* r : ok)
        if (const double v = value(*r); v > 0.0 && r->epsilon > 0.0)
          x.push_back(std::log(r->epsilon)), y.push_back(std::log(v));
      if (x.size() >= 2) rep.fits.push_back(fit_line(nm + " vs eps", x, y));
    };
    eps_fit("max |That1 + 1|", [](const RunResult& r) {
      return detail::geo_max(r, 2 * r.delta, [](const GeometryRow& g) { return g.T1p; });
    });
    eps_fit("max |That2|", [](const RunResult& r) {
      return detail::geo_max(r, 2 * r.delta, [](const GeometryRow& g) { return g.T2; });
    });
    eps_fit("E0(w)", [](const RunResult& r) {
      return r.energy.rows.empty() ? 0.0 : r.energy_of(Invariant::w, 0, r.t_star, r.u_report());
    });
    eps_fit("E1", [](const RunResult& r) {
      return r.energy.rows.empty() || r.energy.rows.back().n < 1 ? 0.0 : r.energy_all(1, r.t_star, r.u_report());
    });
  }
}

// Runs every member (at most spec.workers at a time, each in its own directory), then
// computes the cross-member metrics. A failed member is recorded and the study continues.
inline StudyReport run_study(const StudySpec& spec, const RunConfig& base, const fs::path& dir, bool force = false,
                             std::ostream* log = nullptr) {
  StudyReport rep;
  rep.kind = spec.kind;
  rep.members = study_members(spec, base);
  const int workers = std::min<int>(spec.workers, static_cast<int>(rep.members.size()));
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto work = [&] {
#ifdef _OPENMP
    const int per = base.threads > 0 ? base.threads : std::max(1, omp_get_num_procs() / workers);
    omp_set_num_threads(per);
#endif
    for (std::size_t q; (q = next++) < rep.members.size();) {
      StudyMember& m = rep.members[q];
      if (log) {
        std::lock_guard lk(log_mu);
        *log << "[" << m.label << "] start\n" << std::flush;
      }
      try {
        m.result = run_or_reuse(m.config, dir / m.label, force);
      } catch (const std::exception& e) {
        m.result.status = "failed";
        m.result.error = e.what();
      }
      if (log) {
        std::lock_guard lk(log_mu);
        *log << "[" << m.label << "] " << m.result.status << (m.result.reused ? " (reused)" : "") << " "
             << detail::fmt(m.result.wall_seconds) << " s" << (m.result.error.empty() ? "" : ": " + m.result.error)
             << "\n"
             << std::flush;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  study_metrics(rep);
  return rep;
}

inline std::string metrics_csv(const StudyReport& r) {
  using detail::fmt;
  std::ostringstream os;
  os << "name,members,a,b,ratio,windowed,lo,hi,pass\n";
  for (const auto& m : r.metrics)
    os << '"' << m.name << "\",\"" << m.members << "\"," << fmt(m.a) << "," << fmt(m.b) << "," << fmt(m.ratio) << ","
       << m.windowed << "," << fmt(m.lo) << "," << fmt(m.hi) << "," << m.pass << "\n";
  return os.str();
}

inline std::string fits_text(const StudyReport& r) {
  using detail::fmt;
  std::ostringstream os;
  os << "# least-squares slope fits: name | slope | intercept | R^2 | points | window | pass\n";
  for (const auto& f : r.fits) {
    os << f.name << " | " << fmt(f.slope) << " | " << fmt(f.intercept) << " | " << fmt(f.r2) << " | " << f.points
       << " | ";
    if (f.windowed) os << "[" << fmt(f.lo) << ", " << fmt(f.hi) << "]";
    else os << "-";
    os << " | " << (f.pass ? "pass" : "FAIL") << "\n";
  }
  return os.str();
}

inline void write_study_outputs(const StudyReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  detail::write_text(dir / "study.json", study_json(r).dump(1) + "\n");
  detail::write_text(dir / "metrics.csv", metrics_csv(r));
  std::ostringstream os;
  os << "label,param,status,wall_seconds,eps,n1,n2,delta,predicates_pass,l1_error,x2_variation\n";
  for (const auto& m : r.members)
    os << m.label << "," << detail::fmt(m.param) << "," << m.result.status << "," << detail::fmt(m.result.wall_seconds)
       << "," << detail::fmt(m.config.epsilon) << "," << m.config.n1 << "," << m.config.n2 << ","
       << detail::fmt(m.config.delta) << "," << m.result.predicates.all_pass() << ","
       << detail::fmt(m.result.l1_error) << "," << detail::fmt(m.result.x2_variation) << "\n";
  detail::write_text(dir / "members.csv", os.str());
}

// ---------------------------------------------------------------------------
// plot data

namespace detail {

inline void write_columns(const fs::path& p, const std::string& header, const std::vector<std::pair<double, double>>& xy,
                          std::vector<std::string>& written) {
  std::ostringstream os;
  os << "# " << header << "\n";
  for (auto [x, y] : xy) os << fmt(x) << " " << fmt(y) << "\n";
  write_text(p, os.str());
  written.push_back(p.string());
}

}  // namespace detail

// Two-column data files for every completed member and the study-level fits.
// An empty report writes nothing.
inline std::vector<std::string> emit_plots(const StudyReport& rep, const fs::path& dir) {
  std::vector<std::string> out;
  bool any = false;
  for (const auto& m : rep.members) any = any || m.result.complete();
  if (!any) return out;
  fs::create_directories(dir);
  for (const auto& m : rep.members) {
    const RunResult& r = m.result;
    if (!r.complete()) continue;
    const std::string L = m.label;
    using Pts = std::vector<std::pair<double, double>>;
    auto geo = [&](const char* file, const char* header, auto col) {
      Pts p;
      for (const auto& g : r.geometry) p.push_back({g.t, col(g)});
      detail::write_columns(dir / (L + "_" + file + ".dat"), header, p, out);
    };
    geo("kappa", "t  max|kappa/t - 1|", [](const GeometryRow& g) { return g.kappa_t; });
    geo("sign_Lmu", "t  min L(mu)", [](const GeometryRow& g) { return g.Lmu_min; });
    geo("sign_Trw", "t  max T_ring(wbar)", [](const GeometryRow& g) { return g.Trw_max; });
    geo("sign_Lbar", "t  max Lbar_ring(wbar)", [](const GeometryRow& g) { return g.Lbar_r_w_max; });
    geo("yring", "t  max|yring|", [](const GeometryRow& g) { return g.yring; });
    if (r.energy.rows.empty()) continue;
    const double u = r.u_report();
    const int n = std::min(1, r.energy.rows.back().n);
    std::vector<double> levels;
    for (const auto& row : r.energy.rows)
      if (row.t == r.t_star && std::find(levels.begin(), levels.end(), row.u) == levels.end()) levels.push_back(row.u);
    for (Invariant psi : {Invariant::wbar, Invariant::w, Invariant::psi2}) {
      Pts e, f;
      for (double t : r.energy_times())
        if (const double v = r.energy_of(psi, n, t, u); v > 0.0) e.push_back({std::log(t), std::log(v)});
      for (double uu : levels) f.push_back({uu, r.flux_of(psi, n, r.t_star, uu)});
      const std::string tag = std::string(name(psi)) + "_n" + std::to_string(n);
      detail::write_columns(dir / (L + "_energy_" + tag + ".dat"), "log t  log E_n(t, u*)", e, out);
      detail::write_columns(dir / (L + "_flux_" + tag + ".dat"), "u  F_n(t*, u)", f, out);
    }
  }
  if (rep.kind == StudyKind::convergence) {
    for (auto [nm, col] : {std::pair<const char*, double GeometryRow::*>{"Ry", &GeometryRow::Ry},
                           {"Rz", &GeometryRow::Rz},
                           {"Lkappa", &GeometryRow::Lkappa}}) {
      std::vector<std::pair<double, double>> p;
      for (const auto& m : rep.members)
        if (m.result.complete())
          if (const GeometryRow* g = m.result.geometry_at(m.result.t_star)) p.push_back({m.result.dx1, g->*col});
      detail::write_columns(dir / (std::string("conv_") + nm + ".dat"), "dx1  residual at t*", p, out);
    }
  }
  if (rep.kind == StudyKind::epsilon_scaling) {
    std::vector<std::pair<double, double>> p;
    for (const auto& m : rep.members)
      if (m.result.complete() && !m.result.energy.rows.empty() && m.result.energy.rows.back().n >= 1)
        if (const double v = m.result.energy_all(1, m.result.t_star, m.result.u_report()); v > 0.0)
          p.push_back({std::log(m.result.epsilon), std::log(v)});
    detail::write_columns(dir / "eps_E1.dat", "log eps  log E1(t*, u*)", p, out);
  }
  std::vector<SlopeFit> fits = rep.fits;
  if (rep.kind == StudyKind::single && fits.empty())
    for (const auto& m : rep.members) {
      auto f = t_slope_fits(m.result, m.label);
      fits.insert(fits.end(), f.begin(), f.end());
    }
  if (!fits.empty()) {
    StudyReport tmp;
    tmp.fits = fits;
    detail::write_text(dir / "fits.txt", fits_text(tmp));
    out.push_back((dir / "fits.txt").string());
  }
  return out;
}

}  // namespace rarewave
