#pragma once

// First-order finite-volume solver for 2D isentropic Euler on the periodic tube.
// Conserved variables (rho, rho v1, rho v2); x1 ghost cells frozen at the data,
// x2 periodic.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rarewave/errors.hpp"
#include "rarewave/gas_model.hpp"
#include "rarewave/grid.hpp"
#include "rarewave/initial_data.hpp"

namespace rarewave {

struct Conserved {
  double rho = 0.0, m1 = 0.0, m2 = 0.0;
};

struct FlowField {
  PolytropicGas gas;
  Grid grid;
  double time = 0.0;
  Plane rho, m1, m2;
  // one frozen ghost cell per row on each x1 side
  std::vector<Conserved> ghost_lo, ghost_hi;
  // mass that entered through the x1 boundaries since the data was posed
  double boundary_inflow = 0.0;

  FlowField() = default;
  FlowField(const PolytropicGas& g, const Grid& gr, double t)
      : gas(g), grid(gr), time(t), rho(gr.size()), m1(gr.size()), m2(gr.size()),
        ghost_lo(gr.n2), ghost_hi(gr.n2) {}

  PrimitiveState state(std::size_t k) const {
    const double r = rho[k];
    if (r == 0.0) return {0.0, 0.0, 0.0};
    return {gas.sound_speed_unchecked(r), m1[k] / r, m2[k] / r};
  }
  PrimitiveState state(int i, int j) const { return state(grid.at(i, j)); }

  void set(std::size_t k, const PrimitiveState& s) {
    const double r = gas.density(s.c);
    rho[k] = r;
    m1[k] = r * s.v1;
    m2[k] = r * s.v2;
  }

  Conserved conserved(const PrimitiveState& s) const {
    const double r = gas.density(s.c);
    return {r, r * s.v1, r * s.v2};
  }
};

// Primitive and invariant planes of a field, computed once and shared by diagnostics.
struct FieldPlanes {
  Plane c, v1, v2, wbar, w, psi2;
};

inline FieldPlanes field_planes(const FlowField& f) {
  const std::size_t n = f.grid.size();
  FieldPlanes p;
  p.c.resize(n), p.v1.resize(n), p.v2.resize(n), p.wbar.resize(n), p.w.resize(n), p.psi2.resize(n);
  const double a = 1.0 / (f.gas.gamma - 1.0);
#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < n; ++k) {
    const PrimitiveState s = f.state(k);
    p.c[k] = s.c, p.v1[k] = s.v1, p.v2[k] = s.v2;
    p.wbar[k] = a * s.c + 0.5 * s.v1;
    p.w[k] = a * s.c - 0.5 * s.v1;
    p.psi2[k] = -s.v2;
  }
  return p;
}

enum class Invariant { wbar, w, psi2 };

inline const Plane& select(const FieldPlanes& p, Invariant which) {
  switch (which) {
    case Invariant::wbar: return p.wbar;
    case Invariant::w: return p.w;
    default: return p.psi2;
  }
}

inline const char* name(Invariant which) {
  switch (which) {
    case Invariant::wbar: return "wbar";
    case Invariant::w: return "w";
    default: return "psi2";
  }
}

// ---------------------------------------------------------------------------
// initial data

inline FlowField init_perturbed_rarefaction(const PolytropicGas& gas, const Grid& grid,
                                            const RarefactionData& data) {
  gas.validate();
  const double delta = data.delta();
  if (data.spec().epsilon > 0.05)
    std::cerr << "warning: epsilon = " << data.spec().epsilon << " is not small\n";
  if (data.min_sound_speed() <= 0.0)
    throw ConfigError("fan reaches vacuum inside the data: reduce u_tail or glue_tail");
  // both ramps must lie strictly inside the grid
  double hmin = 1e300, hmax = -1e300;
  for (int j = 0; j < grid.n2; ++j) {
    hmin = std::min(hmin, data.head(grid.x2(j)));
    hmax = std::max(hmax, data.head(grid.x2(j)));
  }
  const FanShape& sh = data.shape();
  const double x_right = delta * (hmax + sh.glue_head), x_left = delta * (hmin - sh.u_tail - sh.glue_tail);
  if (x_right >= grid.x1_max - grid.dx1 || x_left <= grid.x1_min + grid.dx1)
    throw ConfigError("fan width exceeds the grid at t = delta");

  FlowField f(gas, grid, delta);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < grid.n2; ++j) {
    const double x2 = grid.x2(j);
    for (int i = 0; i < grid.n1; ++i) f.set(grid.at(i, j), data.state(grid.x1(i), x2));
    f.ghost_lo[j] = f.conserved(data.state(grid.x1(-1), x2));
    f.ghost_hi[j] = f.conserved(data.state(grid.x1(grid.n1), x2));
  }
  return f;
}

// ---------------------------------------------------------------------------
// solver

enum class FluxKind { rusanov, hll };
enum class Integrator { euler, ssprk2 };

struct SolverConfig {
  double cfl = 0.45;
  FluxKind flux = FluxKind::rusanov;
  Integrator integrator = Integrator::ssprk2;
  std::vector<double> snapshot_times;

  void validate() const {
    if (!(cfl > 0.0 && cfl <= 0.9)) throw ConfigError("cfl must lie in (0, 0.9]");
  }
};

inline double max_signal_speed(const FlowField& f) {
  double m = 0.0;
  const std::size_t n = f.grid.size();
  for (std::size_t k = 0; k < n; ++k) {
    const PrimitiveState s = f.state(k);
    m = std::max(m, std::hypot(s.v1, s.v2) + s.c);
  }
  return m;
}

inline double stable_dt(const FlowField& f, const SolverConfig& cfg) {
  const double s = max_signal_speed(f);
  return cfg.cfl * std::min(f.grid.dx1, f.grid.dx2) / std::max(s, 1e-300);
}

namespace detail {

struct Prim {
  double r, u, v, p, c;  // u normal, v tangential velocity
};

inline Prim prim(const PolytropicGas& gas, double r, double mn, double mt) {
  if (!(r > 0.0)) return {r, 0.0, 0.0, 0.0, 0.0};
  const double p = gas.gamma == 2.0 ? gas.k0 * r * r : gas.k0 * std::pow(r, gas.gamma);
  return {r, mn / r, mt / r, p, std::sqrt(gas.gamma * p / r)};
}

// flux of (rho, m_n, m_t) through a face with normal along the first velocity slot
inline void face_flux(FluxKind kind, const Prim& a, const Prim& b, double out[3]) {
  const double fa[3] = {a.r * a.u, a.r * a.u * a.u + a.p, a.r * a.u * a.v};
  const double fb[3] = {b.r * b.u, b.r * b.u * b.u + b.p, b.r * b.u * b.v};
  const double ua[3] = {a.r, a.r * a.u, a.r * a.v};
  const double ub[3] = {b.r, b.r * b.u, b.r * b.v};
  if (kind == FluxKind::rusanov) {
    // wave-speed bound sqrt(u^2 + (c/10)^2) + c >= |u| + c, smooth across u = 0
    const double s = std::max(std::hypot(a.u, 0.1 * a.c) + a.c, std::hypot(b.u, 0.1 * b.c) + b.c);
    for (int q = 0; q < 3; ++q) out[q] = 0.5 * (fa[q] + fb[q]) - 0.5 * s * (ub[q] - ua[q]);
    return;
  }
  const double sl = std::min(a.u - a.c, b.u - b.c);
  const double sr = std::max(a.u + a.c, b.u + b.c);
  if (sl >= 0.0) {
    for (int q = 0; q < 3; ++q) out[q] = fa[q];
  } else if (sr <= 0.0) {
    for (int q = 0; q < 3; ++q) out[q] = fb[q];
  } else {
    for (int q = 0; q < 3; ++q)
      out[q] = (sr * fa[q] - sl * fb[q] + sl * sr * (ub[q] - ua[q])) / (sr - sl);
  }
}

struct Workspace {
  Plane dr, dm1, dm2;  // time derivatives
  Plane g0, g1, g2;    // x2 face fluxes, face j sits between rows j-1 and j
  std::vector<Prim> pr;
  std::vector<double> row_inflow;
  void resize(const Grid& g) {
    const std::size_t n = g.size();
    dr.resize(n), dm1.resize(n), dm2.resize(n);
    g0.resize(n), g1.resize(n), g2.resize(n);
    pr.resize(n);
    row_inflow.resize(g.n2);
  }
};

// d/dt of the conserved planes; returns the mass inflow rate through the x1 boundaries
inline double rhs(const FlowField& f, FluxKind kind, Workspace& ws) {
  const Grid& g = f.grid;
  const int n1 = g.n1, n2 = g.n2;
  ws.resize(g);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n2; ++j)
    for (int i = 0; i < n1; ++i) {
      const std::size_t k = g.at(i, j);
      ws.pr[k] = prim(f.gas, f.rho[k], f.m1[k], f.m2[k]);
    }

  // x1 sweep, row by row
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n2; ++j) {
    const Prim glo = prim(f.gas, f.ghost_lo[j].rho, f.ghost_lo[j].m1, f.ghost_lo[j].m2);
    const Prim ghi = prim(f.gas, f.ghost_hi[j].rho, f.ghost_hi[j].m1, f.ghost_hi[j].m2);
    const std::size_t base = g.at(0, j);
    double F[3];
    face_flux(kind, glo, ws.pr[base], F);
    ws.row_inflow[j] = F[0];
    double prev[3] = {F[0], F[1], F[2]};
    for (int i = 0; i < n1; ++i) {
      const std::size_t k = base + i;
      const Prim& right = (i + 1 < n1) ? ws.pr[k + 1] : ghi;
      face_flux(kind, ws.pr[k], right, F);
      ws.dr[k] = (prev[0] - F[0]) / g.dx1;
      ws.dm1[k] = (prev[1] - F[1]) / g.dx1;
      ws.dm2[k] = (prev[2] - F[2]) / g.dx1;
      prev[0] = F[0], prev[1] = F[1], prev[2] = F[2];
    }
    ws.row_inflow[j] -= prev[0];
  }

  // x2 faces; normal velocity is v2, so the momentum slots swap
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n2; ++j) {
    const int jm = g.wrap2(j - 1);
    for (int i = 0; i < n1; ++i) {
      const Prim& a0 = ws.pr[g.at(i, jm)];
      const Prim& b0 = ws.pr[g.at(i, j)];
      const Prim a{a0.r, a0.v, a0.u, a0.p, a0.c};
      const Prim b{b0.r, b0.v, b0.u, b0.p, b0.c};
      double F[3];
      face_flux(kind, a, b, F);
      const std::size_t k = g.at(i, j);
      ws.g0[k] = F[0], ws.g2[k] = F[1], ws.g1[k] = F[2];
    }
  }
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n2; ++j) {
    const int jp = g.wrap2(j + 1);
    for (int i = 0; i < n1; ++i) {
      const std::size_t k = g.at(i, j), kp = g.at(i, jp);
      ws.dr[k] += (ws.g0[k] - ws.g0[kp]) / g.dx2;
      ws.dm1[k] += (ws.g1[k] - ws.g1[kp]) / g.dx2;
      ws.dm2[k] += (ws.g2[k] - ws.g2[kp]) / g.dx2;
    }
  }
  CompensatedSum s;
  for (int j = 0; j < n2; ++j) s.add(ws.row_inflow[j]);
  return s.value() * g.dx2;
}

inline void check_density(const FlowField& f) {
  const std::size_t n = f.grid.size();
  for (std::size_t k = 0; k < n; ++k) {
    if (!(f.rho[k] > 0.0)) {
      const int i = static_cast<int>(k % f.grid.n1), j = static_cast<int>(k / f.grid.n1);
      std::ostringstream os;
      os << "non-positive density " << f.rho[k] << " at cell (" << i << "," << j
         << "), x = (" << f.grid.x1(i) << "," << f.grid.x2(j) << "), t = " << f.time;
      throw NumericalError(os.str());
    }
  }
}

}  // namespace detail

// Advance in place by dt.
inline void step_inplace(FlowField& f, double dt, const SolverConfig& cfg,
                         detail::Workspace& ws) {
  if (dt == 0.0) return;
  const std::size_t n = f.grid.size();
  if (cfg.integrator == Integrator::euler) {
    const double in = detail::rhs(f, cfg.flux, ws);
    for (std::size_t k = 0; k < n; ++k) {
      f.rho[k] += dt * ws.dr[k];
      f.m1[k] += dt * ws.dm1[k];
      f.m2[k] += dt * ws.dm2[k];
    }
    f.boundary_inflow += dt * in;
    f.time += dt;
    detail::check_density(f);
    return;
  }
  FlowField stage = f;
  const double in1 = detail::rhs(f, cfg.flux, ws);
#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < n; ++k) {
    stage.rho[k] += dt * ws.dr[k];
    stage.m1[k] += dt * ws.dm1[k];
    stage.m2[k] += dt * ws.dm2[k];
  }
  detail::check_density(stage);
  const double in2 = detail::rhs(stage, cfg.flux, ws);
#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < n; ++k) {
    f.rho[k] = 0.5 * f.rho[k] + 0.5 * (stage.rho[k] + dt * ws.dr[k]);
    f.m1[k] = 0.5 * f.m1[k] + 0.5 * (stage.m1[k] + dt * ws.dm1[k]);
    f.m2[k] = 0.5 * f.m2[k] + 0.5 * (stage.m2[k] + dt * ws.dm2[k]);
  }
  f.boundary_inflow += 0.5 * dt * (in1 + in2);
  f.time += dt;
  detail::check_density(f);
}

inline FlowField step(const FlowField& f, double dt, const SolverConfig& cfg) {
  FlowField out = f;
  detail::Workspace ws;
  step_inplace(out, dt, cfg, ws);
  return out;
}

// Advance several fields in lockstep with a common dt (the most restrictive member).
// on_step(before, after) fires after every step, on_hit(index) when target times[index] is reached.
using StepHook = std::function<void(const std::vector<FlowField>&, const std::vector<FlowField>&)>;
using HitHook = std::function<void(std::size_t, const std::vector<FlowField>&)>;

inline void run_lockstep(std::vector<FlowField>& members, const SolverConfig& cfg,
                         const std::vector<double>& times, const StepHook& on_step,
                         const HitHook& on_hit) {
  cfg.validate();
  if (members.empty()) return;
  for (std::size_t q = 1; q < times.size(); ++q)
    if (!(times[q] > times[q - 1])) throw PreconditionError("snapshot times must increase");
  if (!times.empty() && times.front() < members.front().time - 1e-14)
    throw PreconditionError("snapshot time before the field time");
  for (const auto& m : members) {
    require_same_grid(m.grid, members.front().grid);
    if (m.time != members.front().time) throw PreconditionError("members at different times");
  }
  std::vector<detail::Workspace> ws(members.size());
  std::vector<FlowField> before;
  const double dxmin = std::min(members.front().grid.dx1, members.front().grid.dx2);
  for (std::size_t q = 0; q < times.size(); ++q) {
    const double target = times[q];
    while (members.front().time < target) {
      double smax = 0.0;
      for (const auto& m : members) smax = std::max(smax, max_signal_speed(m));
      double dt = cfg.cfl * dxmin / std::max(smax, 1e-300);
      const double t = members.front().time;
      bool land = false;
      if (t + dt >= target - 1e-12 * std::max(1.0, std::abs(target))) {
        dt = target - t;
        land = true;
      }
      if (on_step) before = members;
      for (std::size_t m = 0; m < members.size(); ++m) {
        step_inplace(members[m], dt, cfg, ws[m]);
        if (land) members[m].time = target;
      }
      if (on_step) on_step(before, members);
    }
    if (on_hit) on_hit(q, members);
  }
}

inline std::vector<FlowField> run(const FlowField& field, const SolverConfig& cfg) {
  std::vector<FlowField> out;
  std::vector<FlowField> members{field};
  run_lockstep(members, cfg, cfg.snapshot_times, nullptr,
               [&](std::size_t, const std::vector<FlowField>& m) { out.push_back(m.front()); });
  if (out.empty()) out.push_back(field);
  return out;
}

// ---------------------------------------------------------------------------
// diagnostics

inline double total_mass(const FlowField& f) {
  CompensatedSum s;
  for (double r : f.rho) s.add(r);
  return s.value() * f.grid.cell_area();
}

// largest deviation of any conserved plane from its row-0 value
inline double x2_variation(const FlowField& f) {
  const Grid& g = f.grid;
  double m = 0.0;
  for (int j = 1; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) {
      const std::size_t k = g.at(i, j), k0 = g.at(i, 0);
      m = std::max({m, std::abs(f.rho[k] - f.rho[k0]), std::abs(f.m1[k] - f.m1[k0]),
                    std::abs(f.m2[k] - f.m2[k0])});
    }
  return m;
}

// L1 distance of (c, v1, v2) from an exact 1D profile
template <class Exact>
double l1_error(const FlowField& f, Exact&& exact) {
  const Grid& g = f.grid;
  std::vector<PrimitiveState> ex(g.n1);
  for (int i = 0; i < g.n1; ++i) ex[i] = exact(g.x1(i), f.time);
  CompensatedSum s;
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) {
      const PrimitiveState a = f.state(i, j);
      s.add(std::abs(a.c - ex[i].c) + std::abs(a.v1 - ex[i].v1) + std::abs(a.v2 - ex[i].v2));
    }
  return s.value() * g.cell_area();
}

inline Plane vorticity(const FieldPlanes& p, const Grid& g) {
  Plane out(g.size());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) out[g.at(i, j)] = d1(p.v2, g, i, j) - d2(p.v1, g, i, j);
  return out;
}

inline Plane vorticity(const FlowField& f) { return vorticity(field_planes(f), f.grid); }

// L_ring(psi) - RHS of the invariant transport equations. The time derivative is
// centered when both neighbours exist, one-sided otherwise.
inline Plane transport_residual(const std::vector<FlowField>& seq, std::size_t idx,
                                Invariant which) {
  if (seq.size() < 2) throw PreconditionError("transport residual needs two snapshots");
  if (idx >= seq.size()) throw PreconditionError("snapshot index out of range");
  for (const auto& s : seq) require_same_grid(s.grid, seq.front().grid);
  const std::size_t a = idx == 0 ? 0 : idx - 1;
  const std::size_t b = idx + 1 < seq.size() ? idx + 1 : idx;
  const FieldPlanes pa = field_planes(seq[a]), pb = field_planes(seq[b]);
  const FieldPlanes p = field_planes(seq[idx]);
  const double dt = seq[b].time - seq[a].time;
  const Grid& g = seq[idx].grid;
  const Plane& fa = select(pa, which);
  const Plane& fb = select(pb, which);
  const Plane& f = select(p, which);
  Plane out(g.size());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) {
      const std::size_t k = g.at(i, j);
      const double c = p.c[k];
      const double Lr = (fb[k] - fa[k]) / dt + (p.v1[k] + c) * d1(f, g, i, j) + p.v2[k] * d2(f, g, i, j);
      double rhs = 0.0;
      switch (which) {
        case Invariant::wbar: rhs = 0.5 * c * d2(p.psi2, g, i, j); break;
        case Invariant::w: rhs = 2.0 * c * d1(p.w, g, i, j) + 0.5 * c * d2(p.psi2, g, i, j); break;
        case Invariant::psi2:
          rhs = c * d1(p.psi2, g, i, j) + c * (d2(p.w, g, i, j) + d2(p.wbar, g, i, j));
          break;
      }
      out[k] = Lr - rhs;
    }
  return out;
}

}  // namespace rarewave
