#pragma once

// Acoustical geometry on the flow grid: the level-set foliation u, the first frame
// (L, T-hat, X-hat) with kappa, mu, chi, zeta, eta, and the Cartesian second frame
// X_r = d2, T_r = -t d1, L_r = dt + (v1 + c) d1 + v2 d2.

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <vector>

#include "rarewave/errors.hpp"
#include "rarewave/euler2d.hpp"
#include "rarewave/grid.hpp"

namespace rarewave {

struct Foliation {
  double time = 0.0;
  Grid grid;
  Plane u, kappa, mu, T1, T2, X1, X2, chi, zeta, eta;
};

using Mask = std::vector<char>;

// cells with lo <= u <= hi, margin cells away from the x1 edges
inline Mask band_mask(const Grid& g, const Plane& u, double lo, double hi, int margin = 2) {
  Mask m(g.size(), 0);
  for (int j = 0; j < g.n2; ++j)
    for (int i = margin; i < g.n1 - margin; ++i) {
      const std::size_t k = g.at(i, j);
      m[k] = u[k] >= lo && u[k] <= hi;
    }
  return m;
}

inline double masked_max_abs(const Plane& f, const Mask& m) {
  double r = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k)
    if (m[k]) r = std::max(r, std::abs(f[k]));
  return r;
}
inline double masked_max(const Plane& f, const Mask& m) {
  double r = -1e300;
  for (std::size_t k = 0; k < f.size(); ++k)
    if (m[k]) r = std::max(r, f[k]);
  return r;
}
inline double masked_min(const Plane& f, const Mask& m) {
  double r = 1e300;
  for (std::size_t k = 0; k < f.size(); ++k)
    if (m[k]) r = std::min(r, f[k]);
  return r;
}

// derivative along X-hat of a plane
inline Plane along(const Plane& f, const Plane& a1, const Plane& a2, const Grid& g) {
  Plane out(g.size());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) {
      const std::size_t k = g.at(i, j);
      out[k] = a1[k] * d1(f, g, i, j) + a2[k] * d2(f, g, i, j);
    }
  return out;
}

inline Foliation frame_fields(const FieldPlanes& p, const Grid& g, double t, const Plane& u) {
  Foliation F;
  F.time = t;
  F.grid = g;
  F.u = u;
  const std::size_t n = g.size();
  for (Plane* q : {&F.kappa, &F.mu, &F.T1, &F.T2, &F.X1, &F.X2}) q->resize(n);
  int bad_i = -1, bad_j = -1;
#pragma omp parallel for schedule(static)
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) {
      const std::size_t k = g.at(i, j);
      const double a = d1(u, g, i, j), b = d2(u, g, i, j);
      const double nrm = std::hypot(a, b);
      if (!(nrm > 0.0)) {
#pragma omp critical
        bad_i = i, bad_j = j;
        continue;
      }
      F.kappa[k] = 1.0 / nrm;
      F.mu[k] = p.c[k] * F.kappa[k];
      F.T1[k] = a / nrm;
      F.T2[k] = b / nrm;
      F.X1[k] = F.T2[k];
      F.X2[k] = -F.T1[k];
    }
  if (bad_i >= 0) {
    std::ostringstream os;
    os << "degenerate gradient of u at cell (" << bad_i << "," << bad_j << "), t = " << t;
    throw DegenerateFoliation(os.str());
  }
  // chi = -X^i X(psi_i) - c X^2 X(X^1) + c X^1 X(X^2), psi_i = -v^i
  const Plane Xv1 = along(p.v1, F.X1, F.X2, g), Xv2 = along(p.v2, F.X1, F.X2, g);
  const Plane XX1 = along(F.X1, F.X1, F.X2, g), XX2 = along(F.X2, F.X1, F.X2, g);
  const Plane Xc = along(p.c, F.X1, F.X2, g), Xk = along(F.kappa, F.X1, F.X2, g);
  F.chi.resize(n), F.zeta.resize(n), F.eta.resize(n);
#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < n; ++k) {
    const double c = p.c[k];
    F.chi[k] = F.X1[k] * Xv1[k] + F.X2[k] * Xv2[k] - c * F.X2[k] * XX1[k] + c * F.X1[k] * XX2[k];
    const double TXpsi = -(F.T1[k] * Xv1[k] + F.T2[k] * Xv2[k]);
    F.zeta[k] = -F.kappa[k] * (TXpsi + Xc[k]);
    F.eta[k] = -F.kappa[k] * TXpsi + c * Xk[k];
  }
  return F;
}

inline Foliation frame_fields(const FlowField& f, const Plane& u) {
  require_same_grid(f.grid, f.grid);
  if (u.size() != f.grid.size()) throw PreconditionError("u plane does not match the grid");
  return frame_fields(field_planes(f), f.grid, f.time, u);
}

// ---------------------------------------------------------------------------
// level set: u_t + v.grad u - c |grad u| = 0, i.e. L(u) = 0 with T-hat = grad u / |grad u|

class LevelSetTracker {
 public:
  LevelSetTracker(const Grid& g, Plane u0, double band_lo, double band_hi, int order = 2)
      : g_(g), u_(std::move(u0)), lo_(band_lo), hi_(band_hi), order_(order) {
    if (u_.size() != g.size()) throw PreconditionError("u_init does not match the grid");
    if (order != 1 && order != 2) throw PreconditionError("level-set order must be 1 or 2");
    check();
  }

  const Plane& u() const { return u_; }
  const Grid& grid() const { return g_; }

  // Advance from the fields at ta to the fields at tb (Heun, linear interpolation in time).
  void advance(const FieldPlanes& a, double ta, const FieldPlanes& b, double tb) {
    const double dt = tb - ta;
    if (dt <= 0.0) return;
    double smax = 0.0;
    for (const FieldPlanes* p : {&a, &b})
      for (std::size_t k = 0; k < g_.size(); ++k)
        smax = std::max(smax, std::hypot(p->v1[k], p->v2[k]) + p->c[k]);
    const double lim = 0.5 / (smax * (1.0 / g_.dx1 + 1.0 / g_.dx2));
    const int nsub = std::max(1, static_cast<int>(std::ceil(dt / lim - 1e-12)));
    const double h = dt / nsub;
    Plane k1(g_.size()), k2(g_.size()), us(g_.size());
    for (int s = 0; s < nsub; ++s) {
      const double w0 = static_cast<double>(s) / nsub, w1 = static_cast<double>(s + 1) / nsub;
      rate(u_, a, b, w0, k1);
#pragma omp parallel for schedule(static)
      for (std::size_t k = 0; k < g_.size(); ++k) us[k] = u_[k] + h * k1[k];
      rate(us, a, b, w1, k2);
#pragma omp parallel for schedule(static)
      for (std::size_t k = 0; k < g_.size(); ++k) u_[k] += 0.5 * h * (k1[k] + k2[k]);
    }
    check();
  }

  void advance(const FlowField& a, const FlowField& b) {
    advance(field_planes(a), a.time, field_planes(b), b.time);
  }

 private:
  // value at (i + di, j) with linear extrapolation past the x1 edges
  double at1(const Plane& u, int i, int j) const {
    if (i < 0) return u[g_.at(0, j)] + i * (u[g_.at(1, j)] - u[g_.at(0, j)]);
    if (i >= g_.n1) {
      const int e = g_.n1 - 1;
      return u[g_.at(e, j)] + (i - e) * (u[g_.at(e, j)] - u[g_.at(e - 1, j)]);
    }
    return u[g_.at(i, j)];
  }

  void rate(const Plane& u, const FieldPlanes& a, const FieldPlanes& b, double w,
            Plane& out) const {
    const Grid& g = g_;
    const int ord = order_;
#pragma omp parallel for schedule(static)
    for (int j = 0; j < g.n2; ++j) {
      const int jm = g.wrap2(j - 1), jp = g.wrap2(j + 1);
      const int jmm = g.wrap2(j - 2), jpp = g.wrap2(j + 2);
      for (int i = 0; i < g.n1; ++i) {
        const std::size_t k = g.at(i, j);
        const double c = (1.0 - w) * a.c[k] + w * b.c[k];
        const double v1 = (1.0 - w) * a.v1[k] + w * b.v1[k];
        const double v2 = (1.0 - w) * a.v2[k] + w * b.v2[k];
        const double um = at1(u, i - 1, j), up = at1(u, i + 1, j), u0 = u[k];
        const double vm = u[g.at(i, jm)], vp = u[g.at(i, jp)];
        const double p1 = (up - um) / (2.0 * g.dx1), p2 = (vp - vm) / (2.0 * g.dx2);
        const double nrm = std::hypot(p1, p2);
        const double L1 = v1 - c * p1 / nrm, L2 = v2 - c * p2 / nrm;
        double D1, D2;
        if (ord == 1) {
          D1 = L1 > 0.0 ? (u0 - um) / g.dx1 : (up - u0) / g.dx1;
          D2 = L2 > 0.0 ? (u0 - vm) / g.dx2 : (vp - u0) / g.dx2;
        } else {
          D1 = L1 > 0.0 ? (3.0 * u0 - 4.0 * um + at1(u, i - 2, j)) / (2.0 * g.dx1)
                        : (-3.0 * u0 + 4.0 * up - at1(u, i + 2, j)) / (2.0 * g.dx1);
          D2 = L2 > 0.0 ? (3.0 * u0 - 4.0 * vm + u[g.at(i, jmm)]) / (2.0 * g.dx2)
                        : (-3.0 * u0 + 4.0 * vp - u[g.at(i, jpp)]) / (2.0 * g.dx2);
        }
        out[k] = -(L1 * D1 + L2 * D2);
      }
    }
  }

  void check() const {
    for (int j = 0; j < g_.n2; ++j)
      for (int i = 0; i < g_.n1; ++i) {
        const std::size_t k = g_.at(i, j);
        if (u_[k] < lo_ || u_[k] > hi_) continue;
        const double nrm = std::hypot(d1(u_, g_, i, j), d2(u_, g_, i, j));
        if (!(nrm >= 1e-8)) {
          std::ostringstream os;
          os << "|grad u| = " << nrm << " below 1e-8 in the tracked band at cell (" << i << ","
             << j << ")";
          throw DegenerateFoliation(os.str());
        }
      }
  }

  Grid g_;
  Plane u_;
  double lo_, hi_;
  int order_;
};

// u at every snapshot time, transported between consecutive snapshots.
inline std::vector<Foliation> evolve_u(const std::vector<FlowField>& snaps, const Plane& u_init,
                                       double band_lo, double band_hi, int order = 2) {
  std::vector<Foliation> out;
  if (snaps.empty()) return out;
  for (const auto& s : snaps) require_same_grid(s.grid, snaps.front().grid);
  LevelSetTracker ls(snaps.front().grid, u_init, band_lo, band_hi, order);
  FieldPlanes prev = field_planes(snaps.front());
  out.push_back(frame_fields(prev, snaps.front().grid, snaps.front().time, ls.u()));
  for (std::size_t q = 1; q < snaps.size(); ++q) {
    FieldPlanes cur = field_planes(snaps[q]);
    ls.advance(prev, snaps[q - 1].time, cur, snaps[q].time);
    out.push_back(frame_fields(cur, snaps[q].grid, snaps[q].time, ls.u()));
    prev = std::move(cur);
  }
  return out;
}

// ---------------------------------------------------------------------------
// second frame

struct SecondFrame {
  double time = 0.0;
  double kapparing = 0.0;
  Plane y, z, yring, zring, chiring, etaring;
};

inline SecondFrame second_frame(const FieldPlanes& p, const Grid& g, double t) {
  SecondFrame s;
  s.time = t;
  s.kapparing = t;
  const std::size_t n = g.size();
  Plane lam(n);
  for (std::size_t k = 0; k < n; ++k) lam[k] = p.v1[k] + p.c[k];
  s.y = diff2(lam, g);
  s.z = diff1(lam, g);
  s.chiring = diff2(p.v2, g);  // -X_r(psi2)
  s.etaring = diff1(p.v2, g);
  s.yring.resize(n), s.zring.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    s.z[k] = 1.0 - t * s.z[k];
    s.etaring[k] *= -t;  // -T_r(psi2) = -t d1 v2
    s.yring[k] = s.y[k] / t;
    s.zring[k] = s.z[k] / t;
  }
  return s;
}

inline SecondFrame second_frame(const FlowField& f) { return second_frame(field_planes(f), f.grid, f.time); }

struct DeformationComponents {
  Plane pi_LL, pi_LbLb, pi_LLb, pi_LX, pi_LbX, pi_XX;
};

// rows of the deformation table for Z_r = X_r (which = 0) or T_r (which = 1)
inline DeformationComponents deformation_components(const SecondFrame& s, const FieldPlanes& p,
                                                    const Grid& g, int which) {
  const std::size_t n = g.size();
  const double kr = s.kapparing;
  DeformationComponents d;
  for (Plane* q : {&d.pi_LL, &d.pi_LbLb, &d.pi_LLb, &d.pi_LX, &d.pi_LbX, &d.pi_XX}) q->assign(n, 0.0);
  Plane Zc = which == 0 ? diff2(p.c, g) : diff1(p.c, g);
  if (which == 1)
    for (double& x : Zc) x *= -kr;
  const Plane& yz = which == 0 ? s.y : s.z;
  const Plane& lam = which == 0 ? s.chiring : s.etaring;
  for (std::size_t k = 0; k < n; ++k) {
    const double c = p.c[k];
    d.pi_LL[k] = -2.0 * c * yz[k];
    d.pi_LbLb[k] = 2.0 / c * kr * kr * (yz[k] - 2.0 * Zc[k]);
    d.pi_LLb[k] = -2.0 * kr * Zc[k];
    d.pi_LX[k] = -lam[k];
    d.pi_LbX[k] = -kr / c * lam[k];
  }
  return d;
}

// ---------------------------------------------------------------------------
// time stencils: three time levels, derivatives taken at one of them

struct TimeSlice {
  double t = 0.0;
  FieldPlanes p;
  Foliation fol;
};

// d/dt at nodes[e] of the quadratic through three nodes
inline std::array<double, 3> lagrange_dt_weights(const std::array<double, 3>& tn, int e) {
  std::array<double, 3> w{};
  const double s = tn[e];
  for (int a = 0; a < 3; ++a) {
    double num = 0.0, den = 1.0;
    for (int b = 0; b < 3; ++b) {
      if (b == a) continue;
      den *= tn[a] - tn[b];
      double prod = 1.0;
      for (int c = 0; c < 3; ++c)
        if (c != a && c != b) prod *= s - tn[c];
      num += prod;
    }
    w[a] = num / den;
  }
  return w;
}

struct TimeStencil {
  std::array<const TimeSlice*, 3> s{};
  int e = 1;  // index of the evaluation slice

  const TimeSlice& at() const { return *s[e]; }
  const Grid& grid() const { return s[e]->fol.grid; }
  double t() const { return s[e]->t; }

  std::array<double, 3> weights() const { return lagrange_dt_weights({s[0]->t, s[1]->t, s[2]->t}, e); }

  // time derivative of a quantity given on each slice
  template <class Get>
  Plane dt(Get&& get) const {
    const auto w = weights();
    const Plane &a = get(*s[0]), &b = get(*s[1]), &c = get(*s[2]);
    Plane out(a.size());
#pragma omp parallel for schedule(static)
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = w[0] * a[k] + w[1] * b[k] + w[2] * c[k];
    return out;
  }

  // L q = dt q + (v - c T-hat) . grad q
  template <class Get>
  Plane L(Get&& get) const {
    Plane out = dt(get);
    const Grid& g = grid();
    const TimeSlice& m = at();
    const Plane& q = get(m);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < g.n2; ++j)
      for (int i = 0; i < g.n1; ++i) {
        const std::size_t k = g.at(i, j);
        const double L1 = m.p.v1[k] - m.p.c[k] * m.fol.T1[k];
        const double L2 = m.p.v2[k] - m.p.c[k] * m.fol.T2[k];
        out[k] += L1 * d1(q, g, i, j) + L2 * d2(q, g, i, j);
      }
    return out;
  }

  // L_r q = dt q + (v1 + c) d1 q + v2 d2 q
  template <class Get>
  Plane Lring(Get&& get) const {
    Plane out = dt(get);
    const Grid& g = grid();
    const TimeSlice& m = at();
    const Plane& q = get(m);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < g.n2; ++j)
      for (int i = 0; i < g.n1; ++i) {
        const std::size_t k = g.at(i, j);
        out[k] += (m.p.v1[k] + m.p.c[k]) * d1(q, g, i, j) + m.p.v2[k] * d2(q, g, i, j);
      }
    return out;
  }
};

// getter for a quantity precomputed on each slice of a stencil
inline auto per_slice(const TimeStencil& st, const std::array<Plane, 3>& arr) {
  return [&st, &arr](const TimeSlice& s) -> const Plane& {
    for (int q = 0; q < 3; ++q)
      if (&s == st.s[q]) return arr[q];
    throw PreconditionError("slice not in stencil");
  };
}

inline TimeSlice make_slice(const FlowField& f, const Plane& u) {
  TimeSlice s;
  s.t = f.time;
  s.p = field_planes(f);
  s.fol = frame_fields(s.p, f.grid, f.time, u);
  return s;
}

// ---------------------------------------------------------------------------
// commutation identities for the second frame

// y_r T_r(wbar) - [L_r X_r(wbar) - 1/2 X_r(c X_r psi2) + chi_r X_r(wbar)]
inline Plane commutation_residual_y(const TimeStencil& st, const SecondFrame& sf) {
  const Grid& g = st.grid();
  const TimeSlice& m = st.at();
  const double t = st.t();
  std::array<Plane, 3> Xw;
  for (int q = 0; q < 3; ++q) Xw[q] = diff2(st.s[q]->p.wbar, g);
  const Plane LX = st.Lring(per_slice(st, Xw));
  Plane cXpsi(g.size());
  const Plane Xpsi = diff2(m.p.psi2, g);
  for (std::size_t k = 0; k < g.size(); ++k) cXpsi[k] = m.p.c[k] * Xpsi[k];
  const Plane XcXpsi = diff2(cXpsi, g);
  const Plane Tw = diff1(m.p.wbar, g);
  Plane out(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double Trw = -t * Tw[k];
    out[k] = sf.yring[k] * Trw - (LX[k] - 0.5 * XcXpsi[k] + sf.chiring[k] * Xw[st.e][k]);
  }
  return out;
}

// z_r T_r(wbar) - [L_r T_r(wbar) - T_r L_r(wbar) + eta_r X_r(wbar)]
inline Plane commutation_residual_z(const TimeStencil& st, const SecondFrame& sf) {
  const Grid& g = st.grid();
  const TimeSlice& m = st.at();
  const double t = st.t();
  std::array<Plane, 3> Tw;
  for (int q = 0; q < 3; ++q) {
    Tw[q] = diff1(st.s[q]->p.wbar, g);
    for (double& x : Tw[q]) x *= -st.s[q]->t;
  }
  const Plane LT = st.Lring(per_slice(st, Tw));
  const Plane Lw = st.Lring([](const TimeSlice& s) -> const Plane& { return s.p.wbar; });
  Plane TL = diff1(Lw, g);
  for (double& x : TL) x *= -t;
  const Plane Xw = diff2(m.p.wbar, g);
  Plane out(g.size());
  for (std::size_t k = 0; k < g.size(); ++k)
    out[k] = sf.zring[k] * Tw[st.e][k] - (LT[k] - TL[k] + sf.etaring[k] * Xw[k]);
  return out;
}

// ---------------------------------------------------------------------------
// structure equations and sign monitors

struct StructureReport {
  Plane Lkappa_res;  // L kappa - m' - e' kappa
  Plane Lkappa_alt;  // L kappa + T c + T-hat^j T(psi_j)
  Plane LT1_res, LT2_res;
  Plane mprime, eprime_kappa;
};

inline StructureReport structure_residuals(const TimeStencil& st, const PolytropicGas& gas) {
  const Grid& g = st.grid();
  const TimeSlice& m = st.at();
  const Foliation& F = m.fol;
  const std::size_t n = g.size();
  const Plane Lk = st.L([](const TimeSlice& s) -> const Plane& { return s.fol.kappa; });
  const Plane LT1 = st.L([](const TimeSlice& s) -> const Plane& { return s.fol.T1; });
  const Plane LT2 = st.L([](const TimeSlice& s) -> const Plane& { return s.fol.T2; });
  const Plane Lv1 = st.L([](const TimeSlice& s) -> const Plane& { return s.p.v1; });
  const Plane Lv2 = st.L([](const TimeSlice& s) -> const Plane& { return s.p.v2; });
  const Plane c1 = diff1(m.p.c, g), c2 = diff2(m.p.c, g);
  const Plane v11 = diff1(m.p.v1, g), v12 = diff2(m.p.v1, g);
  const Plane v21 = diff1(m.p.v2, g), v22 = diff2(m.p.v2, g);
  StructureReport r;
  for (Plane* q : {&r.Lkappa_res, &r.Lkappa_alt, &r.LT1_res, &r.LT2_res, &r.mprime, &r.eprime_kappa})
    q->resize(n);
  const double gm = gas.gamma;
#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < n; ++k) {
    const double kap = F.kappa[k], c = m.p.c[k];
    const double T1 = F.T1[k], T2 = F.T2[k], X1 = F.X1[k], X2 = F.X2[k];
    // T = kappa T-hat
    const double Tc = kap * (T1 * c1[k] + T2 * c2[k]);
    const double mp = -(gm + 1.0) / (gm - 1.0) * Tc;
    const double ep = -(T1 * Lv1[k] + T2 * Lv2[k]) / c;  // c^-1 T^i L(psi_i)
    r.mprime[k] = mp;
    r.eprime_kappa[k] = ep * kap;
    r.Lkappa_res[k] = Lk[k] - mp - ep * kap;
    const double Tpsi1 = -kap * (T1 * v11[k] + T2 * v12[k]);
    const double Tpsi2 = -kap * (T1 * v21[k] + T2 * v22[k]);
    r.Lkappa_alt[k] = Lk[k] + Tc + T1 * Tpsi1 + T2 * Tpsi2;
    const double Xpsi1 = -(X1 * v11[k] + X2 * v12[k]);
    const double Xpsi2 = -(X1 * v21[k] + X2 * v22[k]);
    const double Xc = X1 * c1[k] + X2 * c2[k];
    const double rhs = T1 * Xpsi1 + T2 * Xpsi2 + Xc;
    r.LT1_res[k] = LT1[k] - rhs * X1;
    r.LT2_res[k] = LT2[k] - rhs * X2;
  }
  return r;
}

struct SignMonitors {
  Plane Lmu, Trw, Lbar_r_w;  // L(mu), T_r(wbar), Lbar_r(wbar) = 2 T_r wbar + c^-1 t L_r wbar
};

inline SignMonitors sign_monitors(const TimeStencil& st) {
  const Grid& g = st.grid();
  const TimeSlice& m = st.at();
  const double t = st.t();
  SignMonitors s;
  s.Lmu = st.L([](const TimeSlice& q) -> const Plane& { return q.fol.mu; });
  s.Trw = diff1(m.p.wbar, g);
  for (double& x : s.Trw) x *= -t;
  const Plane Lw = st.Lring([](const TimeSlice& q) -> const Plane& { return q.p.wbar; });
  s.Lbar_r_w.resize(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) s.Lbar_r_w[k] = 2.0 * s.Trw[k] + t / m.p.c[k] * Lw[k];
  return s;
}

// mu = c^2 / (dt u + v.grad u), the -g(grad t, grad u) form, compared with c kappa
inline Plane mu_crosscheck(const TimeStencil& st) {
  const Grid& g = st.grid();
  const TimeSlice& m = st.at();
  const Plane ut = st.dt([](const TimeSlice& q) -> const Plane& { return q.fol.u; });
  Plane out(g.size());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) {
      const std::size_t k = g.at(i, j);
      const double Du = ut[k] + m.p.v1[k] * d1(m.fol.u, g, i, j) + m.p.v2[k] * d2(m.fol.u, g, i, j);
      out[k] = m.p.c[k] * m.p.c[k] / Du - m.fol.mu[k];
    }
  return out;
}

}  // namespace rarewave
