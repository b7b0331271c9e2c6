#pragma once

// Exact 1D Riemann solver for the isentropic polytropic gas, plus the
// centered forward fan and its geometric profile.

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "rarewave/errors.hpp"
#include "rarewave/gas_model.hpp"

namespace rarewave {

// 1D states reuse PrimitiveState with v2 = 0.
struct RiemannProblem1D {
  PolytropicGas gas;
  PrimitiveState left;
  PrimitiveState right;
};

enum class WaveKind { rarefaction, shock };

struct WaveDescriptor {
  WaveKind kind = WaveKind::rarefaction;
  // rarefaction: [lo, hi] slopes of the fan; shock: lo == hi == shock speed
  double lo = 0.0;
  double hi = 0.0;
  double strength = 0.0;  // |c_m - c_side|
  bool degenerate() const { return strength < 1e-12; }
};

struct WaveFan {
  PolytropicGas gas;
  PrimitiveState left, right, middle;
  bool vacuum_middle = false;
  WaveDescriptor wave1, wave2;
};

// ---------------------------------------------------------------------------
// centered forward fan

class CenteredFan {
 public:
  CenteredFan(const PolytropicGas& gas, double v0, double c0) : gas_(gas), v0_(v0), c0_(c0) {
    if (!(c0 > 0.0)) throw DomainError("centered fan needs c0 > 0");
  }

  double head_slope() const { return v0_ + c0_; }
  double vacuum_slope() const { return v0_ - 2.0 * c0_ / (gas_.gamma - 1.0); }

  PrimitiveState at_slope(double xi) const {
    const double g = gas_.gamma;
    if (xi >= head_slope()) return {c0_, v0_, 0.0};
    if (xi <= vacuum_slope()) return {0.0, vacuum_slope(), 0.0};
    const double k = ((g - 1.0) * v0_ - 2.0 * c0_) / (g + 1.0);
    return {(g - 1.0) / (g + 1.0) * xi - k, 2.0 / (g + 1.0) * xi + k, 0.0};
  }

  PrimitiveState operator()(double x, double t) const {
    if (!(t > 0.0)) throw DomainError("centered fan evaluated at t <= 0");
    return at_slope(x / t);
  }

 private:
  PolytropicGas gas_;
  double v0_, c0_;
};

inline CenteredFan centered_fan(const PolytropicGas& gas, double v0, double c0) {
  return CenteredFan(gas, v0, c0);
}

// ---------------------------------------------------------------------------
// jump conditions

inline double shock_jump_residual(const PolytropicGas& gas, const PrimitiveState& l,
                                  const PrimitiveState& r) {
  const double rl = gas.density(l.c), rr = gas.density(r.c);
  const double nl = 1.0 / rl, nr = 1.0 / rr;
  const double dv = l.v1 - r.v1;
  return dv * dv - (nr - nl) * (gas.pressure(rl) - gas.pressure(rr));
}

inline double rh_shock_speed(const PolytropicGas& gas, const PrimitiveState& l,
                             const PrimitiveState& r) {
  const double rl = gas.density(l.c), rr = gas.density(r.c);
  return (rr * r.v1 - rl * l.v1) / (rr - rl);
}

inline bool lax_admissible(const PolytropicGas& gas, const PrimitiveState& l,
                           const PrimitiveState& r, int family) {
  if (family != 1 && family != 2) throw PreconditionError("family must be 1 or 2");
  if (l.vacuum() || r.vacuum()) throw PreconditionError("lax check on vacuum state");
  const double scale = 1.0 + l.v1 * l.v1 + r.v1 * r.v1 + l.c * l.c + r.c * r.c;
  const double res = shock_jump_residual(gas, l, r);
  if (std::abs(res) > 1e-8 * scale)
    throw PreconditionError("lax check on a pair violating the jump relation (residual " +
                            std::to_string(res) + ")");
  const double rl = gas.density(l.c), rr = gas.density(r.c);
  if (rl == rr) return false;
  const double s = rh_shock_speed(gas, l, r);
  const double sign = family == 1 ? -1.0 : 1.0;
  const double lam_l = l.v1 + sign * l.c, lam_r = r.v1 + sign * r.c;
  return lam_l > s && s > lam_r;
}

// ---------------------------------------------------------------------------
// two-wave solver

namespace detail {

// Velocity jump across the wave connecting side state (v_k, c_k) to middle sound speed c:
// v_m = v_l - f(c; left) = v_r + f(c; right). Returns f and df/dc.
inline void wave_curve(const PolytropicGas& gas, double ck, double c, double& f, double& df) {
  const double g = gas.gamma;
  if (c <= ck) {
    f = 2.0 / (g - 1.0) * (c - ck);
    df = 2.0 / (g - 1.0);
    return;
  }
  const double rk = gas.density(ck), r = gas.density(c);
  const double pk = gas.pressure(rk), p = gas.pressure(r);
  const double a = 1.0 / rk - 1.0 / r;  // > 0
  const double b = p - pk;              // > 0
  f = std::sqrt(a * b);
  // d rho/dc = 2 rho / ((g-1) c); dp/drho = c^2
  const double drho = 2.0 * r / ((g - 1.0) * c);
  const double da = drho / (r * r);
  const double db = c * c * drho;
  df = 0.5 * (da * b + a * db) / f;
}

}  // namespace detail

inline WaveFan solve_riemann(const RiemannProblem1D& prob) {
  const PolytropicGas& gas = prob.gas;
  gas.validate();
  const PrimitiveState& L = prob.left;
  const PrimitiveState& R = prob.right;
  if (!(L.c > 0.0) || !(R.c > 0.0)) throw PreconditionError("riemann problem with vacuum input");
  const double g = gas.gamma;

  WaveFan fan;
  fan.gas = gas;
  fan.left = {L.c, L.v1, 0.0};
  fan.right = {R.c, R.v1, 0.0};

  const RiemannInvariants il = to_invariants(gas, fan.left);
  const RiemannInvariants ir = to_invariants(gas, fan.right);

  // two rarefactions: wbar_m = wbar_l, w_m = w_r
  if (il.wbar + ir.w < 0.0) {
    fan.vacuum_middle = true;
    fan.middle = {0.0, 0.0, 0.0};
    fan.wave1 = {WaveKind::rarefaction, L.v1 - L.c, 2.0 * il.wbar, L.c};
    fan.wave2 = {WaveKind::rarefaction, -2.0 * ir.w, R.v1 + R.c, R.c};
    return fan;
  }

  auto phi = [&](double c, double& dphi) {
    double fl, dfl, fr, dfr;
    detail::wave_curve(gas, L.c, c, fl, dfl);
    detail::wave_curve(gas, R.c, c, fr, dfr);
    dphi = dfl + dfr;
    return fl + fr + (R.v1 - L.v1);
  };

  // bracket: phi is increasing with phi(0) <= 0
  double lo = 0.0, hi = std::max(L.c, R.c);
  double d;
  while (phi(hi, d) < 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) throw NumericalError("riemann: cannot bracket middle state");
  }
  // start from the two-rarefaction estimate
  double c = std::clamp(0.5 * (g - 1.0) * (il.wbar + ir.w), lo, hi);
  bool converged = false;
  int it = 0;
  for (; it < 200; ++it) {
    const double f = phi(c, d);
    if (f == 0.0) {
      converged = true;
      break;
    }
    if (f < 0.0) lo = c; else hi = c;
    double next = (d > 0.0) ? c - f / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - c);
    c = next;
    if (step <= 1e-13 * std::max(c, 1e-300) || hi - lo <= 1e-15 * hi) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream os;
    os << "riemann: no convergence after " << it << " iterations, bracket [" << lo << ", " << hi
       << "], left (v,c)=(" << L.v1 << "," << L.c << ") right (v,c)=(" << R.v1 << "," << R.c << ")";
    throw NumericalError(os.str());
  }

  double fl, dfl;
  detail::wave_curve(gas, L.c, c, fl, dfl);
  fan.middle = {c, L.v1 - fl, 0.0};
  const PrimitiveState& M = fan.middle;

  fan.wave1.strength = std::abs(c - L.c);
  if (c > L.c && !fan.wave1.degenerate()) {
    const double s = rh_shock_speed(gas, fan.left, M);
    fan.wave1 = {WaveKind::shock, s, s, fan.wave1.strength};
  } else {
    fan.wave1 = {WaveKind::rarefaction, L.v1 - L.c, M.v1 - M.c, fan.wave1.strength};
  }
  fan.wave2.strength = std::abs(c - R.c);
  if (c > R.c && !fan.wave2.degenerate()) {
    const double s = rh_shock_speed(gas, M, fan.right);
    fan.wave2 = {WaveKind::shock, s, s, fan.wave2.strength};
  } else {
    fan.wave2 = {WaveKind::rarefaction, M.v1 + M.c, R.v1 + R.c, fan.wave2.strength};
  }
  return fan;
}

inline PrimitiveState evaluate_fan(const WaveFan& fan, double xi) {
  const double g = fan.gas.gamma;
  const auto& w1 = fan.wave1;
  const auto& w2 = fan.wave2;
  if (xi < w1.lo) return fan.left;
  if (w1.kind == WaveKind::rarefaction && xi <= w1.hi) {
    // backward fan: wbar fixed, xi = v - c
    const double wb = to_invariants(fan.gas, fan.left).wbar;
    const double w = std::max((0.5 * (3.0 - g) * wb - xi) * 2.0 / (g + 1.0), -wb);
    return {0.5 * (g - 1.0) * (w + wb), wb - w, 0.0};
  }
  if (w2.kind == WaveKind::shock) return xi < w2.lo ? fan.middle : fan.right;
  if (xi < w2.lo) return fan.vacuum_middle ? PrimitiveState{0.0, xi, 0.0} : fan.middle;
  if (xi <= w2.hi) {
    // forward fan: w fixed, xi = v + c
    const double w = to_invariants(fan.gas, fan.right).w;
    const double wb = std::max((xi - 0.5 * (g - 3.0) * w) * 2.0 / (g + 1.0), -w);
    return {0.5 * (g - 1.0) * (w + wb), wb - w, 0.0};
  }
  return fan.right;
}

// ---------------------------------------------------------------------------
// geometric 1D profile, u = -x/t

struct GeometricProfile1D {
  double u = 0.0;
  double kappa = 0.0;
  double mu = 0.0;
  double U0 = 0.0, Um1 = 0.0, Um2 = 0.0;
};

// Diagonal variables for a unit normal That; with That = (-1,0) they reduce to (wbar, -psi2, w).
inline void diagonal_variables(const RiemannInvariants& r, double T1, double T2, double& U0,
                               double& Um1, double& Um2) {
  U0 = 0.5 * (1.0 - T1) * r.wbar + 0.5 * (1.0 + T1) * r.w + 0.5 * T2 * r.psi2;
  Um1 = T2 * r.wbar - T2 * r.w + T1 * r.psi2;
  Um2 = 0.5 * (1.0 + T1) * r.wbar + 0.5 * (1.0 - T1) * r.w - 0.5 * T2 * r.psi2;
}

inline GeometricProfile1D geometric_profile(const PolytropicGas& gas, double v0, double c0,
                                            double t, double x) {
  const CenteredFan fan(gas, v0, c0);
  if (!(t > 0.0)) throw DomainError("geometric profile at t <= 0");
  const double xi = x / t;
  if (xi > fan.head_slope() || xi < fan.vacuum_slope())
    throw DomainError("geometric profile outside the fan");
  const PrimitiveState s = fan.at_slope(xi);
  GeometricProfile1D p;
  p.u = -xi;
  p.kappa = t;
  p.mu = s.c * t;
  diagonal_variables(to_invariants(gas, s), -1.0, 0.0, p.U0, p.Um1, p.Um2);
  return p;
}

}  // namespace rarewave
