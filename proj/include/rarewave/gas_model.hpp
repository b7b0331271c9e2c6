#pragma once

// Polytropic isentropic gas p = k0 rho^gamma and its Riemann invariants.
// States are carried as (c, v1, v2); density is derived on demand.

#include <cmath>
#include <string>

#include "rarewave/errors.hpp"

namespace rarewave {

struct PolytropicGas {
  double gamma = 2.0;
  double k0 = 0.5;

  PolytropicGas() = default;
  PolytropicGas(double g, double k) : gamma(g), k0(k) { validate(); }

  void validate() const {
    if (!(gamma > 1.0 && gamma < 3.0))
      throw DomainError("gamma must lie in (1,3), got " + std::to_string(gamma));
    if (!(k0 > 0.0)) throw DomainError("k0 must be positive, got " + std::to_string(k0));
  }

  double pressure(double rho) const { return k0 * std::pow(rho, gamma); }

  // rho = (c^2 / (k0 gamma))^(1/(gamma-1))
  double density(double c) const {
    if (c < 0.0) throw DomainError("negative sound speed");
    return std::pow(c * c / (k0 * gamma), 1.0 / (gamma - 1.0));
  }

  // fast path for kernels, no checks
  double sound_speed_unchecked(double rho) const {
    return std::sqrt(k0 * gamma * std::pow(rho, gamma - 1.0));
  }
};

struct PrimitiveState {
  double c = 0.0;
  double v1 = 0.0;
  double v2 = 0.0;

  bool vacuum() const { return c == 0.0; }
};

struct RiemannInvariants {
  double wbar = 0.0;
  double w = 0.0;
  double psi2 = 0.0;
};

inline double sound_speed(const PolytropicGas& gas, double rho) {
  if (rho < 0.0) throw DomainError("negative density " + std::to_string(rho));
  if (rho == 0.0) return 0.0;
  return gas.sound_speed_unchecked(rho);
}

inline double enthalpy(const PolytropicGas& gas, double c) { return c * c / (gas.gamma - 1.0); }

inline RiemannInvariants to_invariants(const PolytropicGas& gas, const PrimitiveState& s) {
  const double a = s.c / (gas.gamma - 1.0);
  return {a + 0.5 * s.v1, a - 0.5 * s.v1, -s.v2};
}

inline PrimitiveState from_invariants(const PolytropicGas& gas, const RiemannInvariants& r) {
  const double sum = r.wbar + r.w;
  if (sum < 0.0) throw DomainError("wbar + w < 0: below vacuum");
  return {0.5 * (gas.gamma - 1.0) * sum, r.wbar - r.w, -r.psi2};
}

// v1 + c written in the invariants
inline double max_char_speed(const PolytropicGas& gas, const RiemannInvariants& r) {
  return 0.5 * (gas.gamma + 1.0) * r.wbar + 0.5 * (gas.gamma - 3.0) * r.w;
}

}  // namespace rarewave
