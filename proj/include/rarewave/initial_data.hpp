#pragma once

// Analytic data on Sigma_delta: a frozen-theta centered fan whose right state c0(x2)
// carries the epsilon modes, glued to constant states through a C^4 ramp, plus a small
// potential perturbation. Everything derives from one velocity potential, so the
// data is irrotational to the order of the difference stencil.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "rarewave/errors.hpp"
#include "rarewave/gas_model.hpp"

namespace rarewave {

struct PerturbationMode {
  double k1 = 4.0;     // wavenumber in the band coordinate
  int k2 = 1;          // x2 wavenumber
  double amp_c = 1.0;  // weight on the right-state sound speed
  double amp_phi = 1.0;  // weight on the potential perturbation
  double phase = 0.0;
};

struct PerturbationSpec {
  double epsilon = 0.0;
  std::vector<PerturbationMode> modes;
  // support of the potential envelope, in the band coordinate
  double env_lo = 0.15;
  double env_hi = 1.35;
};

struct FanShape {
  double v0 = 0.0;      // right-state velocity
  double c0 = 1.0;      // mean right-state sound speed
  double u_tail = 2.0;  // band coordinate where the fan is cut off on the left
  double glue_head = 0.8;  // ramp width into the right state, in band units; 0 = sharp head
  double glue_tail = 0.4;  // ramp width into the left state; 0 = sharp tail
};

namespace detail {

// C^4 ramp S on [0,1] and its first two antiderivatives (S1(1) = 1/2, S2(1) = 3/22).
inline double ramp(double x) {
  const double x2 = x * x, x5 = x2 * x2 * x;
  return x5 * (126.0 + x * (-420.0 + x * (540.0 + x * (-315.0 + 70.0 * x))));
}
inline double ramp1(double x) {
  const double x3 = x * x * x, x6 = x3 * x3;
  return x6 * (21.0 + x * (-60.0 + x * (67.5 + x * (-35.0 + 7.0 * x))));
}
inline double ramp2(double x) {
  const double x3 = x * x * x, x7 = x3 * x3 * x;
  return x7 * (3.0 + x * (-7.5 + x * (7.5 + x * (-3.5 + 7.0 / 11.0 * x))));
}
constexpr double kRamp2One = 3.0 / 22.0;

}  // namespace detail

// G(s): identity on [0, s_tail], ramped flat outside over gh (head side) and gt (tail side).
// Gint' = G, G' = Gd, Gint(0) = 0.
class FanProfile {
 public:
  FanProfile(double s_tail, double glue_head, double glue_tail)
      : st_(s_tail), gh_(glue_head), gt_(glue_tail) {
    if (!(s_tail > 0.0)) throw DomainError("fan tail must be positive");
    if (glue_head < 0.0 || glue_tail < 0.0) throw DomainError("glue width must be non-negative");
  }

  double s_tail() const { return st_; }
  double glue_head() const { return gh_; }
  double glue_tail() const { return gt_; }
  double G_min() const { return -0.5 * gh_; }
  double G_max() const { return st_ + 0.5 * gt_; }

  double G(double s) const {
    if (s <= -gh_) return -0.5 * gh_;
    if (s < 0.0) return gh_ * (detail::ramp1((s + gh_) / gh_) - 0.5);
    if (s <= st_) return s;
    if (s < st_ + gt_) {
      const double x = (s - st_) / gt_;
      return st_ + gt_ * (x - detail::ramp1(x));
    }
    return st_ + 0.5 * gt_;
  }

  double Gd(double s) const {
    if (s <= -gh_) return 0.0;
    if (s < 0.0) return detail::ramp((s + gh_) / gh_);
    if (s <= st_) return 1.0;
    if (s < st_ + gt_) return 1.0 - detail::ramp((s - st_) / gt_);
    return 0.0;
  }

  double Gint(double s) const {
    const double h2 = gh_ * gh_, t2 = gt_ * gt_;
    if (s <= -gh_) return h2 * (0.5 - detail::kRamp2One) - 0.5 * gh_ * (s + gh_);
    if (s < 0.0) return h2 * (detail::ramp2((s + gh_) / gh_) - detail::kRamp2One) - 0.5 * gh_ * s;
    if (s <= st_) return 0.5 * s * s;
    const double base = 0.5 * st_ * st_;
    if (s < st_ + gt_) {
      const double x = (s - st_) / gt_;
      return base + st_ * (s - st_) + t2 * (0.5 * x * x - detail::ramp2(x));
    }
    const double end = base + st_ * gt_ + t2 * (0.5 - detail::kRamp2One);
    return end + G_max() * (s - st_ - gt_);
  }

 private:
  double st_, gh_, gt_;
};

class RarefactionData {
 public:
  RarefactionData(const PolytropicGas& gas, double delta, const FanShape& shape,
                  const PerturbationSpec& spec)
      : gas_(gas), delta_(delta), shape_(shape), spec_(spec),
        prof_(shape.u_tail, shape.glue_head, shape.glue_tail) {
    if (!(delta > 0.0)) throw DomainError("delta must be positive");
    if (spec.epsilon < 0.0) throw DomainError("epsilon must be non-negative");
    if (!(shape.c0 > 0.0)) throw DomainError("c0 must be positive");
    if (!(spec.env_hi > spec.env_lo)) throw DomainError("empty perturbation envelope");
  }

  const PolytropicGas& gas() const { return gas_; }
  double delta() const { return delta_; }
  const FanShape& shape() const { return shape_; }
  const PerturbationSpec& spec() const { return spec_; }
  const FanProfile& profile() const { return prof_; }

  // right-state sound speed and its x2 derivative
  double c_right(double x2) const {
    double s = 0.0;
    for (const auto& m : spec_.modes) s += m.amp_c * std::cos(m.k2 * x2 + m.phase);
    return shape_.c0 * (1.0 + spec_.epsilon * s);
  }
  double c_right_d(double x2) const {
    double s = 0.0;
    for (const auto& m : spec_.modes) s -= m.amp_c * m.k2 * std::sin(m.k2 * x2 + m.phase);
    return shape_.c0 * spec_.epsilon * s;
  }
  double head(double x2) const { return shape_.v0 + c_right(x2); }

  // band coordinate at t = delta; zero on the fan head
  double u_init(double x1, double x2) const { return head(x2) - x1 / delta_; }

  // smallest sound speed anywhere in the data
  double min_sound_speed() const {
    double lo = 1e300;
    for (int k = 0; k < 4096; ++k) lo = std::min(lo, c_right(2.0 * std::numbers::pi * k / 4096));
    return lo - (gas_.gamma - 1.0) / (gas_.gamma + 1.0) * prof_.G_max();
  }

  // Smallest x1 interval holding the whole wave pattern up to t_star, plus margin.
  // The left state is supersonic outflow, so its frozen ghosts never feed back. The right
  // state is steady only when epsilon = 0; otherwise the right edge also clears the inward
  // acoustic signal from the frozen ghosts over the horizon.
  std::pair<double, double> domain_of_dependence(double t_star, double margin = 0.05) const {
    const double g = gas_.gamma;
    double hmin = 1e300, hmax = -1e300, cmax = 0.0;
    for (int k = 0; k < 4096; ++k) {
      const double c = c_right(2.0 * std::numbers::pi * k / 4096);
      hmin = std::min(hmin, shape_.v0 + c), hmax = std::max(hmax, shape_.v0 + c);
      cmax = std::max(cmax, c);
    }
    const double lo = (hmin - prof_.G_max()) * t_star - margin;
    double hi = (hmax - prof_.G_min()) * t_star + margin;
    if (spec_.epsilon > 0.0) {
      const double cR = cmax - (g - 1.0) / (g + 1.0) * prof_.G_min();
      const double vR = shape_.v0 - 2.0 / (g + 1.0) * prof_.G_min();
      hi += std::max(0.0, cR - vR) * (t_star - delta_);
    }
    return {lo, hi};
  }

  PrimitiveState state(double x1, double x2) const {
    const double g = gas_.gamma;
    const double s = u_init(x1, x2);
    const double G = prof_.G(s);
    double p1 = 0.0, p2 = 0.0;
    pert_gradient(x1, x2, p1, p2);
    PrimitiveState st;
    st.c = c_right(x2) - (g - 1.0) / (g + 1.0) * G;
    st.v1 = shape_.v0 - 2.0 / (g + 1.0) * G + p1;
    st.v2 = 2.0 * delta_ / (g + 1.0) * G * c_right_d(x2) + p2;
    return st;
  }

  // velocity potential of state(): v = grad phi
  double potential(double x1, double x2) const {
    const double g = gas_.gamma;
    return shape_.v0 * x1 + 2.0 * delta_ / (g + 1.0) * prof_.Gint(u_init(x1, x2)) + pert(x1, x2);
  }

  // epsilon part of the potential only (c0 perturbation plus modes)
  double potential_perturbation(double x1, double x2) const {
    const double g = gas_.gamma;
    const double s0 = shape_.v0 + shape_.c0 - x1 / delta_;
    return potential(x1, x2) - shape_.v0 * x1 - 2.0 * delta_ / (g + 1.0) * prof_.Gint(s0);
  }

 private:
  double q(double x1) const { return shape_.v0 + shape_.c0 - x1 / delta_; }

  void envelope(double qq, double& e, double& de) const {
    const double a = spec_.env_lo, b = spec_.env_hi;
    const double r = (2.0 * qq - a - b) / (b - a);
    if (std::abs(r) >= 1.0) {
      e = de = 0.0;
      return;
    }
    const double om = 1.0 - r * r;
    e = std::exp(1.0 - 1.0 / om);
    de = e * (-2.0 * r / (om * om)) * (2.0 / (b - a));
  }

  double pert(double x1, double x2) const {
    if (spec_.epsilon == 0.0) return 0.0;
    const double qq = q(x1);
    double e, de;
    envelope(qq, e, de);
    double s = 0.0;
    for (const auto& m : spec_.modes)
      s += m.amp_phi * e * std::cos(m.k1 * qq) * std::cos(m.k2 * x2 + m.phase);
    return spec_.epsilon * delta_ * delta_ * s;
  }

  void pert_gradient(double x1, double x2, double& p1, double& p2) const {
    p1 = p2 = 0.0;
    if (spec_.epsilon == 0.0) return;
    const double qq = q(x1);
    double e, de;
    envelope(qq, e, de);
    if (e == 0.0) return;
    const double scale = spec_.epsilon * delta_ * delta_;
    for (const auto& m : spec_.modes) {
      const double ck = std::cos(m.k1 * qq), sk = std::sin(m.k1 * qq);
      const double c2 = std::cos(m.k2 * x2 + m.phase), s2 = std::sin(m.k2 * x2 + m.phase);
      // dq/dx1 = -1/delta
      p1 += scale * m.amp_phi * (de * ck - e * m.k1 * sk) * c2 * (-1.0 / delta_);
      p2 -= scale * m.amp_phi * e * ck * m.k2 * s2;
    }
  }

  PolytropicGas gas_;
  double delta_;
  FanShape shape_;
  PerturbationSpec spec_;
  FanProfile prof_;
};

// Exact 1D evolution of the unperturbed data: a forward simple wave with w fixed.
// Characteristics x = x0 + (h - G(s(x0))) (t - delta) never cross for a rarefaction.
class SimpleWaveOracle {
 public:
  explicit SimpleWaveOracle(const RarefactionData& data) : data_(data) {
    if (data.spec().epsilon != 0.0)
      throw PreconditionError("simple-wave oracle requires unperturbed data");
  }

  PrimitiveState state(double x, double t) const {
    const double d = data_.delta();
    if (t < d) throw DomainError("oracle queried before t = delta");
    const double h = data_.head(0.0);
    const FanProfile& p = data_.profile();
    const double tau = t - d;
    auto map = [&](double x0) { return x0 + (h - p.G(h - x0 / d)) * tau; };
    // lambda ranges over [h - G_max, h - G_min]
    double lo = x - (h - p.G_min()) * tau - 1.0, hi = x - (h - p.G_max()) * tau + 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(x)); ++it) {
      const double mid = 0.5 * (lo + hi);
      if (map(mid) < x) lo = mid; else hi = mid;
    }
    const double x0 = 0.5 * (lo + hi);
    PrimitiveState s = data_.state(x0, 0.0);
    s.v2 = 0.0;
    return s;
  }

 private:
  const RarefactionData& data_;
};

}  // namespace rarewave
