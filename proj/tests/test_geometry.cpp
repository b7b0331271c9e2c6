#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "rarewave/geometry.hpp"
#include "rarewave/initial_data.hpp"

using namespace rarewave;

namespace {

const PolytropicGas kGas{2.0, 0.5};

using Field3 = std::function<double(double, double, double)>;

// smooth fields in (t, x1, x2), 2 pi periodic in x2
struct Manufactured {
  Field3 c = [](double t, double x, double y) {
    return 1.0 + 0.2 * std::sin(x + 0.3 * t) * std::cos(y) + 0.1 * t;
  };
  Field3 v1 = [](double t, double x, double y) {
    return 0.3 * std::cos(x - t) * std::sin(y) - 0.2 * x;
  };
  Field3 v2 = [](double t, double x, double y) {
    return 0.25 * std::sin(2.0 * x + t) * std::cos(2.0 * y) + 0.1;
  };
};

FieldPlanes planes_of(const Manufactured& m, const Grid& g, double t) {
  FieldPlanes p;
  const std::size_t n = g.size();
  p.c.resize(n), p.v1.resize(n), p.v2.resize(n), p.wbar.resize(n), p.w.resize(n), p.psi2.resize(n);
  const double a = 1.0 / (kGas.gamma - 1.0);
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) {
      const std::size_t k = g.at(i, j);
      const double x = g.x1(i), y = g.x2(j);
      p.c[k] = m.c(t, x, y), p.v1[k] = m.v1(t, x, y), p.v2[k] = m.v2(t, x, y);
      p.wbar[k] = a * p.c[k] + 0.5 * p.v1[k];
      p.w[k] = a * p.c[k] - 0.5 * p.v1[k];
      p.psi2[k] = -p.v2[k];
    }
  return p;
}

TimeSlice manufactured_slice(const Manufactured& m, const Grid& g, double t) {
  TimeSlice s;
  s.t = t;
  s.p = planes_of(m, g, t);
  s.fol.grid = g;
  s.fol.time = t;
  return s;
}

FlowField uniform(const Grid& g, double t, const PrimitiveState& s) {
  FlowField f(kGas, g, t);
  for (std::size_t k = 0; k < g.size(); ++k) f.set(k, s);
  return f;
}

// ε = 0 data evolved exactly
struct ExactFan {
  double delta = 0.05;
  FanShape shape;
  PerturbationSpec spec;
  RarefactionData data{kGas, delta, shape, spec};
  SimpleWaveOracle oracle{data};
  Grid grid{1024, 8, -1.6, 2.4};

  FlowField at(double t) const {
    FlowField f(kGas, grid, t);
    for (int i = 0; i < grid.n1; ++i) {
      const PrimitiveState s = oracle.state(grid.x1(i), t);
      for (int j = 0; j < grid.n2; ++j) f.set(grid.at(i, j), s);
    }
    return f;
  }
  Plane u0() const {
    return map_plane(grid, [&](std::size_t k) {
      const int i = static_cast<int>(k % grid.n1), j = static_cast<int>(k / grid.n1);
      return data.u_init(grid.x1(i), grid.x2(j));
    });
  }
};

// interior cells away from the x1 edges
double interior_max(const Grid& g, const Plane& f, int margin) {
  double r = 0.0;
  for (int j = 0; j < g.n2; ++j)
    for (int i = margin; i < g.n1 - margin; ++i) r = std::max(r, std::abs(f[g.at(i, j)]));
  return r;
}

}  // namespace

TEST(Geometry, LagrangeWeightsDifferentiateQuadratics) {
  const std::array<double, 3> tn{0.1, 0.25, 0.32};
  auto q = [](double t) { return 2.0 - 3.0 * t + 5.0 * t * t; };
  for (int e = 0; e < 3; ++e) {
    const auto w = lagrange_dt_weights(tn, e);
    const double d = w[0] * q(tn[0]) + w[1] * q(tn[1]) + w[2] * q(tn[2]);
    EXPECT_NEAR(d, -3.0 + 10.0 * tn[e], 1e-11);
  }
}

TEST(Geometry, PlaneWaveFoliationIsExact) {
  const Grid g(64, 16, -1.0, 1.0);
  const PrimitiveState s{1.0, 0.3, 0.2};
  const FlowField f0 = uniform(g, 0.0, s), f1 = uniform(g, 0.7, s);
  Plane u = map_plane(g, [&](std::size_t k) { return -g.x1(static_cast<int>(k % g.n1)); });
  LevelSetTracker ls(g, u, -10.0, 10.0);
  ls.advance(f0, f1);
  // u_t = (v1 + c) for grad u = (-1, 0)
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(ls.u()[k], u[k] + 1.3 * 0.7, 1e-12);
  const Foliation F = frame_fields(f1, ls.u());
  for (std::size_t k = 0; k < g.size(); ++k) {
    EXPECT_NEAR(F.kappa[k], 1.0, 1e-12);
    EXPECT_NEAR(F.mu[k], 1.0, 1e-12);
    EXPECT_NEAR(F.T1[k], -1.0, 1e-14);
    EXPECT_NEAR(F.X2[k], 1.0, 1e-14);
    EXPECT_NEAR(F.chi[k], 0.0, 1e-10);
    EXPECT_NEAR(F.zeta[k], 0.0, 1e-10);
    EXPECT_NEAR(F.eta[k], 0.0, 1e-10);
  }
}

TEST(Geometry, ObliquePlaneWaveTravelsAtSoundSpeed) {
  const Grid g(64, 16, -1.0, 1.0);
  const PrimitiveState s{0.8, 0.0, 0.0};
  Plane u = map_plane(g, [&](std::size_t k) {
    const int i = static_cast<int>(k % g.n1), j = static_cast<int>(k / g.n1);
    return -g.x1(i) + 0.0 * g.x2(j);
  });
  LevelSetTracker ls(g, u, -10.0, 10.0, 1);
  ls.advance(uniform(g, 0.0, s), uniform(g, 0.5, s));
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(ls.u()[k], u[k] + 0.8 * 0.5, 1e-12);
}

TEST(Geometry, FlatLevelSetIsDegenerate) {
  const Grid g(32, 8, -1.0, 1.0);
  EXPECT_THROW(LevelSetTracker(g, Plane(g.size(), 0.5), 0.0, 1.0), DegenerateFoliation);
  EXPECT_THROW(frame_fields(uniform(g, 0.0, {1.0, 0.0, 0.0}), Plane(g.size(), 0.5)),
               DegenerateFoliation);
}

TEST(Geometry, SecondFrameOfExactFan) {
  ExactFan ex;
  const double t = 0.5;
  const SecondFrame sf = second_frame(ex.at(t));
  EXPECT_EQ(sf.kapparing, t);
  // in the fan v1 + c = x1 / t, so z = 0 and y = 0
  const Grid& g = ex.grid;
  const double h = ex.data.head(0.0);
  for (int i = 0; i < g.n1; ++i) {
    const double s = h - g.x1(i) / t;
    if (s < 0.1 || s > 1.9) continue;
    EXPECT_NEAR(sf.z[g.at(i, 3)], 0.0, 1e-9);
    EXPECT_NEAR(sf.y[g.at(i, 3)], 0.0, 1e-14);
  }
}

TEST(Geometry, ExactFanFoliation) {
  ExactFan ex;
  std::vector<FlowField> snaps;
  for (double t = ex.delta; t < 1.0; t *= 1.01) snaps.push_back(ex.at(t));
  const auto fol = evolve_u(snaps, ex.u0(), -0.5, 2.5);
  double worst = 0.0;
  for (const auto& F : fol) {
    if (F.time < 2.0 * ex.delta) continue;
    const Mask band = band_mask(F.grid, F.u, 0.0, 1.5);
    for (std::size_t k = 0; k < F.u.size(); ++k)
      if (band[k]) worst = std::max(worst, std::abs(F.kappa[k] / F.time - 1.0));
    EXPECT_LE(masked_max_abs(F.T2, band), 1e-14);
    EXPECT_LE(masked_max_abs(F.chi, band), 1e-12);
    EXPECT_LE(masked_max_abs(F.zeta, band), 1e-12);
    EXPECT_LE(masked_max_abs(F.eta, band), 1e-12);
  }
  EXPECT_LE(worst, 0.01);
}

TEST(Geometry, StructureAndSignsOnExactFan) {
  ExactFan ex;
  const double h = 0.01;
  std::vector<FlowField> snaps;
  for (double t = ex.delta; t < 0.5 - h; t *= 1.01) snaps.push_back(ex.at(t));
  for (double t : {0.5 - h, 0.5, 0.5 + h}) snaps.push_back(ex.at(t));
  const auto fol = evolve_u(snaps, ex.u0(), -0.5, 2.5);
  const std::size_t b = snaps.size() - 3;
  std::array<TimeSlice, 3> sl;
  for (int q = 0; q < 3; ++q) sl[q] = {snaps[b + q].time, field_planes(snaps[b + q]), fol[b + q]};
  const TimeStencil st{{&sl[0], &sl[1], &sl[2]}, 1};
  const Mask band = band_mask(st.grid(), st.at().fol.u, 0.0, 1.5);
  const StructureReport r = structure_residuals(st, kGas);
  // m' = 1 and e' = 0 in the fan; tolerances are the three-level time stencil error
  EXPECT_NEAR(masked_min(r.mprime, band), 1.0, 1e-2);
  EXPECT_NEAR(masked_max(r.mprime, band), 1.0, 1e-2);
  EXPECT_LE(masked_max_abs(r.Lkappa_res, band), 0.02);
  EXPECT_LE(masked_max_abs(r.Lkappa_alt, band), 0.02);
  EXPECT_LE(masked_max_abs(r.LT1_res, band), 1e-12);
  const SignMonitors sm = sign_monitors(st);
  // L(mu) = c, T_r wbar = -2/3, Lbar_r wbar = -4/3
  for (std::size_t k = 0; k < band.size(); ++k) {
    if (!band[k]) continue;
    EXPECT_NEAR(sm.Lmu[k], sl[1].p.c[k], 0.02);
    EXPECT_NEAR(sm.Trw[k], -2.0 / 3.0, 1e-6);
    EXPECT_NEAR(sm.Lbar_r_w[k], -4.0 / 3.0, 1e-3);
  }
  EXPECT_LE(masked_max_abs(mu_crosscheck(st), band), 0.01);
}

// finite-difference Lie derivatives of the acoustical metric, independent of the table
namespace {

using Vec = std::array<double, 3>;
using VField = std::function<Vec(const Vec&)>;

struct Metric {
  Manufactured m;
  double g(const Vec& p, const Vec& A, const Vec& B) const {
    const double c = m.c(p[0], p[1], p[2]);
    const double v1 = m.v1(p[0], p[1], p[2]), v2 = m.v2(p[0], p[1], p[2]);
    return -c * c * A[0] * B[0] + (A[1] - v1 * A[0]) * (B[1] - v1 * B[0]) +
           (A[2] - v2 * A[0]) * (B[2] - v2 * B[0]);
  }
};

Vec shift(const Vec& p, const Vec& d, double s) { return {p[0] + s * d[0], p[1] + s * d[1], p[2] + s * d[2]}; }

// [Z, A] at p
Vec bracket(const VField& Z, const VField& A, const Vec& p, double h) {
  const Vec z = Z(p), a = A(p);
  const Vec Ap = A(shift(p, z, h)), Am = A(shift(p, z, -h));
  const Vec Zp = Z(shift(p, a, h)), Zm = Z(shift(p, a, -h));
  Vec r;
  for (int q = 0; q < 3; ++q) r[q] = (Ap[q] - Am[q]) / (2 * h) - (Zp[q] - Zm[q]) / (2 * h);
  return r;
}

double deformation(const Metric& M, const VField& Z, const VField& A, const VField& B, const Vec& p) {
  const double h = 1e-5;
  const Vec z = Z(p);
  const Vec pp = shift(p, z, h), pm = shift(p, z, -h);
  const double dg = (M.g(pp, A(pp), B(pp)) - M.g(pm, A(pm), B(pm))) / (2 * h);
  return dg - M.g(p, bracket(Z, A, p, h), B(p)) - M.g(p, A(p), bracket(Z, B, p, h));
}

}  // namespace

TEST(Geometry, DeformationTableMatchesLieDerivative) {
  Metric M;
  const Manufactured& m = M.m;
  const VField Xr = [](const Vec&) { return Vec{0, 0, 1}; };
  const VField Tr = [](const Vec& p) { return Vec{0, -p[0], 0}; };
  const VField Lr = [&](const Vec& p) {
    return Vec{1, m.v1(p[0], p[1], p[2]) + m.c(p[0], p[1], p[2]), m.v2(p[0], p[1], p[2])};
  };
  const VField Lb = [&](const Vec& p) {
    const Vec l = Lr(p);
    const double s = p[0] / m.c(p[0], p[1], p[2]);
    return Vec{s * l[0], s * l[1] - 2 * p[0], s * l[2]};
  };
  const Grid g(512, 256, -1.0, 1.0);
  const double t = 0.6;
  const FieldPlanes P = planes_of(m, g, t);
  const SecondFrame sf = second_frame(P, g, t);
  for (int which = 0; which < 2; ++which) {
    const DeformationComponents d = deformation_components(sf, P, g, which);
    const VField& Z = which == 0 ? Xr : Tr;
    for (auto [i, j] : {std::pair{100, 17}, std::pair{256, 128}, std::pair{400, 201}}) {
      const Vec p{t, g.x1(i), g.x2(j)};
      const std::size_t k = g.at(i, j);
      const double tol = 2e-4;
      EXPECT_NEAR(d.pi_LL[k], deformation(M, Z, Lr, Lr, p), tol) << which;
      EXPECT_NEAR(d.pi_LbLb[k], deformation(M, Z, Lb, Lb, p), tol) << which;
      EXPECT_NEAR(d.pi_LLb[k], deformation(M, Z, Lr, Lb, p), tol) << which;
      EXPECT_NEAR(d.pi_LX[k], deformation(M, Z, Lr, Xr, p), tol) << which;
      EXPECT_NEAR(d.pi_LbX[k], deformation(M, Z, Lb, Xr, p), tol) << which;
      EXPECT_NEAR(d.pi_XX[k], deformation(M, Z, Xr, Xr, p), tol) << which;
    }
  }
}

TEST(Geometry, CommutationResidualsConvergeOnManufacturedFields) {
  Manufactured m;
  double prev_z = 0.0, prev_y = 0.0;
  for (int n : {64, 128, 256}) {
    const Grid g(n, n, -1.0, 1.0);
    const double t = 0.6, h = 0.5 * g.dx1;
    std::array<TimeSlice, 3> sl{manufactured_slice(m, g, t - h), manufactured_slice(m, g, t),
                                manufactured_slice(m, g, t + h)};
    const TimeStencil st{{&sl[0], &sl[1], &sl[2]}, 1};
    const SecondFrame sf = second_frame(sl[1].p, g, t);
    // z identity is kinematic
    const double rz = interior_max(g, commutation_residual_z(st, sf), 3);
    // y identity holds up to -X_r of the transport defect L_r wbar - 1/2 c X_r psi2
    Plane Ry = commutation_residual_y(st, sf);
    const Plane Lw = st.Lring([](const TimeSlice& s) -> const Plane& { return s.p.wbar; });
    Plane defect(g.size());
    const Plane Xpsi = diff2(sl[1].p.psi2, g);
    for (std::size_t k = 0; k < g.size(); ++k) defect[k] = Lw[k] - 0.5 * sl[1].p.c[k] * Xpsi[k];
    const Plane Xdef = diff2(defect, g);
    for (std::size_t k = 0; k < g.size(); ++k) Ry[k] += Xdef[k];
    const double ry = interior_max(g, Ry, 3);
    if (prev_z > 0.0) {
      EXPECT_GE(prev_z / rz, 3.0) << n;
      EXPECT_GE(prev_y / ry, 3.0) << n;
    }
    prev_z = rz, prev_y = ry;
  }
  EXPECT_LE(prev_z, 1e-3);
  EXPECT_LE(prev_y, 1e-3);
}

TEST(Geometry, BandMaskSkipsEdges) {
  const Grid g(16, 8, 0.0, 1.0);
  const Mask m = band_mask(g, Plane(g.size(), 0.5), 0.0, 1.0);
  for (int j = 0; j < g.n2; ++j) {
    EXPECT_FALSE(m[g.at(0, j)]);
    EXPECT_FALSE(m[g.at(1, j)]);
    EXPECT_TRUE(m[g.at(2, j)]);
    EXPECT_FALSE(m[g.at(15, j)]);
  }
}
