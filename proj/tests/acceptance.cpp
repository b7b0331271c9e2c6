// Acceptance checks: one PASS/FAIL line per criterion.
// Default exit status is nonzero on any FAIL. With --report-only the exit status is 0 once
// every criterion has been evaluated, so ctest records the run without hiding the verdicts,
// which are written to the results file.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rarewave/harness.hpp"

using namespace rarewave;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, bool pass, const std::string& detail) {
  verdicts.push_back({id, pass, detail});
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... a) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double geo_max(const RunResult& r, double t0, double GeometryRow::* col) {
  double m = -1e300;
  for (const auto& g : r.geometry)
    if (g.t >= t0 * (1.0 - 1e-12)) m = std::max(m, g.*col);
  return m;
}

double geo_min(const RunResult& r, double t0, double GeometryRow::* col) {
  double m = 1e300;
  for (const auto& g : r.geometry)
    if (g.t >= t0 * (1.0 - 1e-12)) m = std::min(m, g.*col);
  return m;
}

// ---------------------------------------------------------------------------
// 1: centered fan against the closed form, in long double

void criterion_1() {
  const auto t0 = Clock::now();
  const PolytropicGas gas(2.0, 0.5);
  const double v0 = 0.0, c0 = 1.0, t = 0.7;
  const CenteredFan fan = centered_fan(gas, v0, c0);
  const long double g = gas.gamma;
  const long double k = ((g - 1) * v0 - 2 * c0) / (g + 1);
  const long double w_head = c0 / (g - 1) - v0 / 2.0L;
  const double lo = fan.vacuum_slope() * t, hi = fan.head_slope() * t;
  double err = 0.0, wdev = 0.0;
  int inside = 0;
  const int n = 1000;
  for (int q = 0; q < n; ++q) {
    // strictly inside the fan, end points excluded
    const double x = lo + (hi - lo) * (q + 0.5) / n;
    const PrimitiveState s = fan(x, t);
    const long double xi = static_cast<long double>(x) / t;
    const long double v = 2 * xi / (g + 1) + k, c = (g - 1) * xi / (g + 1) - k;
    err = std::max(err, static_cast<double>(std::max(std::fabs(s.v1 - v), std::fabs(s.c - c))));
    wdev = std::max(wdev, static_cast<double>(std::fabs(s.c / (g - 1) - s.v1 / 2.0L - w_head)));
    ++inside;
  }
  const double dt = seconds_since(t0);
  report(1, err <= 1e-14 && wdev <= 1e-12 && dt < 1.0,
         fmt("%d points: max closed-form error %.2e (<= 1e-14), w spread %.2e (<= 1e-12), %.3f s (< 1 s)", inside,
             err, wdev, dt));
}

// ---------------------------------------------------------------------------
// 2: random Riemann problems

double state_gap(const PrimitiveState& a, const PrimitiveState& b) {
  return std::max(std::abs(a.c - b.c), std::abs(a.v1 - b.v1));
}

void criterion_2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2026);
  std::uniform_real_distribution<double> G(1.05, 2.95), V(-4.0, 4.0), C(0.05, 2.0);
  int shocks = 0, rars = 0, vacua = 0, bad_jump = 0, bad_lax = 0, bad_edge = 0, bad_vac = 0, errors = 0;
  double worst_jump = 0.0, worst_edge = 0.0;
  for (int q = 0; q < 1000; ++q) {
    RiemannProblem1D p;
    p.gas = PolytropicGas(G(rng), 0.5);
    p.left = {C(rng), V(rng), 0.0};
    p.right = {C(rng), V(rng), 0.0};
    const double g = p.gas.gamma;
    const bool vac_expected = (p.left.c / (g - 1.0) + 0.5 * p.left.v1) + (p.right.c / (g - 1.0) - 0.5 * p.right.v1) < 0.0;
    try {
      const WaveFan f = solve_riemann(p);
      if (f.vacuum_middle != vac_expected) ++bad_vac;
      vacua += f.vacuum_middle;
      auto shock = [&](const PrimitiveState& l, const PrimitiveState& r, int family) {
        ++shocks;
        const double scale = 1.0 + l.v1 * l.v1 + r.v1 * r.v1 + l.c * l.c + r.c * r.c;
        const double res = std::abs(shock_jump_residual(p.gas, l, r)) / scale;
        worst_jump = std::max(worst_jump, res);
        if (res > 1e-10) ++bad_jump;
        if (!lax_admissible(p.gas, l, r, family)) ++bad_lax;
      };
      auto edge = [&](double xi, const PrimitiveState& expect) {
        const double d = state_gap(evaluate_fan(f, xi), expect);
        worst_edge = std::max(worst_edge, d);
        if (d > 1e-10) ++bad_edge;
      };
      if (f.wave1.kind == WaveKind::shock) {
        shock(f.left, f.middle, 1);
      } else if (!f.wave1.degenerate()) {
        ++rars;
        edge(f.wave1.lo, f.left);
        if (f.vacuum_middle) {
          const double c = evaluate_fan(f, f.wave1.hi).c;
          worst_edge = std::max(worst_edge, c);
          if (c > 1e-10) ++bad_edge;
        } else {
          edge(f.wave1.hi, f.middle);
        }
      }
      if (f.wave2.kind == WaveKind::shock) {
        shock(f.middle, f.right, 2);
      } else if (!f.wave2.degenerate()) {
        ++rars;
        edge(f.wave2.hi, f.right);
        if (f.vacuum_middle) {
          const double c = evaluate_fan(f, f.wave2.lo).c;
          worst_edge = std::max(worst_edge, c);
          if (c > 1e-10) ++bad_edge;
        } else {
          edge(f.wave2.lo, f.middle);
        }
      }
    } catch (const std::exception& e) {
      ++errors;
      std::fprintf(stderr, "riemann problem %d: %s\n", q, e.what());
    }
  }
  const double dt = seconds_since(t0);
  const bool ok = !bad_jump && !bad_lax && !bad_edge && !bad_vac && !errors && dt < 10.0;
  report(2, ok,
         fmt("1000 problems (%d shocks, %d rarefactions, %d vacuum): worst jump residual %.2e (<= 1e-10), "
             "%d non-Lax, worst edge gap %.2e (<= 1e-10), %d vacuum mismatches, %d errors, %.3f s (< 10 s)",
             shocks, rars, vacua, worst_jump, bad_lax, worst_edge, bad_vac, errors, dt));
}

// ---------------------------------------------------------------------------
// 10: Gronwall verifier on saturated and mutated instances

GronwallInstance random_saturated(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double delta = 0.02 + 0.08 * U(rng), ustar = 0.5 + 2.0 * U(rng);
  const double A = 0.1 + 10.0 * U(rng), B = 0.05 + 2.0 * U(rng);
  const double C = (0.05 + 0.95 * U(rng)) * std::exp(-B * ustar);
  const int nt = 20 + static_cast<int>(40 * U(rng)), nu = 8 + static_cast<int>(30 * U(rng));
  std::vector<double> t(nt), u(nu);
  for (int i = 0; i < nt; ++i) t[i] = delta * std::pow(1.0 / delta, static_cast<double>(i) / (nt - 1));
  for (int j = 0; j < nu; ++j) u[j] = ustar * j / (nu - 1);
  std::vector<double> th(nt * nu);
  for (double& x : th) x = 0.05 + 0.9 * U(rng);
  return saturated_gronwall_instance(A, B, C, t, u, th);
}

void criterion_10() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  int passed = 0, flagged = 0, kinds[3] = {0, 0, 0};
  double worst = 0.0;
  std::vector<GronwallInstance> pool;
  for (int q = 0; q < 1000; ++q) {
    GronwallInstance g = random_saturated(rng);
    try {
      const GronwallVerdict v = gronwall_verify(g);
      worst = std::max(worst, v.max_ratio);
      passed += v.pass && v.max_ratio <= 1.0;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "saturated instance %d rejected: %s\n", q, e.what());
    }
    if (q % 10 == 0) pool.push_back(std::move(g));
  }
  for (std::size_t q = 0; q < pool.size(); ++q) {
    GronwallInstance g = pool[q];
    std::uniform_int_distribution<std::size_t> I(0, g.t.size() - 1), J(0, g.u.size() - 1);
    const std::size_t k = g.at(I(rng), J(rng));
    const int kind = static_cast<int>(q % 3);
    ++kinds[kind];
    if (kind == 0) g.E[k] *= 1.0 + U(rng);              // raise E past the hypothesis
    else if (kind == 1) g.F[k] = g.F[k] * (1.0 + U(rng)) + g.E[k];  // raise F
    else g.C = (1.01 + U(rng)) * std::exp(-g.B * g.u.back());  // break e^{B u*} C <= 1
    try {
      gronwall_verify(g);
    } catch (const PreconditionError& e) {
      flagged += std::string(e.what()).find("hypothesis") != std::string::npos;
    }
  }
  const double dt = seconds_since(t0);
  report(10, passed == 1000 && flagged == static_cast<int>(pool.size()) && dt < 5.0,
         fmt("%d/1000 saturated instances pass, worst ratio %.6f (<= 1); %d/%zu mutants flagged at the hypothesis "
             "(E %d, F %d, C %d); %.3f s (< 5 s)",
             passed, worst, flagged, pool.size(), kinds[0], kinds[1], kinds[2], dt));
}

// ---------------------------------------------------------------------------
// simulation criteria

const StudyMember* member(const StudyReport& rep, double param) {
  for (const auto& m : rep.members)
    if (m.param == param) return &m;
  return nullptr;
}

std::string failed_members(const StudyReport& rep) {
  std::string s;
  for (const auto& m : rep.members)
    if (!m.result.complete()) s += " " + m.label + ": " + m.result.error;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rarewave acceptance checks"};
  std::string out = "acceptance_out", results;
  bool report_only = false, quick = false;
  app.add_option("-o,--output", out, "directory for the simulation runs");
  app.add_option("--results", results, "also write the PASS/FAIL lines to this file");
  app.add_flag("--report-only", report_only, "exit 0 once every criterion has been evaluated");
  app.add_flag("--quick", quick, "simulation criteria at 320/640 instead of 512/1024 (smoke test, not acceptance)");
  CLI11_PARSE(app, argc, argv);

  criterion_1();
  criterion_2();
  criterion_10();

  const int fine = quick ? 640 : 1024, coarse = fine / 2;
  const fs::path dir(out);
  RunConfig base;
  base.n1 = fine;
  base.n2 = fine / 8;
  base.analysis.snapshots = "none";

  // eps = 0 convergence pair on the default domain
  RunConfig zero = base;
  zero.epsilon = 0.0;
  std::fprintf(stderr, "eps = 0 runs at %d and %d\n", coarse, fine);
  const StudyReport conv0 = run_study({StudyKind::convergence, {double(coarse), double(fine)}, 1}, zero,
                                      dir / "convergence_eps0", true, &std::cerr);
  const StudyMember* z1 = member(conv0, fine);
  const StudyMember* z0 = member(conv0, coarse);
  const bool zero_ok = z0 && z1 && z0->result.complete() && z1->result.complete();

  // epsilon pair at the fine grid, sharing the eps = 0.01 domain
  std::fprintf(stderr, "eps = 0.01, 0.005 runs at %d\n", fine);
  const StudyReport epsr =
      run_study({StudyKind::epsilon_scaling, {0.01, 0.005}, 1}, base, dir / "epsilon_scaling", true, &std::cerr);
  const StudyMember* e1 = member(epsr, 0.01);
  const StudyMember* e2 = member(epsr, 0.005);
  const bool eps_ok = e1 && e2 && e1->result.complete() && e2->result.complete();

  // eps = 0.01 on the coarse grid and the same domain, for the residual ratios
  RunResult e1c;
  if (eps_ok) {
    RunConfig c = e1->config;
    c.n1 = coarse;
    c.n2 = coarse / 8;
    c.analysis.energies = false;
    std::fprintf(stderr, "eps = 0.01 run at %d\n", coarse);
    try {
      e1c = run_or_reuse(c, dir / "eps0.01_coarse", true);
    } catch (const std::exception& e) {
      e1c.status = "failed", e1c.error = e.what();
    }
  }

  // 3: eps = 0 fan
  if (!zero_ok) {
    report(3, false, "eps = 0 runs failed:" + failed_members(conv0));
    report(4, false, "eps = 0 runs failed");
  } else {
    const RunResult& a = z0->result;
    const RunResult& b = z1->result;
    const double ratio = a.l1_error / b.l1_error;
    report(3, b.x2_variation <= 1e-12 && ratio >= 1.6 && ratio <= 2.4 && b.wall_seconds < 300.0,
           fmt("%dx%d to t = %g: x2 variation %.2e (<= 1e-12), L1 error %.4e -> %.4e ratio %.3f (in [1.6, 2.4]), "
               "%.1f s (< 300 s)",
               b.n1, b.n2, b.t_star, b.x2_variation, a.l1_error, b.l1_error, ratio, b.wall_seconds));
    const double t2 = 2.0 * b.delta;
    const double k = geo_max(b, t2, &GeometryRow::kappa_t), T1 = geo_max(b, t2, &GeometryRow::T1p),
                 T2 = geo_max(b, t2, &GeometryRow::T2), chi = geo_max(b, t2, &GeometryRow::chi),
                 zeta = geo_max(b, t2, &GeometryRow::zeta), eta = geo_max(b, t2, &GeometryRow::eta);
    report(4, k <= 0.05 && T1 <= 0.05 && T2 <= 0.05 && chi <= 0.05 && zeta <= 0.05 && eta <= 0.05,
           fmt("eps = 0 at %d, t in [%g, %g]: max|kappa/t-1| %.4f, max|That1+1| %.2e, max|That2| %.2e, "
               "max|chi| %.2e, max|zeta| %.2e, max|eta| %.2e (all <= 0.05)",
               b.n1, t2, b.t_star, k, T1, T2, chi, zeta, eta));
  }

  // 5, 6, 7, 9: epsilon pair
  if (!eps_ok) {
    const std::string why = "eps runs failed:" + failed_members(epsr);
    for (int id : {5, 6, 7, 9}) report(id, false, why);
  } else {
    std::string d;
    bool ok = true;
    for (const auto& m : epsr.metrics) {
      if (m.name.rfind("max |yring|", 0) == 0) continue;
      if (m.name.find("predicate") != std::string::npos) continue;
      d += fmt("%s %.3f [%g, %g]; ", m.name.c_str(), m.ratio, m.lo, m.hi);
      ok = ok && m.windowed && m.pass;
    }
    const double wall = e1->result.wall_seconds + e2->result.wall_seconds;
    report(5, ok && wall < 900.0, d + fmt("runtime %.1f s (< 900 s)", wall));

    d.clear();
    ok = true;
    for (const StudyMember* m : {e1, e2})
      for (const auto& f : t_slope_fits(m->result, m->label)) {
        d += fmt("%s %.3f; ", f.name.c_str(), f.slope);
        ok = ok && f.pass;
      }
    report(6, ok, d + "window [1.7, 2.3]");

    d.clear();
    ok = true;
    for (const StudyMember* m : {e1, e2}) {
      const RunResult& r = m->result;
      const double t2 = 2.0 * r.delta;
      const double lmu = geo_min(r, t2, &GeometryRow::Lmu_min), trw = geo_max(r, t2, &GeometryRow::Trw_max),
                   lbw = geo_max(r, t2, &GeometryRow::Lbar_r_w_max);
      ok = ok && lmu > 0.0 && trw < -0.4 && lbw < -0.4;
      d += fmt("%s: min L(mu) %.4f, max Tring(wbar) %.4f, max Lbar_ring(wbar) %.4f; ", m->label.c_str(), lmu, trw,
               lbw);
    }
    report(7, ok, d + "need > 0, < -0.4, < -0.4");

    d.clear();
    ok = true;
    for (const StudyMember* m : {e1, e2}) {
      double lo = 1e300, hi = 0.0;
      std::string vals;
      for (double t : {0.25, 0.5, 1.0}) {
        const GeometryRow* g = m->result.geometry_at(t);
        if (!g) {
          ok = false;
          continue;
        }
        lo = std::min(lo, g->yring), hi = std::max(hi, g->yring);
        vals += fmt(" %.3e", g->yring);
      }
      const double spread = hi / lo;
      ok = ok && spread < 2.0;
      d += fmt("%s max|yring| at t = 0.25, 0.5, 1:%s (spread %.3f < 2); ", m->label.c_str(), vals.c_str(), spread);
    }
    for (const auto& m : epsr.metrics)
      if (m.name.rfind("max |yring|", 0) == 0) {
        ok = ok && m.pass;
        d += fmt("%s ratio %.3f [1.6, 2.4]; ", m.name.c_str(), m.ratio);
      }
    report(9, ok, d);
  }

  // 8, 11: residual convergence at eps = 0.01 and the eps = 0 floor, at t*
  if (!eps_ok || !e1c.complete() || !zero_ok) {
    const std::string why = "runs failed: " + e1c.error + failed_members(conv0) + failed_members(epsr);
    report(8, false, why);
    report(11, false, why);
  } else {
    const GeometryRow* ga = e1c.geometry_at(e1c.t_star);
    const GeometryRow* gb = e1->result.geometry_at(e1->result.t_star);
    const GeometryRow* za = z0->result.geometry_at(z0->result.t_star);
    const GeometryRow* zb = z1->result.geometry_at(z1->result.t_star);
    // floor: at eps = 0 a residual is discretization error only when it vanishes to round-off
    // or shrinks at least first order under refinement
    auto floor_ok = [](double a, double b) { return (a <= 1e-12 && b <= 1e-12) || (b > 0.0 && a / b >= 1.5); };
    const double ry = ga->Ry / gb->Ry, rz = ga->Rz / gb->Rz;
    const bool ok8 = ry >= 1.5 && rz >= 1.5 && floor_ok(za->Ry, zb->Ry) && floor_ok(za->Rz, zb->Rz);
    report(8, ok8,
           fmt("eps = 0.01 at t* = %g, %d -> %d: R_y %.3e -> %.3e ratio %.3f, R_z %.3e -> %.3e ratio %.3f (>= 1.5); "
               "eps = 0: R_y %.2e -> %.2e, R_z %.2e -> %.2e (round-off or ratio >= 1.5)",
               gb->t, e1c.n1, e1->result.n1, ga->Ry, gb->Ry, ry, ga->Rz, gb->Rz, rz, za->Ry, zb->Ry, za->Rz, zb->Rz));

    const double rk = ga->Lkappa / gb->Lkappa, r1 = ga->LT1 / gb->LT1, r2 = ga->LT2 / gb->LT2;
    const RunResult& zf = z1->result;
    const double unit = geo_max(zf, 2.0 * zf.delta, &GeometryRow::Lkappa_unit);
    const double mdev = geo_max(zf, 2.0 * zf.delta, &GeometryRow::mprime_dev);
    report(11, rk >= 1.5 && r1 >= 1.5 && r2 >= 1.5 && unit <= 0.05,
           fmt("eps = 0.01 at t*, %d -> %d: L kappa - m' - e' kappa %.3e -> %.3e ratio %.3f, L That1 %.3e -> %.3e "
               "ratio %.3f, L That2 %.3e -> %.3e ratio %.3f (>= 1.5); eps = 0 at %d over [2 delta, t*]: "
               "max|1 - m' - e' kappa| %.4f (<= 0.05), max|m' - 1| %.4f",
               e1c.n1, e1->result.n1, ga->Lkappa, gb->Lkappa, rk, ga->LT1, gb->LT1, r1, ga->LT2, gb->LT2, r2, zf.n1,
               unit, mdev));
  }

  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  int failed = 0;
  std::ostringstream os;
  if (quick) os << "# quick mode: simulation criteria at " << coarse << "/" << fine << ", not the acceptance grid\n";
  for (const auto& v : verdicts) {
    os << "criterion " << v.id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << "\n";
    failed += !v.pass;
  }
  os << "summary: " << verdicts.size() - failed << " PASS, " << failed << " FAIL\n";
  std::printf("summary: %zu PASS, %d FAIL\n", verdicts.size() - failed, failed);
  if (!results.empty()) std::ofstream(results) << os.str();
  if (verdicts.size() != 11) return 1;
  return report_only ? 0 : (failed ? 1 : 0);
}
