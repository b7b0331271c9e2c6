// rarewave command line: run, study, riemann1d, verify-gronwall.
// Exit codes: 0 pass, 1 analysis failure, 2 configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "rarewave/harness.hpp"

using namespace rarewave;

namespace {

constexpr int kPass = 0, kFail = 1, kConfig = 2;

PrimitiveState parse_state(const std::string& s, const char* which) {
  const auto parts = detail::split(s, ',');
  if (parts.size() != 2) throw ConfigError(std::string(which) + ": expected v,c");
  const double v = detail::to_double(parts[0], which, 0), c = detail::to_double(parts[1], which, 0);
  return {c, v, 0.0};
}

void print_run(const RunResult& r, const fs::path& dir) {
  std::printf("run %s: %s%s  (%.1f s)\n", dir.string().c_str(), r.status.c_str(), r.reused ? " (reused)" : "",
              r.wall_seconds);
  if (!r.complete()) {
    std::printf("  error: %s\n", r.error.c_str());
    return;
  }
  std::printf("  eps = %g  grid %d x %d  x1 in [%.4f, %.4f]\n", r.epsilon, r.n1, r.n2, r.x1_min, r.x1_max);
  std::printf("  data predicates (cap %g): %s\n", r.predicates.cap, r.predicates.all_pass() ? "pass" : "FAIL");
  for (const auto& p : r.predicates.items)
    std::printf("    %-45s constant %.3e %s\n", p.name.c_str(), p.constant, p.pass ? "" : "FAIL");
  if (const GeometryRow* g = r.geometry_at(r.t_star))
    std::printf("  t* = %g: max|kappa/t-1| %.3e  max|That1+1| %.3e  max|That2| %.3e  max|yring| %.3e\n", r.t_star,
                g->kappa_t, g->T1p, g->T2, g->yring);
  if (r.l1_error >= 0.0) std::printf("  L1 error vs exact simple wave at t*: %.6e\n", r.l1_error);
  if (r.has_gronwall)
    std::printf("  Gronwall fit: A = %.3e  B = %.3e  C = %.3e  (%s)\n", r.gronwall.A_hyp, r.gronwall.B, r.gronwall.C,
                r.gronwall.note.c_str());
}

int cmd_run(const std::string& cfg_path, const std::string& out, bool force) {
  const RunConfig cfg = load_config(cfg_path);
  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) : fs::path(out);
#ifdef _OPENMP
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
  StudyReport rep;
  rep.kind = StudyKind::single;
  rep.members.push_back({"run", 0.0, cfg, run_or_reuse(cfg, dir, force)});
  const RunResult& r = rep.members.front().result;
  print_run(r, dir);
  if (r.complete()) {
    const auto files = emit_plots(rep, dir / "plots");
    std::printf("  %zu plot data files in %s\n", files.size(), (dir / "plots").string().c_str());
  }
  return r.pass() ? kPass : kFail;
}

int cmd_study(const std::string& spec_path, const std::string& cfg_path, const std::string& out, int workers,
              bool force) {
  std::ifstream is(spec_path);
  if (!is) throw ConfigError("cannot read study spec " + spec_path);
  std::stringstream ss;
  ss << is.rdbuf();
  StudySpec spec = parse_study(ss.str());
  if (workers > 0) spec.workers = workers;
  const RunConfig cfg = load_config(cfg_path);
  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) / name(spec.kind) : fs::path(out);
  const StudyReport rep = run_study(spec, cfg, dir, force, &std::cerr);
  write_study_outputs(rep, dir);
  const auto files = emit_plots(rep, dir / "plots");
  std::printf("study %s in %s: %s\n", name(rep.kind), dir.string().c_str(), rep.pass() ? "pass" : "FAIL");
  for (const auto& m : rep.members)
    std::printf("  %-16s %s%s\n", m.label.c_str(), m.result.status.c_str(),
                m.result.error.empty() ? "" : (": " + m.result.error).c_str());
  for (const auto& m : rep.metrics) {
    std::printf("  %-40s %-22s ratio %.4g", m.name.c_str(), m.members.c_str(), m.ratio);
    if (m.windowed) std::printf("  window [%g, %g] %s", m.lo, m.hi, m.pass ? "pass" : "FAIL");
    std::printf("\n");
  }
  for (const auto& f : rep.fits) {
    std::printf("  fit %-36s slope %.4f  R^2 %.4f", f.name.c_str(), f.slope, f.r2);
    if (f.windowed) std::printf("  window [%g, %g] %s", f.lo, f.hi, f.pass ? "pass" : "FAIL");
    std::printf("\n");
  }
  std::printf("  %zu plot data files in %s\n", files.size(), (dir / "plots").string().c_str());
  return rep.pass() ? kPass : kFail;
}

int cmd_riemann(const std::string& left, const std::string& right, double gamma, double k0) {
  RiemannProblem1D p;
  try {
    p.gas = PolytropicGas(gamma, k0);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  p.left = parse_state(left, "--left");
  p.right = parse_state(right, "--right");
  WaveFan fan;
  try {
    fan = solve_riemann(p);
  } catch (const std::logic_error& e) {
    throw ConfigError(e.what());
  }
  std::cout << fan_json(fan).dump(2) << "\n";
  return kPass;
}

int cmd_gronwall(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  const GronwallInstance g = gronwall_from_json(j);
  try {
    detail::check_gronwall_shape(g);
  } catch (const PreconditionError& e) {
    throw ConfigError(e.what());
  }
  json out;
  try {
    const GronwallVerdict v = gronwall_verify(g);
    out = {{"stage", "conclusion"}, {"pass", v.pass}, {"max_ratio", v.max_ratio}, {"slack", v.slack},
           {"worst_t", g.t[v.worst_t]}, {"worst_u", g.u[v.worst_u]}};
  } catch (const PreconditionError& e) {
    out = {{"stage", "hypothesis"}, {"pass", false}, {"message", e.what()}};
  }
  std::cout << out.dump(2) << "\n";
  return out["pass"].get<bool>() ? kPass : kFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rarewave: numerical lab for perturbed 2D rarefaction waves"};
  app.require_subcommand(1);

  std::string cfg_path, spec_path, out, left, right, inst;
  bool force = false;
  int workers = 0;
  double gamma = 2.0, k0 = 0.5;

  auto* run = app.add_subcommand("run", "run one configuration and its analyses");
  run->add_option("config", cfg_path, "key=value config file")->required();
  run->add_option("-o,--output", out, "run directory (default: [output] dir)");
  run->add_flag("--force", force, "rerun even if a completed run with the same hash exists");

  auto* study = app.add_subcommand("study", "run a convergence, epsilon or delta study");
  study->add_option("spec", spec_path, "study spec file (kind, ladder, workers)")->required();
  study->add_option("config", cfg_path, "base config file")->required();
  study->add_option("-o,--output", out, "study directory (default: [output] dir / kind)");
  study->add_option("-w,--workers", workers, "concurrent members (overrides the study file)")->check(CLI::Range(1, 256));
  study->add_flag("--force", force, "rerun completed members");

  auto* rie = app.add_subcommand("riemann1d", "solve a 1D Riemann problem and print the wave fan as JSON");
  rie->add_option("--left", left, "left state v,c")->required();
  rie->add_option("--right", right, "right state v,c")->required();
  rie->add_option("--gamma", gamma, "adiabatic exponent in (1, 3)");
  rie->add_option("--k0", k0, "pressure constant");

  auto* gw = app.add_subcommand("verify-gronwall", "check a (t, u) lattice instance of the refined Gronwall lemma");
  gw->add_option("instance", inst, "JSON with A, B, C, t, u, E, F")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kPass : kConfig;
  }
  try {
    if (*run) return cmd_run(cfg_path, out, force);
    if (*study) return cmd_study(spec_path, cfg_path, out, workers, force);
    if (*rie) return cmd_riemann(left, right, gamma, k0);
    if (*gw) return cmd_gronwall(inst);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFail;
  }
  return kConfig;
}
