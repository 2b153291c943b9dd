// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [desk-config.json]

#include "cmd/harness.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#ifndef CMD_SOURCE_DIR
#define CMD_SOURCE_DIR "."
#endif

using namespace cmd;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail, double seconds) {
  std::printf("[%s] %d %s: %s (%.1f s)\n", ok ? "PASS" : "FAIL", id, name, detail.c_str(), seconds);
  std::fflush(stdout);
  if (!ok) ++failures;
}

/// Runs one criterion; an exception counts as a failure with its message.
void criterion(int id, const char* name, double budget_s,
               const std::function<bool(std::string&)>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (ok && s > budget_s) {
    ok = false;
    detail += "; over the " + fmt(budget_s) + " s budget";
  }
  report(id, name, ok, detail, s);
}

CMatrix random_complex(Rng& rng, Eigen::Index r, Eigen::Index c) {
  CMatrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.complex_normal();
  return m;
}

CMatrix random_hpd(Rng& rng, Eigen::Index n) {
  const CMatrix g = random_complex(rng, n, n);
  CMatrix a = g * g.adjoint() / static_cast<double>(n);
  a.diagonal().array() += 0.5;
  return hermitian_part(a);
}

double eig_logdet(const CMatrix& a) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().array().log().sum();
}

double relerr(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

// grid + golden-section minimizer of |u - a| + (u - v)^2 / (2 s) over u >= 0
double numeric_prox(double v, double a, double s) {
  auto phi = [&](double u) { return std::abs(u - a) + (u - v) * (u - v) / (2.0 * s); };
  const double hi = std::max({std::abs(v), a, 0.0}) + 2.0 * s + 1.0;
  const int grid = 4001;
  double best_u = 0.0, best = phi(0.0);
  for (int i = 1; i < grid; ++i) {
    const double u = hi * i / (grid - 1);
    if (phi(u) < best) {
      best = phi(u);
      best_u = u;
    }
  }
  const double h = hi / (grid - 1);
  double lo = std::max(0.0, best_u - h), up = best_u + h;
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 300 && up - lo > 1e-14; ++it) {
    const double c = up - r * (up - lo), d = lo + r * (up - lo);
    if (phi(c) < phi(d)) {
      up = d;
    } else {
      lo = c;
    }
  }
  const double u = 0.5 * (lo + up);
  return phi(0.0) <= phi(u) ? 0.0 : u;
}

ExperimentConfig desk_config(const std::string& path) {
  return experiment_from_json(read_json_file(path));
}

SolverInput desk_input(const ExperimentConfig& c, Scenario& sc) {
  auto scfg = c.scenario;
  scfg.topology.seed = trial_seed(c.seed, 0);
  sc = make_scenario(scfg);
  SolverInput in = SolverInput::from(sc, synthesize(sc, false));
  return c.solver.normalize_noise ? in.rescaled(sc.noise_power) : in;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string describe(const std::vector<AggregateRow>& rows) {
  std::string s;
  for (const auto& r : rows) s += fmt(r.axis_value) + ":" + fmt(r.mean_aer) + "+-" + fmt(r.stderr_aer) + " ";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string config_path =
      argc > 1 ? argv[1] : std::string(CMD_SOURCE_DIR) + "/configs/desk.json";
  const ExperimentConfig desk = desk_config(config_path);
  std::printf("desk config %s (hash %s)\n", config_path.c_str(), config_hash(desk).c_str());

  criterion(1, "math kernels", 10.0, [](std::string& d) {
    Rng rng(101);
    double worst_sm = 0.0, worst_det = 0.0, worst_fd = 0.0;
    for (int t = 0; t < 50; ++t) {
      const auto l = 2 + static_cast<Eigen::Index>(rng.below(7));
      const CMatrix sn = random_hpd(rng, l);
      const CVector v = random_complex(rng, l, 1).col(0);
      const CMatrix g = random_complex(rng, l, l);
      const CMatrix b = hermitian_part(g * g.adjoint());
      const double gamma = rng.uniform(0.0, 2.0);
      const CMatrix a = rank1_update(sn, gamma, v);
      const auto q = sherman_morrison_downdate_quadforms(a, gamma, v, b);
      const CMatrix sni = sn.fullPivLu().inverse();
      worst_sm = std::max({worst_sm, relerr(q.q1, (v.adjoint() * sni * v)(0).real()),
                           relerr(q.q2, (v.adjoint() * sni * b * sni * v)(0).real())});
      // the implicit Sigma_bn^{-1} v against the explicit one
      const CVector u = Cholesky(a).solve(v);
      const CVector implicit = u / (1.0 - gamma * v.dot(u).real());
      worst_sm = std::max(worst_sm, (implicit - sni * v).norm() / (sni * v).norm());
      const double lhs = logdet(a) - logdet(sn);
      const double rhs = std::log1p(gamma * (v.adjoint() * sni * v)(0).real());
      worst_det = std::max({worst_det, relerr(lhs, rhs), relerr(logdet(a), eig_logdet(a))});
    }
    for (int t = 0; t < 20; ++t) {
      const auto l = 2 + static_cast<Eigen::Index>(rng.below(11));
      const auto n = 2 + static_cast<Eigen::Index>(rng.below(15));
      const CMatrix s = random_complex(rng, l, n);
      GammaVector gam(n);
      for (Eigen::Index i = 0; i < n; ++i) gam(i) = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.1, 2.0);
      const double s2 = rng.uniform(0.2, 1.5);
      const CMatrix g = random_complex(rng, l, l + 3);
      const HermitianMatrix cov = hermitian_part(g * g.adjoint() / static_cast<double>(l));
      const RVector grad = f_gradient(gam, s, s2, cov);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double h = 1e-6;
        GammaVector up = gam, dn = gam;
        up(i) += h;
        dn(i) -= h;
        const double fd = (f_value(up, s, s2, cov) - f_value(dn, s, s2, cov)) / (2 * h);
        worst_fd = std::max(worst_fd, std::abs(grad(i) - fd) / std::max(1.0, std::abs(fd)));
      }
    }
    d = "SM " + fmt(worst_sm) + ", det " + fmt(worst_det) + ", grad-vs-FD " + fmt(worst_fd);
    return worst_sm <= 1e-9 && worst_det <= 1e-9 && worst_fd <= 1e-4;
  });

  criterion(2, "similarity prox", 10.0, [&](std::string& d) {
    Rng rng(202);
    double worst = 0.0;
    int edge = 0;
    for (int i = 0; i < 1000; ++i) {
      const double s = rng.uniform(1e-3, 0.5);
      double a = rng.uniform() < 0.15 ? 0.0 : rng.uniform(0.0, 3.0);
      double v = rng.uniform(-1.0, 4.0);
      if (i % 10 == 0) {
        v = a;  // anchor-equal
        ++edge;
      } else if (i % 10 == 1) {
        v = 0.0;
        ++edge;
      }
      const double got = prox_scalar(v, a, s, desk.hyper.prox_rule);
      worst = std::max(worst, std::abs(got - numeric_prox(v, a, s)));
    }
    d = "rule " + std::string(to_string(desk.hyper.prox_rule)) + ", max |diff| " + fmt(worst) +
        " over 1000 coordinates (" + std::to_string(edge) + " edge cases)";
    return worst <= 1e-6;
  });

  criterion(3, "state consistency", 600.0, [&](std::string& d) {
    Scenario sc;
    const SolverInput in = desk_input(desk, sc);
    double worst_sigma = 0.0, worst_x = 0.0;
    int rounds = 0;
    for (bool freeze : {false, true}) {
      SolverOptions o = solver_options(desk, trial_seed(desk.seed, 0));
      o.freeze_combiners = freeze;
      run(in, o, nullptr, [&](int, const std::vector<ApSolverState>& states) {
        ++rounds;
        for (const auto& s : states) {
          const auto fresh = assemble_covariance(s.gamma, in.pilots, in.noise_power);
          worst_sigma = std::max(worst_sigma, rel_frobenius(s.sigma, fresh));
          if (!freeze || !s.frozen) continue;
          RVector scratch = s.frozen->self * s.x_local.back();
          for (std::size_t i = 0; i < s.neighbors.size(); ++i) {
            scratch += s.frozen->neighbor[i] * s.x_local[i];
          }
          worst_x = std::max(worst_x, (scratch - s.x).lpNorm<Eigen::Infinity>());
        }
      });
    }
    d = std::to_string(rounds) + " rounds: Sigma rel " + fmt(worst_sigma) + ", x_b running sum " +
        fmt(worst_x);
    return worst_sigma <= 1e-8 && worst_x <= 1e-10;
  });

  double healthy_aer = 0.0, healthy_iota = 0.0;
  criterion(4, "cooperation benefit", 600.0, [&](std::string& d) {
    ExperimentConfig c = desk;
    c.modes = {Mode::cmd, Mode::no_coop};
    c.axis = SweepAxis::coop_degree;
    c.sweep_values = {4};
    const auto art = run_experiment(c);
    const auto& a = art.aggregates[0];
    const auto& b = art.aggregates[1];
    healthy_aer = a.mean_aer;
    healthy_iota = a.iota;
    const double pooled = std::sqrt(a.stderr_aer * a.stderr_aer + b.stderr_aer * b.stderr_aer);
    d = "cmd " + fmt(a.mean_aer) + "+-" + fmt(a.stderr_aer) + " vs no_coop " + fmt(b.mean_aer) +
        "+-" + fmt(b.stderr_aer) + ", gap " + fmt(b.mean_aer - a.mean_aer) + " vs pooled stderr " +
        fmt(pooled) + ", " + std::to_string(a.trials) + " trials";
    return a.mean_aer < b.mean_aer && b.mean_aer - a.mean_aer > pooled;
  });

  criterion(5, "monotone trends", 1800.0, [&](std::string& d) {
    bool ok = true;
    const std::vector<std::pair<SweepAxis, std::vector<double>>> sweeps{
        {SweepAxis::coop_degree, {1, 2, 3, 4}}, {SweepAxis::M, {8, 16, 32}}, {SweepAxis::L, {12, 24, 48}}};
    for (const auto& [axis, values] : sweeps) {
      ExperimentConfig c = desk;
      c.modes = {Mode::cmd};
      c.axis = axis;
      c.sweep_values = values;
      const auto rows = run_experiment(c).aggregates;
      const auto tc = non_increasing(rows);
      ok = ok && tc.ok;
      d += std::string(to_string(axis)) + " [" + describe(rows) + "]" + (tc.ok ? " ok" : " " + tc.detail) + "; ";
    }
    return ok;
  });

  criterion(6, "communication cost", 600.0, [&](std::string& d) {
    auto counters = [&](int m, Mode mode, std::size_t* links) {
      ExperimentConfig c = desk;
      c.scenario.num_antennas = m;
      Scenario sc;
      RunResult r;
      solve_trial(c, c.scenario, mode, trial_seed(c.seed, 0), &sc, &r);
      if (links) *links = sc.topology.directed_links();
      return r.ledger;
    };
    std::size_t links = 0;
    const auto l8 = counters(8, Mode::cmd, &links);
    const auto l32 = counters(32, Mode::cmd, nullptr);
    const auto none = counters(16, Mode::no_coop, nullptr);
    const std::size_t want = static_cast<std::size_t>(desk.scenario.num_devices) * links;
    bool exact = !l8.rounds().empty();
    for (const auto& r : l8.rounds()) exact = exact && r.scalars_sent == want && r.scalars_delivered == want;
    const bool same = l8 == l32;
    const bool silent = none.totals().attempted == 0 && none.totals().scalars_sent == 0;
    d = "per-round scalars " + std::to_string(l8.rounds().front().scalars_sent) + " (N*sum|N_b^-| = " +
        std::to_string(want) + "), M=8 vs M=32 ledgers " + (same ? "identical" : "differ") +
        ", no_coop messages " + std::to_string(none.totals().attempted);
    return exact && same && silent;
  });

  criterion(7, "robustness", 600.0, [&](std::string& d) {
    ExperimentConfig c = desk;
    c.modes = {Mode::cmd};
    c.sweep_values = {4};
    c.axis = SweepAxis::coop_degree;
    c.solver.invariant_check_every = 1;
    c.detector.iota = healthy_iota > 0.0 ? healthy_iota : 0.0;
    c.failures.ap_failures.push_back({2, 10});
    c.failures.drop_prob = 0.1;
    const auto art = run_experiment(c);
    const double degraded = art.aggregates[0].mean_aer;
    std::size_t dropped = 0;
    for (const auto& t : art.trials) dropped += t.comm.attempted - t.comm.delivered;
    d = "AER " + fmt(healthy_aer) + " -> " + fmt(degraded) + " with AP 2 down from round 10 and 10% loss (" +
        std::to_string(dropped) + " messages lost), invariant checks every round passed";
    return std::isfinite(degraded) && dropped > 0;
  });

  criterion(8, "determinism", 600.0, [&](std::string& d) {
    ExperimentConfig c = desk;
    c.trials = 4;
    c.detector.calibration_trials = 2;
    c.modes = {Mode::cmd, Mode::no_coop, Mode::centralized_pool};
    c.axis = SweepAxis::coop_degree;
    c.sweep_values = {2, 4};
    const fs::path base = fs::temp_directory_path() / "cmd_acceptance_determinism";
    fs::remove_all(base);
    const auto f1 = emit_plotdata(run_experiment(c), base / "a");
    const auto f2 = emit_plotdata(run_experiment(c), base / "b");
    bool same = f1.size() == f2.size();
    for (std::size_t i = 0; same && i < f1.size(); ++i) same = slurp(f1[i]) == slurp(f2[i]);
    d = std::to_string(f1.size()) + " files compared byte for byte: " + (same ? "identical" : "differ");
    fs::remove_all(base);
    return same;
  });

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
  return failures == 0 ? 0 : 1;
}
