#include "cmd/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace cmd;

namespace {

ScenarioConfig small_config(std::uint64_t seed = 21, int aps = 4, int degree = 2) {
  ScenarioConfig c;
  c.topology.num_aps = aps;
  c.topology.degree = degree;
  c.topology.seed = seed;
  c.num_devices = 30;
  c.num_active = 4;
  c.pilot_len = 10;
  c.num_antennas = 8;
  return c;
}

struct Problem {
  Scenario sc;
  SolverInput in;  // in units of sigma^2
};

Problem make_problem(const ScenarioConfig& c) {
  Problem p;
  p.sc = make_scenario(c);
  p.in = SolverInput::from(p.sc, synthesize(p.sc, false)).rescaled(p.sc.noise_power);
  return p;
}

SolverOptions coop_options(int rounds = 15) {
  SolverOptions o;
  o.hyper.tau = 100.0;
  o.hyper.rho = 1.0;
  o.hyper.iterations = rounds;
  o.gradient = GradientMode::per_coordinate;
  o.seed = 5;
  return o;
}

void expect_same(const RunResult& a, const RunResult& b) {
  ASSERT_EQ(a.gamma.size(), b.gamma.size());
  for (std::size_t i = 0; i < a.gamma.size(); ++i) EXPECT_EQ(a.gamma[i], b.gamma[i]) << "AP " << i;
}

}  // namespace

TEST(Init, ZeroGammaAndNoiseCovariance) {
  const auto p = make_problem(small_config());
  const auto states = init_states(p.in, coop_options());
  for (const auto& s : states) {
    EXPECT_TRUE(s.gamma.isZero(0.0));
    EXPECT_TRUE(s.x.isZero(0.0));
    for (const auto& xl : s.x_local) EXPECT_TRUE(xl.isZero(0.0));
    const HermitianMatrix want =
        HermitianMatrix::Identity(10, 10) * Complex(p.in.noise_power, 0.0);
    EXPECT_EQ(s.sigma, want);
    const auto& cov = p.in.sample_covs[static_cast<std::size_t>(s.ap_id)];
    EXPECT_NEAR(f_value(s.gamma, p.in.pilots, p.in.noise_power, cov),
                10 * std::log(p.in.noise_power) + cov.trace().real() / p.in.noise_power, 1e-9);
  }
}

TEST(Init, Guards) {
  const auto p = make_problem(small_config());
  auto o = coop_options();
  o.hyper.iterations = 0;
  EXPECT_THROW(init_states(p.in, o), ConfigMismatch);
  auto bad = p.in;
  bad.sample_covs.pop_back();
  EXPECT_THROW(init_states(bad, coop_options()), ConfigMismatch);
  bad = p.in;
  bad.sample_covs[0] = HermitianMatrix::Identity(3, 3);
  EXPECT_THROW(init_states(bad, coop_options()), ConfigMismatch);
}

TEST(Iteration, SelfSelectionIsPureZStep) {
  // Single AP: the only member of N_b is b itself.
  const auto p = make_problem(small_config(3, 1, 0));
  auto o = coop_options();
  auto states = init_states(p.in, o);
  auto& s = states[0];
  const RVector grad = f_gradient(*s.chol, s.gamma, p.in.pilots, p.in.sample_covs[0]);
  o.gradient = GradientMode::per_round;
  const RVector z = z_step(s.gamma, grad, s.x, panel_row_norms(make_panel({}, s.gamma)), o.hyper).z;
  const auto rec = ap_iteration(s, p.in.sample_covs[0], p.in.pilots, {}, o);
  EXPECT_EQ(rec.selected, 0);
  for (Eigen::Index n = 0; n < z.size(); ++n) EXPECT_EQ(s.gamma(n), std::max(0.0, z(n)));
}

TEST(Iteration, SigmaMatchesReassembly) {
  const auto p = make_problem(small_config());
  for (auto mode : {GradientMode::per_round, GradientMode::per_coordinate}) {
    auto o = coop_options();
    o.gradient = mode;
    auto states = init_states(p.in, o);
    for (int t = 0; t < 10; ++t) {
      for (auto& s : states) {
        std::vector<const GammaVector*> nb;
        for (int l : s.neighbors) nb.push_back(&states[static_cast<std::size_t>(l)].gamma);
        ap_iteration(s, p.in.sample_covs[static_cast<std::size_t>(s.ap_id)], p.in.pilots, nb, o);
        const auto fresh = assemble_covariance(s.gamma, p.in.pilots, p.in.noise_power);
        EXPECT_LT(rel_frobenius(s.sigma, fresh), 1e-8);
        EXPECT_GE(s.gamma.minCoeff(), 0.0);
      }
    }
  }
}

TEST(Iteration, FrozenCombinersKeepRunningSum) {
  const auto p = make_problem(small_config());
  auto o = coop_options();
  o.freeze_combiners = true;
  std::vector<ApSolverState> states;
  run(p.in, o, &states);
  for (const auto& s : states) {
    ASSERT_TRUE(s.frozen.has_value());
    RVector scratch = s.frozen->self * s.x_local.back();
    for (std::size_t i = 0; i < s.neighbors.size(); ++i) scratch += s.frozen->neighbor[i] * s.x_local[i];
    EXPECT_LT((scratch - s.x).lpNorm<Eigen::Infinity>(), 1e-10);
    for (const auto& xl : s.x_local) EXPECT_LE(xl.lpNorm<Eigen::Infinity>(), 1.0);
  }
}

TEST(Iteration, AgreeingNeighborsGiveBoundedSubgradients) {
  const auto p = make_problem(small_config());
  auto o = coop_options(1);
  auto states = init_states(p.in, o);
  for (int t = 0; t < 20; ++t) {
    auto& s = states[0];
    const GammaVector own = s.gamma;
    std::vector<const GammaVector*> nb(s.neighbors.size(), &own);
    ap_iteration(s, p.in.sample_covs[0], p.in.pilots, nb, o);
    for (const auto& xl : s.x_local) {
      EXPECT_LE(xl.maxCoeff(), 1.0);
      EXPECT_GE(xl.minCoeff(), -1.0);
    }
  }
}

TEST(Run, SingleApProjectedGradientDecreasesCost) {
  auto c = small_config(8, 1, 0);
  c.num_devices = 100;
  c.num_active = 10;
  c.pilot_len = 24;
  c.num_antennas = 16;
  const auto p = make_problem(c);
  for (auto mode : {GradientMode::per_round, GradientMode::per_coordinate}) {
    SolverOptions o;
    o.hyper.beta = 0.0;
    o.hyper.tau = 0.0;
    o.hyper.iterations = 60;
    o.gradient = mode;
    const auto r = run(p.in, o);
    const auto cost = r.trace.total_cost_per_round(1);
    const auto states = init_states(p.in, o);
    double prev = states[0].cost;
    for (double f : cost) {
      EXPECT_LE(f, prev + 1e-6) << to_string(mode);
      prev = f;
    }
    EXPECT_LT(cost.back(), states[0].cost);
  }
}

TEST(Run, DisconnectedEqualsIndependentRuns) {
  const auto p = make_problem(small_config(4, 3, 2));
  SolverInput iso = p.in;
  iso.topology = p.in.topology.isolated();
  auto o = coop_options(12);
  o.hyper.tau = 0.0;
  const auto joint = run(iso, o);
  for (int b = 0; b < 3; ++b) {
    SolverInput one;
    one.pilots = p.in.pilots;
    one.noise_power = p.in.noise_power;
    one.sample_covs = {p.in.sample_covs[static_cast<std::size_t>(b)]};
    one.topology.ap_positions = {Point{}};
    one.topology.neighbors = {{}};
    const auto alone = run(one, o);
    EXPECT_EQ(alone.gamma[0], joint.gamma[static_cast<std::size_t>(b)]);
  }
  EXPECT_EQ(joint.ledger.totals().attempted, 0u);
}

TEST(Run, DeterministicAcrossWorkerCounts) {
  const auto p = make_problem(small_config(6, 5, 3));
  auto o = coop_options(10);
  const auto a = run(p.in, o);
  o.workers = 3;
  const auto b = run(p.in, o);
  expect_same(a, b);
  EXPECT_EQ(a.ledger, b.ledger);
  for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
    EXPECT_EQ(a.trace.records[i].cost, b.trace.records[i].cost);
    EXPECT_EQ(a.trace.records[i].selected, b.trace.records[i].selected);
  }
}

TEST(Run, MessageCountsMatchTopology) {
  const auto p = make_problem(small_config(7, 5, 2));
  const auto r = run(p.in, coop_options(6));
  const std::size_t per_round = 30u * p.in.topology.directed_links();
  ASSERT_EQ(r.ledger.rounds().size(), 6u);
  for (const auto& s : r.ledger.rounds()) {
    EXPECT_EQ(s.scalars_sent, per_round);
    EXPECT_EQ(s.delivered, p.in.topology.directed_links());
  }
  for (const auto& rec : r.trace.records) {
    EXPECT_EQ(rec.messages, p.in.topology.neighbors[static_cast<std::size_t>(rec.ap)].size());
    EXPECT_EQ(rec.bytes(), rec.messages * 30u * sizeof(double));
  }
}

TEST(Run, AntennaCountDoesNotChangeTraffic) {
  auto c = small_config(9, 4, 2);
  c.num_antennas = 8;
  const auto a = run(make_problem(c).in, coop_options(5));
  c.num_antennas = 16;
  const auto b = run(make_problem(c).in, coop_options(5));
  EXPECT_EQ(a.ledger, b.ledger);
}

TEST(Run, TotalDropEqualsZeroNeighborData) {
  const auto p = make_problem(small_config(10, 4, 2));
  auto o = coop_options(8);
  o.failures.drop_prob = 1.0;
  const auto dropped = run(p.in, o);
  auto states = init_states(p.in, o);
  const GammaVector zeros = GammaVector::Zero(p.in.num_devices());
  for (int t = 0; t < 8; ++t) {
    for (auto& s : states) {
      std::vector<const GammaVector*> nb(s.neighbors.size(), &zeros);
      ap_iteration(s, p.in.sample_covs[static_cast<std::size_t>(s.ap_id)], p.in.pilots, nb, o);
    }
  }
  for (std::size_t b = 0; b < states.size(); ++b) EXPECT_EQ(states[b].gamma, dropped.gamma[b]);
  EXPECT_EQ(dropped.ledger.totals().delivered, 0u);
}

TEST(Run, CrashedApFreezes) {
  const auto p = make_problem(small_config(11, 4, 2));
  auto o = coop_options(12);
  o.failures.ap_failures.push_back({2, 4});
  std::vector<ApSolverState> states;
  const auto r = run(p.in, o, &states);
  EXPECT_EQ(states[2].iteration, 3);
  for (const auto& rec : r.trace.records) {
    if (rec.ap == 2 && rec.round >= 4) {
      EXPECT_TRUE(rec.failed);
      EXPECT_EQ(rec.messages, 0u);
    }
  }
}

TEST(Run, LagOnlyMattersAfterFirstRound) {
  const auto p = make_problem(small_config(12, 4, 3));
  auto o = coop_options(1);
  const auto a = run(p.in, o);
  o.lag_transmit = true;
  expect_same(a, run(p.in, o));
  o.hyper.iterations = 6;
  const auto lag = run(p.in, o);
  o.lag_transmit = false;
  const auto fresh = run(p.in, o);
  bool differs = false;
  for (std::size_t b = 0; b < lag.gamma.size(); ++b) differs |= lag.gamma[b] != fresh.gamma[b];
  EXPECT_TRUE(differs);
}

TEST(Run, EarlyStop) {
  const auto p = make_problem(small_config(13, 3, 1));
  auto o = coop_options(200);
  o.early_stop_tol = 1e3;  // any first step is smaller than this
  EXPECT_EQ(run(p.in, o).rounds, 1);
}

TEST(Run, CostDecreasesOnCooperativeInstance) {
  const auto p = make_problem(small_config(14, 4, 3));
  const auto r = run(p.in, coop_options(30));
  const auto init = init_states(p.in, coop_options(30));
  double start = 0.0;
  for (const auto& s : init) start += s.cost;
  EXPECT_LT(r.trace.total_cost_per_round(4).back(), start);
}
