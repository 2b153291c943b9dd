#pragma once

// Cooperative detection solver. Every AP runs the same adaptation step on its
// own sample covariance and the estimates its neighbors sent last round:
// forward/sparsity step, random neighbor selection, adaptive combiner,
// similarity prox with rank-1 maintenance of Sigma_b, then subgradient
// bookkeeping. Rounds are bulk-synchronous; messages cross the round barrier
// through the simulated backhaul.

#include "cmd/errors.hpp"
#include "cmd/linalg.hpp"
#include "cmd/netsim.hpp"
#include "cmd/objective.hpp"
#include "cmd/random.hpp"
#include "cmd/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace cmd {

/// Everything the solver needs about the network, detached from geometry.
struct SolverInput {
  CMatrix pilots;  // L x N
  double noise_power = 1.0;
  std::vector<HermitianMatrix> sample_covs;  // one per AP
  Topology topology;

  int num_aps() const { return static_cast<int>(sample_covs.size()); }
  Eigen::Index num_devices() const { return pilots.cols(); }

  static SolverInput from(const Scenario& sc, const std::vector<ApObservation>& obs,
                          const Topology& topo) {
    SolverInput in;
    in.pilots = sc.pilots;
    in.noise_power = sc.noise_power;
    in.topology = topo;
    in.sample_covs.reserve(obs.size());
    for (const auto& o : obs) in.sample_covs.push_back(o.sample_cov);
    return in;
  }

  static SolverInput from(const Scenario& sc, const std::vector<ApObservation>& obs) {
    return from(sc, obs, sc.topology);
  }

  /// Same problem with every power divided by `unit`. Estimates of the
  /// rescaled problem multiply back by `unit`.
  SolverInput rescaled(double unit) const {
    SolverInput out = *this;
    out.noise_power = noise_power / unit;
    for (auto& c : out.sample_covs) c /= unit;
    return out;
  }
};

/// When the gradient of f is evaluated inside a round.
enum class GradientMode {
  per_round,       ///< once at gamma^t, before the coordinate loop
  per_coordinate,  ///< for each coordinate against the running Sigma_b
};

inline const char* to_string(GradientMode m) {
  return m == GradientMode::per_round ? "per_round" : "per_coordinate";
}

inline GradientMode parse_gradient_mode(const std::string& s) {
  if (s == "per_round") return GradientMode::per_round;
  if (s == "per_coordinate") return GradientMode::per_coordinate;
  throw InvalidConfig("gradient: expected 'per_round' or 'per_coordinate', got '" + s + "'");
}

struct SolverOptions {
  Hyperparams hyper;
  GradientMode gradient = GradientMode::per_round;
  std::uint64_t seed = 1;
  FailurePlan failures;
  /// Transmit the estimate held at the start of the round instead of the
  /// freshly updated one (one-round lag).
  bool lag_transmit = false;
  /// Project each x_b^l onto [-1, 1]^N, the range of l1 subgradients.
  bool clip_subgradient = true;
  /// Compute combiners once, in the first round, and reuse them.
  bool freeze_combiners = false;
  /// Check Sigma_b against a fresh assembly every k rounds (0 disables).
  int invariant_check_every = 10;
  /// Stop once max_b ||gamma_b^{t+1} - gamma_b^t||_inf falls below this (0 disables).
  double early_stop_tol = 0.0;
  /// Threads used for the per-AP updates inside a round.
  int workers = 1;
};

struct ApSolverState {
  int ap_id = 0;
  std::vector<int> neighbors;  // N_b^-
  GammaVector gamma;
  HermitianMatrix sigma;                  // maintained by rank-1 updates
  std::shared_ptr<const Cholesky> chol;   // refreshed once per round
  RVector z;
  RVector x;
  std::vector<RVector> x_local;  // one per member of N_b, own slot last
  CombinerWeights combiner;
  std::optional<CombinerWeights> frozen;
  double cost = 0.0;
  int iteration = 0;
  int clamped = 0;
  Rng rng{1};

  std::size_t panel_size() const { return neighbors.size() + 1; }
};

struct IterationRecord {
  int round = 0;
  int ap = 0;
  bool failed = false;
  double cost = 0.0;
  int selected = -1;  // AP id of the selected member of N_b
  double step = 0.0;  // tau * eta_b^l
  std::vector<double> weights;  // c_lb over N_b^-, then c_bb
  int clamped = 0;
  std::size_t messages = 0;
  std::size_t scalars = 0;
  double wall_seconds = 0.0;

  std::size_t bytes() const { return scalars * sizeof(double); }
};

struct IterationTrace {
  std::vector<IterationRecord> records;

  void append(IterationRecord r) { records.push_back(std::move(r)); }

  /// Sum over APs of the local cost at the end of each round.
  std::vector<double> total_cost_per_round(int num_aps) const {
    std::vector<double> out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(num_aps) <= records.size();
         i += static_cast<std::size_t>(num_aps)) {
      double acc = 0.0;
      for (int b = 0; b < num_aps; ++b) acc += records[i + static_cast<std::size_t>(b)].cost;
      out.push_back(acc);
    }
    return out;
  }
};

/// F(gamma_b) = f + beta g + tau Psi with the factorization of Sigma_b given.
inline double local_cost(const Cholesky& chol, const HermitianMatrix& sample_cov,
                         const GammaVector& gamma,
                         const std::vector<const GammaVector*>& neighbor_values,
                         const CombinerWeights& w, const Hyperparams& h) {
  const double f = chol.logdet() + chol.solve(CMatrix(sample_cov)).trace().real();
  const double g = g_value(make_panel(neighbor_values, gamma), h.theta);
  const double psi = similarity_value(gamma, neighbor_values, w);
  return f + h.beta * g + h.tau * psi;
}

inline void check_state(const ApSolverState& s, const CMatrix& pilots, double noise_power) {
  for (Eigen::Index n = 0; n < s.gamma.size(); ++n) {
    if (!(s.gamma(n) >= 0.0) || !std::isfinite(s.gamma(n))) {
      throw InvariantViolation("AP " + std::to_string(s.ap_id) + ": gamma entry " +
                               std::to_string(n) + " is negative or non-finite");
    }
  }
  const HermitianMatrix fresh = assemble_covariance(s.gamma, pilots, noise_power);
  const double tol = 1e-8 * fresh.diagonal().real().sum();
  const double err = (s.sigma - fresh).norm();
  if (!(err <= tol)) {
    throw InvariantViolation("AP " + std::to_string(s.ap_id) + ": Sigma drifted from assembly by " +
                             std::to_string(err));
  }
}

inline std::vector<ApSolverState> init_states(const SolverInput& in, const SolverOptions& opt) {
  if (opt.hyper.iterations < 1) throw ConfigMismatch("at least one iteration is required");
  validate(opt.hyper);
  const int b_count = in.num_aps();
  const Eigen::Index n_count = in.num_devices();
  const Eigen::Index l_len = in.pilots.rows();
  if (b_count == 0) throw ConfigMismatch("no APs");
  if (in.topology.num_aps() != b_count) {
    throw ConfigMismatch("topology has " + std::to_string(in.topology.num_aps()) +
                         " APs but " + std::to_string(b_count) + " observations were given");
  }
  if (!(in.noise_power > 0.0)) throw ConfigMismatch("noise power must be positive");
  for (const auto& c : in.sample_covs) {
    if (c.rows() != l_len || c.cols() != l_len) {
      throw ConfigMismatch("sample covariance dimension does not match pilot length");
    }
  }
  validate(opt.failures, in.topology, opt.hyper.iterations);

  std::vector<ApSolverState> states(static_cast<std::size_t>(b_count));
  for (int b = 0; b < b_count; ++b) {
    auto& s = states[static_cast<std::size_t>(b)];
    s.ap_id = b;
    s.neighbors = in.topology.neighbors[static_cast<std::size_t>(b)];
    s.gamma = GammaVector::Zero(n_count);
    s.sigma = HermitianMatrix::Identity(l_len, l_len) * Complex(in.noise_power, 0.0);
    s.chol = std::make_shared<const Cholesky>(s.sigma);
    s.z = RVector::Zero(n_count);
    s.x = RVector::Zero(n_count);
    s.x_local.assign(s.panel_size(), RVector::Zero(n_count));
    s.rng = Rng(derive_seed(opt.seed, {stream::kSelection, static_cast<std::uint64_t>(b)}));
    std::vector<const GammaVector*> none(s.neighbors.size(), &s.gamma);
    s.combiner = combiner_weights(s.gamma, none, opt.hyper.rho);
    s.cost = local_cost(*s.chol, in.sample_covs[static_cast<std::size_t>(b)], s.gamma, none,
                        s.combiner, opt.hyper);
  }
  return states;
}

/// One adaptation step of AP b. `neighbor_values` holds the last received
/// estimate of each member of N_b^-, aligned with state.neighbors.
inline IterationRecord ap_iteration(ApSolverState& s, const HermitianMatrix& sample_cov,
                                    const CMatrix& pilots,
                                    const std::vector<const GammaVector*>& neighbor_values,
                                    const SolverOptions& opt) {
  const Hyperparams& h = opt.hyper;
  const auto t0 = std::chrono::steady_clock::now();
  if (neighbor_values.size() != s.neighbors.size()) {
    throw ConfigMismatch("ap_iteration: neighbor data does not match N_b");
  }
  IterationRecord rec;
  rec.ap = s.ap_id;
  const Eigen::Index n_count = s.gamma.size();

  const RVector row_norms = panel_row_norms(make_panel(neighbor_values, s.gamma));

  // Uniform selection over N_b; the last index is the AP itself.
  const std::size_t k = s.panel_size();
  const auto pick = static_cast<std::size_t>(s.rng.below(k));
  const bool self = pick + 1 == k;
  const double prob = 1.0 / static_cast<double>(k);

  if (opt.freeze_combiners && s.frozen) {
    s.combiner = *s.frozen;
  } else {
    s.combiner = combiner_weights(s.gamma, neighbor_values, h.rho);
    if (opt.freeze_combiners) s.frozen = s.combiner;
  }
  const double c = self ? s.combiner.self : s.combiner.neighbor[pick];
  const double step = h.tau * stochastic_step_size(c, h.eta, prob);
  const RVector& x_sel = s.x_local[pick];

  // Component-wise similarity prox of one coordinate of z. The self term of
  // Psi is constant, so its prox is the identity.
  auto next_coordinate = [&](Eigen::Index n) {
    if (self || step == 0.0) return s.z(n) + step * x_sel(n);
    return prox_scalar(s.z(n) + step * x_sel(n), (*neighbor_values[pick])(n), step, h.prox_rule);
  };

  GammaVector next(n_count);
  int clamped = 0;
  auto settle = [&](double v) {
    if (v < 0.0) ++clamped;
    return v > 0.0 ? v : 0.0;
  };

  if (opt.gradient == GradientMode::per_round) {
    // Gradient at gamma^t for all coordinates, from one factorization.
    const RVector grad = f_gradient(*s.chol, s.gamma, pilots, sample_cov);
    s.z = z_step(s.gamma, grad, s.x, row_norms, h).z;
    for (Eigen::Index n = 0; n < n_count; ++n) next(n) = settle(next_coordinate(n));
    for (Eigen::Index n = 0; n < n_count; ++n) {
      const double delta = next(n) - s.gamma(n);
      if (delta != 0.0) rank1_update_inplace(s.sigma, delta, pilots.col(n));
    }
  } else {
    // Gauss-Seidel sweep: coordinate n sees Sigma after the updates of
    // coordinates 1..n-1. The inverse is carried by Sherman-Morrison.
    CMatrix inv = s.chol->solve(CMatrix(CMatrix::Identity(pilots.rows(), pilots.rows())));
    const double shrink = h.eta * h.beta;
    for (Eigen::Index n = 0; n < n_count; ++n) {
      const CVector u = inv * pilots.col(n);
      const CVector bu = sample_cov * u;
      const auto q = downdate_quadforms_from(pilots.col(n), u, bu, s.gamma(n));
      const double d = 1.0 + s.gamma(n) * q.q1;
      const double grad = q.q1 / d - q.q2 / (d * d);
      const double fwd = s.gamma(n) - h.eta * grad - h.tau * h.eta * s.x(n);
      s.z(n) = row_norms(n) >= kRowNormFloor ? fwd - shrink * fwd / row_norms(n) : fwd;
      next(n) = settle(next_coordinate(n));
      const double delta = next(n) - s.gamma(n);
      if (delta != 0.0) {
        const double a = pilots.col(n).dot(u).real();
        inv.noalias() -= (delta / (1.0 + delta * a)) * u * u.adjoint();
        rank1_update_inplace(s.sigma, delta, pilots.col(n));
      }
    }
  }

  if (step > 0.0) {
    RVector updated = subgrad_local_update(x_sel, s.z, next, step);
    if (opt.clip_subgradient) updated = updated.cwiseMax(-1.0).cwiseMin(1.0);
    s.x = subgrad_aggregate_update(s.x, c, updated, x_sel);
    s.x_local[pick] = std::move(updated);
  }

  s.gamma = std::move(next);
  s.clamped += clamped;
  s.iteration += 1;
  s.chol = std::make_shared<const Cholesky>(s.sigma);
  s.cost = local_cost(*s.chol, sample_cov, s.gamma, neighbor_values, s.combiner, h);

  rec.cost = s.cost;
  rec.selected = self ? s.ap_id : s.neighbors[pick];
  rec.step = step;
  rec.weights = s.combiner.neighbor;
  rec.weights.push_back(s.combiner.self);
  rec.clamped = clamped;
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

struct RunResult {
  std::vector<GammaVector> gamma;  // final estimate per AP
  IterationTrace trace;
  CommLedger ledger;
  int rounds = 0;
  int clamped = 0;
  double wall_seconds = 0.0;
};

/// Called after every round with the round number and all AP states.
using RoundObserver = std::function<void(int, const std::vector<ApSolverState>&)>;

/// Runs up to `hyper.iterations` synchronized rounds.
inline RunResult run(const SolverInput& in, const SolverOptions& opt,
                     std::vector<ApSolverState>* final_states = nullptr,
                     const RoundObserver& observer = nullptr) {
  auto states = init_states(in, opt);
  const int b_count = in.num_aps();
  const auto t_start = std::chrono::steady_clock::now();
  Mailbox mailbox(in.topology, in.num_devices());
  Rng backhaul(derive_seed(opt.seed, {stream::kBackhaul}));
  RunResult out;
  out.ledger = CommLedger(b_count);

  for (int t = 1; t <= opt.hyper.iterations; ++t) {
    std::vector<IterationRecord> recs(static_cast<std::size_t>(b_count));
    std::vector<std::shared_ptr<const GammaVector>> outgoing(static_cast<std::size_t>(b_count));
    std::vector<double> change(static_cast<std::size_t>(b_count), 0.0);

    auto step_ap = [&](int b) {
      auto& s = states[static_cast<std::size_t>(b)];
      auto& rec = recs[static_cast<std::size_t>(b)];
      if (opt.failures.ap_down(b, t)) {
        rec.ap = b;
        rec.failed = true;
        rec.cost = s.cost;
        return;
      }
      std::vector<const GammaVector*> nb;
      for (const auto& slot : mailbox.inbox(b)) nb.push_back(slot.value.get());
      auto before = std::make_shared<const GammaVector>(s.gamma);
      rec = ap_iteration(s, in.sample_covs[static_cast<std::size_t>(b)], in.pilots, nb, opt);
      change[static_cast<std::size_t>(b)] = (s.gamma - *before).lpNorm<Eigen::Infinity>();
      outgoing[static_cast<std::size_t>(b)] =
          opt.lag_transmit ? before : std::make_shared<const GammaVector>(s.gamma);
    };

    if (opt.workers > 1 && b_count > 1) {
      std::vector<std::thread> pool;
      const int w = std::min(opt.workers, b_count);
      for (int i = 0; i < w; ++i) {
        pool.emplace_back([&, i] {
          for (int b = i; b < b_count; b += w) step_ap(b);
        });
      }
      for (auto& th : pool) th.join();
    } else {
      for (int b = 0; b < b_count; ++b) step_ap(b);
    }

    // Communication: each live AP sends its estimate to every one-hop neighbor.
    std::vector<Message> messages;
    for (int b = 0; b < b_count; ++b) {
      if (!outgoing[static_cast<std::size_t>(b)]) continue;
      for (int l : in.topology.neighbors[static_cast<std::size_t>(b)]) {
        messages.push_back(Message{b, l, t, outgoing[static_cast<std::size_t>(b)]});
        recs[static_cast<std::size_t>(b)].messages += 1;
        recs[static_cast<std::size_t>(b)].scalars +=
            static_cast<std::size_t>(outgoing[static_cast<std::size_t>(b)]->size());
      }
    }
    auto delivery = deliver_round(messages, in.topology, opt.failures, t, backhaul);
    out.ledger.record(delivery.stats, messages);
    mailbox.accept(delivery.delivered);

    for (auto& r : recs) {
      r.round = t;
      out.trace.append(std::move(r));
    }
    out.rounds = t;

    const bool check = opt.invariant_check_every > 0 &&
                       (t % opt.invariant_check_every == 0 || t == opt.hyper.iterations);
    if (check) {
      for (const auto& s : states) check_state(s, in.pilots, in.noise_power);
    }
    if (observer) observer(t, states);
    if (opt.early_stop_tol > 0.0 &&
        *std::max_element(change.begin(), change.end()) < opt.early_stop_tol) {
      break;
    }
  }

  for (const auto& s : states) {
    out.gamma.push_back(s.gamma);
    out.clamped += s.clamped;
  }
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (final_states) *final_states = std::move(states);
  return out;
}

}  // namespace cmd
