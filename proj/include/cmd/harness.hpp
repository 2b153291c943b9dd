#pragma once

// Experiment driver: JSON config, seeded Monte-Carlo sweeps over one axis,
// the three solve modes, threshold calibration on held-out seeds, and the
// CSV/JSON outputs. Everything written to disk is a function of the config
// alone (no timings), so reruns are byte-identical.

#include "cmd/errors.hpp"
#include "cmd/metrics.hpp"
#include "cmd/netsim.hpp"
#include "cmd/objective.hpp"
#include "cmd/random.hpp"
#include "cmd/scenario.hpp"
#include "cmd/scenario_io.hpp"
#include "cmd/solver.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cmd {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { cmd, no_coop, centralized_pool };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::cmd: return "cmd";
    case Mode::no_coop: return "no_coop";
    case Mode::centralized_pool: return "centralized_pool";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "cmd") return Mode::cmd;
  if (s == "no_coop") return Mode::no_coop;
  if (s == "centralized_pool") return Mode::centralized_pool;
  throw InvalidConfig("mode: expected cmd, no_coop or centralized_pool, got '" + s + "'");
}

enum class SweepAxis { coop_degree, M, L, snr_db };

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::coop_degree: return "coop_degree";
    case SweepAxis::M: return "M";
    case SweepAxis::L: return "L";
    case SweepAxis::snr_db: return "snr_db";
  }
  return "?";
}

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "coop_degree") return SweepAxis::coop_degree;
  if (s == "M") return SweepAxis::M;
  if (s == "L") return SweepAxis::L;
  if (s == "snr_db") return SweepAxis::snr_db;
  throw InvalidConfig("sweep.axis: expected coop_degree, M, L or snr_db, got '" + s + "'");
}

struct SolverSettings {
  GradientMode gradient = GradientMode::per_round;
  bool normalize_noise = true;  // solve in units of sigma^2
  bool lag_transmit = false;
  bool clip_subgradient = true;
  int invariant_check_every = 10;
  double early_stop_tol = 0.0;
};

struct DetectorSettings {
  AnchorMode b0_mode = AnchorMode::nearest;
  double iota = 0.0;  // 0: calibrate on held-out seeds
  int calibration_trials = 10;
  double grid_lo = -1.0;  // log10 bounds of the iota grid
  double grid_hi = 3.0;
  int grid_points = 31;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ScenarioConfig scenario;
  Hyperparams hyper;
  SolverSettings solver;
  DetectorSettings detector;
  SweepAxis axis = SweepAxis::coop_degree;
  std::vector<double> sweep_values;  // empty: the scenario as given
  int trials = 20;
  std::vector<Mode> modes{Mode::cmd, Mode::no_coop};
  FailurePlan failures;
  std::string output_dir = "out";
  int workers = 1;
};

// ---- JSON ------------------------------------------------------------------

namespace detail {

/// Reads keys of one JSON object and rejects any key it was not asked about.
class Fields {
 public:
  Fields(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidConfig(where_ + ": expected an object");
  }

  template <class T>
  void take(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidConfig(path(key) + ": " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const nlohmann::json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw InvalidConfig(path(it.key().c_str()) + ": unknown key");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <class F>
auto field_guard(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const InvalidConfig& e) {
    const std::string msg = e.what();
    if (msg.rfind(where, 0) == 0) throw;
    throw InvalidConfig(where + ": " + msg);
  }
}

}  // namespace detail

inline nlohmann::json to_json(const Hyperparams& h) {
  return {{"beta", h.beta},   {"tau", h.tau}, {"theta", h.theta},
          {"eta", h.eta},     {"rho", h.rho}, {"iota", h.iota},
          {"iterations", h.iterations},       {"prox_rule", to_string(h.prox_rule)},
          {"selection", "uniform"}};
}

inline void update_from_json(Hyperparams& h, const nlohmann::json& j) {
  detail::Fields f(j, "hyper");
  f.take("beta", h.beta);
  f.take("tau", h.tau);
  f.take("theta", h.theta);
  f.take("eta", h.eta);
  f.take("rho", h.rho);
  f.take("iota", h.iota);
  f.take("iterations", h.iterations);
  std::string rule = to_string(h.prox_rule);
  f.take("prox_rule", rule);
  h.prox_rule = detail::field_guard("hyper.prox_rule", [&] { return parse_prox_rule(rule); });
  std::string sel = "uniform";
  f.take("selection", sel);
  if (sel != "uniform") throw InvalidConfig("hyper.selection: only 'uniform' is supported");
  f.finish();
}

inline nlohmann::json to_json(const FailurePlan& p) {
  nlohmann::json aps = nlohmann::json::array();
  for (const auto& a : p.ap_failures) aps.push_back({{"ap", a.ap}, {"from_round", a.from_round}});
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : p.link_failures) {
    links.push_back({{"a", l.a}, {"b", l.b}, {"from_round", l.from_round}, {"to_round", l.to_round}});
  }
  return {{"ap_failures", aps}, {"link_failures", links}, {"drop_prob", p.drop_prob}};
}

inline FailurePlan failure_plan_from_json(const nlohmann::json& j) {
  FailurePlan p;
  detail::Fields f(j, "failures");
  f.take("drop_prob", p.drop_prob);
  if (f.has("ap_failures")) {
    for (const auto& e : f.at("ap_failures")) {
      detail::Fields g(e, "failures.ap_failures[]");
      ApFailure a;
      g.take("ap", a.ap);
      g.take("from_round", a.from_round);
      g.finish();
      p.ap_failures.push_back(a);
    }
  }
  if (f.has("link_failures")) {
    for (const auto& e : f.at("link_failures")) {
      detail::Fields g(e, "failures.link_failures[]");
      LinkFailure l;
      g.take("a", l.a);
      g.take("b", l.b);
      g.take("from_round", l.from_round);
      if (!g.has("to_round")) throw InvalidConfig("failures.link_failures[].to_round: required");
      g.take("to_round", l.to_round);
      g.finish();
      p.link_failures.push_back(l);
    }
  }
  f.finish();
  return p;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json modes = nlohmann::json::array();
  for (auto m : c.modes) modes.push_back(to_string(m));
  return {
      {"seed", c.seed},
      {"scenario", to_json(c.scenario)},
      {"hyper", to_json(c.hyper)},
      {"solver",
       {{"gradient", to_string(c.solver.gradient)},
        {"normalize_noise", c.solver.normalize_noise},
        {"lag_transmit", c.solver.lag_transmit},
        {"clip_subgradient", c.solver.clip_subgradient},
        {"invariant_check_every", c.solver.invariant_check_every},
        {"early_stop_tol", c.solver.early_stop_tol}}},
      {"detector",
       {{"b0_mode", to_string(c.detector.b0_mode)},
        {"iota", c.detector.iota},
        {"calibration_trials", c.detector.calibration_trials},
        {"grid", {{"lo", c.detector.grid_lo}, {"hi", c.detector.grid_hi},
                  {"points", c.detector.grid_points}}}}},
      {"sweep", {{"axis", to_string(c.axis)}, {"values", c.sweep_values}}},
      {"trials", c.trials},
      {"modes", modes},
      {"failures", to_json(c.failures)},
      {"output_dir", c.output_dir},
      {"workers", c.workers},
  };
}

inline void validate(const ExperimentConfig& c) {
  if (c.trials < 1) throw InvalidConfig("trials: must be >= 1");
  if (c.modes.empty()) throw InvalidConfig("modes: at least one mode is required");
  if (c.workers < 1) throw InvalidConfig("workers: must be >= 1");
  if (c.detector.iota < 0.0) throw InvalidConfig("detector.iota: must be >= 0 (0 calibrates)");
  if (c.detector.iota == 0.0 && c.detector.calibration_trials < 1) {
    throw InvalidConfig("detector.calibration_trials: must be >= 1 when iota is calibrated");
  }
  if (c.detector.grid_points < 1) throw InvalidConfig("detector.grid.points: must be >= 1");
  if (c.solver.invariant_check_every < 0) {
    throw InvalidConfig("solver.invariant_check_every: must be >= 0");
  }
  detail::field_guard("hyper", [&] { validate(c.hyper); return 0; });
  detail::field_guard("scenario", [&] { validate(c.scenario); return 0; });
  if (!(c.failures.drop_prob >= 0.0 && c.failures.drop_prob <= 1.0)) {
    throw InvalidConfig("failures.drop_prob: must lie in [0, 1]");
  }
}

/// Parses an experiment config. The master seed is mandatory.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::Fields f(j, "");
  if (!f.has("seed")) throw InvalidConfig("seed: a master seed is required");
  f.take("seed", c.seed);
  if (f.has("scenario")) {
    detail::Fields s(f.at("scenario"), "scenario");
    // Key check only; the values are read by update_from_json.
    for (const char* k : {"num_aps", "ap_spacing", "degree", "layout", "seed", "num_devices",
                          "num_active", "pilot_len", "num_antennas", "snr_db",
                          "pathloss_exponent", "shadowing_std_db", "noise_power_override"}) {
      s.has(k);
    }
    s.finish();
    detail::field_guard("scenario", [&] {
      try {
        update_from_json(c.scenario, f.at("scenario"));
      } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(e.what());
      }
      return 0;
    });
  }
  if (f.has("hyper")) update_from_json(c.hyper, f.at("hyper"));
  if (f.has("solver")) {
    detail::Fields s(f.at("solver"), "solver");
    std::string g = to_string(c.solver.gradient);
    s.take("gradient", g);
    c.solver.gradient = detail::field_guard("solver.gradient", [&] { return parse_gradient_mode(g); });
    s.take("normalize_noise", c.solver.normalize_noise);
    s.take("lag_transmit", c.solver.lag_transmit);
    s.take("clip_subgradient", c.solver.clip_subgradient);
    s.take("invariant_check_every", c.solver.invariant_check_every);
    s.take("early_stop_tol", c.solver.early_stop_tol);
    s.finish();
  }
  if (f.has("detector")) {
    detail::Fields d(f.at("detector"), "detector");
    std::string b0 = to_string(c.detector.b0_mode);
    d.take("b0_mode", b0);
    c.detector.b0_mode = detail::field_guard("detector.b0_mode", [&] { return parse_anchor_mode(b0); });
    d.take("iota", c.detector.iota);
    d.take("calibration_trials", c.detector.calibration_trials);
    if (d.has("grid")) {
      detail::Fields g(d.at("grid"), "detector.grid");
      g.take("lo", c.detector.grid_lo);
      g.take("hi", c.detector.grid_hi);
      g.take("points", c.detector.grid_points);
      g.finish();
    }
    d.finish();
  }
  if (f.has("sweep")) {
    detail::Fields s(f.at("sweep"), "sweep");
    std::string axis = to_string(c.axis);
    s.take("axis", axis);
    c.axis = detail::field_guard("sweep.axis", [&] { return parse_axis(axis); });
    s.take("values", c.sweep_values);
    s.finish();
    if (c.sweep_values.empty()) throw InvalidConfig("sweep.values: must be nonempty");
  }
  f.take("trials", c.trials);
  if (f.has("modes")) {
    std::vector<std::string> names;
    f.take("modes", names);
    c.modes.clear();
    for (const auto& n : names) {
      c.modes.push_back(detail::field_guard("modes", [&] { return parse_mode(n); }));
    }
  }
  if (f.has("failures")) c.failures = failure_plan_from_json(f.at("failures"));
  f.take("output_dir", c.output_dir);
  f.take("workers", c.workers);
  f.finish();
  validate(c);
  return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
}

/// FNV-1a over the canonical dump of everything that affects results.
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  j.erase("workers");
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- one solve ---------------------------------------------------------------

inline ScenarioConfig apply_axis(ScenarioConfig sc, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::coop_degree: sc.topology.degree = static_cast<int>(std::lround(value)); break;
    case SweepAxis::M: sc.num_antennas = static_cast<int>(std::lround(value)); break;
    case SweepAxis::L: sc.pilot_len = static_cast<int>(std::lround(value)); break;
    case SweepAxis::snr_db: sc.snr_db = value; break;
  }
  return sc;
}

inline SolverOptions solver_options(const ExperimentConfig& c, std::uint64_t seed) {
  SolverOptions o;
  o.hyper = c.hyper;
  o.gradient = c.solver.gradient;
  o.seed = seed;
  o.failures = c.failures;
  o.lag_transmit = c.solver.lag_transmit;
  o.clip_subgradient = c.solver.clip_subgradient;
  o.invariant_check_every = c.solver.invariant_check_every;
  o.early_stop_tol = c.solver.early_stop_tol;
  return o;
}

/// Estimates per AP for one scenario under one mode.
///  cmd:              the full backhaul graph
///  no_coop:          every AP alone, tau = 0, no messages
///  centralized_pool: one fictitious AP on the mean sample covariance; its
///                    estimate is handed to every AP
inline RunResult mode_dispatch(Mode mode, const Scenario& sc, const std::vector<ApObservation>& obs,
                               SolverOptions opt, bool normalize_noise = true) {
  SolverInput in;
  switch (mode) {
    case Mode::cmd:
      in = SolverInput::from(sc, obs, sc.topology);
      break;
    case Mode::no_coop: {
      in = SolverInput::from(sc, obs, sc.topology.isolated());
      opt.hyper.tau = 0.0;
      opt.failures.link_failures.clear();
      opt.failures.drop_prob = 0.0;
      break;
    }
    case Mode::centralized_pool: {
      in.pilots = sc.pilots;
      in.noise_power = sc.noise_power;
      HermitianMatrix mean = HermitianMatrix::Zero(sc.pilots.rows(), sc.pilots.rows());
      for (const auto& o : obs) mean += o.sample_cov;
      mean /= static_cast<double>(obs.size());
      in.sample_covs = {mean};
      in.topology.ap_positions = {Point{}};
      in.topology.neighbors = {{}};
      opt.hyper.tau = 0.0;
      opt.failures = FailurePlan{};
      break;
    }
  }
  const double unit = normalize_noise ? in.noise_power : 1.0;
  RunResult r = run(normalize_noise ? in.rescaled(unit) : in, opt);
  for (auto& g : r.gamma) g *= unit;
  if (mode == Mode::centralized_pool) {
    r.gamma.assign(static_cast<std::size_t>(sc.num_aps()), r.gamma.front());
  }
  return r;
}

struct TrialOutcome {
  std::uint64_t seed = 0;
  std::vector<GammaVector> estimates;
  double noise_power = 0.0;
  int rounds = 0;
  int clamped = 0;
  double final_cost = 0.0;
  RoundStats comm;                       // totals over the run
  std::size_t scalars_first_round = 0;   // attempted scalars in round 1
};

inline TrialOutcome solve_trial(const ExperimentConfig& c, const ScenarioConfig& scfg, Mode mode,
                                std::uint64_t seed, Scenario* scenario_out = nullptr,
                                RunResult* run_out = nullptr) {
  ScenarioConfig sc_cfg = scfg;
  sc_cfg.topology.seed = seed;
  Scenario sc = make_scenario(sc_cfg);
  const auto obs = synthesize(sc, false);
  RunResult r = mode_dispatch(mode, sc, obs, solver_options(c, seed), c.solver.normalize_noise);
  TrialOutcome t;
  t.seed = seed;
  t.noise_power = sc.noise_power;
  t.estimates = r.gamma;
  t.rounds = r.rounds;
  t.clamped = r.clamped;
  const auto costs = r.trace.total_cost_per_round(
      mode == Mode::centralized_pool ? 1 : sc.num_aps());
  t.final_cost = costs.empty() ? 0.0 : costs.back();
  t.comm = r.ledger.totals();
  if (!r.ledger.rounds().empty()) t.scalars_first_round = r.ledger.rounds().front().scalars_sent;
  if (scenario_out) *scenario_out = std::move(sc);
  if (run_out) *run_out = std::move(r);
  return t;
}

// ---- experiment ---------------------------------------------------------------

struct TrialRow {
  double axis_value = 0.0;
  Mode mode = Mode::cmd;
  int trial = 0;
  std::uint64_t seed = 0;
  double iota = 0.0;
  ErrorRates rates;
  int rounds = 0;
  int clamped = 0;
  double final_cost = 0.0;
  RoundStats comm;
  std::size_t scalars_per_round = 0;
};

struct AggregateRow {
  double axis_value = 0.0;
  Mode mode = Mode::cmd;
  double mean_aer = 0.0;
  double stderr_aer = 0.0;
  double mean_missed = 0.0;
  double mean_false_alarm = 0.0;
  double mean_pooled = 0.0;
  int trials = 0;
  double iota = 0.0;
};

struct RunArtifact {
  ExperimentConfig config;
  std::string hash;
  std::vector<TrialRow> trials;
  std::vector<AggregateRow> aggregates;  // sweep value major, then mode
};

inline std::uint64_t trial_seed(std::uint64_t master, int j) {
  return derive_seed(master, {stream::kTrial, static_cast<std::uint64_t>(j)});
}

inline std::uint64_t calibration_seed(std::uint64_t master, int j) {
  return derive_seed(master, {stream::kCalibration, static_cast<std::uint64_t>(j)});
}

/// Runs fn(0..count-1) on up to `workers` threads. Results must go to
/// per-index slots; the first exception is rethrown.
inline void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

inline std::vector<double> sweep_points(const ExperimentConfig& c) {
  if (!c.sweep_values.empty()) return c.sweep_values;
  switch (c.axis) {
    case SweepAxis::coop_degree: return {static_cast<double>(c.scenario.topology.degree)};
    case SweepAxis::M: return {static_cast<double>(c.scenario.num_antennas)};
    case SweepAxis::L: return {static_cast<double>(c.scenario.pilot_len)};
    case SweepAxis::snr_db: return {c.scenario.snr_db};
  }
  return {};
}

/// Calibrated iota for one (sweep point, mode), from held-out seeds.
inline Calibration calibrate_for(const ExperimentConfig& c, const ScenarioConfig& scfg, Mode mode) {
  const int n = c.detector.calibration_trials;
  std::vector<Scenario> scenarios(static_cast<std::size_t>(n));
  std::vector<ValidationRun> runs(static_cast<std::size_t>(n));
  parallel_for(n, c.workers, [&](int j) {
    const auto i = static_cast<std::size_t>(j);
    const TrialOutcome t = solve_trial(c, scfg, mode, calibration_seed(c.seed, j), &scenarios[i]);
    runs[i].estimates = t.estimates;
    runs[i].noise_power = t.noise_power;
  });
  for (int j = 0; j < n; ++j) {
    runs[static_cast<std::size_t>(j)].scenario = &scenarios[static_cast<std::size_t>(j)];
  }
  return calibrate_threshold(
      runs, log_grid(c.detector.grid_lo, c.detector.grid_hi, c.detector.grid_points),
      c.detector.b0_mode);
}

inline double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

/// Standard error of the mean (sample standard deviation over sqrt(n)).
inline double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

inline RunArtifact run_experiment(const ExperimentConfig& c) {
  validate(c);
  RunArtifact art;
  art.config = c;
  art.hash = config_hash(c);
  const auto points = sweep_points(c);

  for (double value : points) {
    const ScenarioConfig scfg = apply_axis(c.scenario, c.axis, value);
    detail::field_guard("sweep", [&] { validate(scfg); return 0; });
    for (Mode mode : c.modes) {
      const double iota =
          c.detector.iota > 0.0 ? c.detector.iota : calibrate_for(c, scfg, mode).iota;
      std::vector<TrialRow> rows(static_cast<std::size_t>(c.trials));
      parallel_for(c.trials, c.workers, [&](int j) {
        Scenario sc;
        const TrialOutcome t = solve_trial(c, scfg, mode, trial_seed(c.seed, j), &sc);
        auto& row = rows[static_cast<std::size_t>(j)];
        row.axis_value = value;
        row.mode = mode;
        row.trial = j;
        row.seed = t.seed;
        row.iota = iota;
        row.rates = detect(t.estimates, sc, t.noise_power, iota, c.detector.b0_mode).rates;
        row.rounds = t.rounds;
        row.clamped = t.clamped;
        row.final_cost = t.final_cost;
        row.comm = t.comm;
        row.scalars_per_round = t.scalars_first_round;
      });
      AggregateRow agg;
      agg.axis_value = value;
      agg.mode = mode;
      agg.trials = c.trials;
      agg.iota = iota;
      std::vector<double> a, m, f, p;
      for (const auto& r : rows) {
        a.push_back(r.rates.aer);
        m.push_back(r.rates.missed);
        f.push_back(r.rates.false_alarm);
        p.push_back(r.rates.pooled);
      }
      agg.mean_aer = mean_of(a);
      agg.stderr_aer = stderr_of(a);
      agg.mean_missed = mean_of(m);
      agg.mean_false_alarm = mean_of(f);
      agg.mean_pooled = mean_of(p);
      art.aggregates.push_back(agg);
      for (auto& r : rows) art.trials.push_back(std::move(r));
    }
  }
  return art;
}

// ---- outputs -------------------------------------------------------------------

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string aggregate_csv(const RunArtifact& art) {
  std::ostringstream out;
  out << "axis_value,mode,mean_aer,stderr,trials\n";
  for (const auto& r : art.aggregates) {
    out << fmt(r.axis_value) << ',' << to_string(r.mode) << ',' << fmt(r.mean_aer) << ','
        << fmt(r.stderr_aer) << ',' << r.trials << '\n';
  }
  return out.str();
}

inline std::string trials_csv(const RunArtifact& art) {
  std::ostringstream out;
  out << "axis_value,mode,trial,seed,config_hash,iota,missed,false_alarm,aer,pooled,rounds,"
         "clamped,final_cost,messages_attempted,messages_delivered,scalars_sent,"
         "scalars_per_round\n";
  for (const auto& r : art.trials) {
    out << fmt(r.axis_value) << ',' << to_string(r.mode) << ',' << r.trial << ',' << r.seed << ','
        << art.hash << ',' << fmt(r.iota) << ',' << fmt(r.rates.missed) << ','
        << fmt(r.rates.false_alarm) << ',' << fmt(r.rates.aer) << ',' << fmt(r.rates.pooled) << ','
        << r.rounds << ',' << r.clamped << ',' << fmt(r.final_cost) << ',' << r.comm.attempted
        << ',' << r.comm.delivered << ',' << r.comm.scalars_sent << ',' << r.scalars_per_round
        << '\n';
  }
  return out.str();
}

inline nlohmann::json summary_json(const RunArtifact& art) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : art.aggregates) {
    rows.push_back({{"axis_value", r.axis_value},
                    {"mode", to_string(r.mode)},
                    {"mean_aer", r.mean_aer},
                    {"stderr", r.stderr_aer},
                    {"mean_missed", r.mean_missed},
                    {"mean_false_alarm", r.mean_false_alarm},
                    {"mean_pooled", r.mean_pooled},
                    {"iota", r.iota},
                    {"trials", r.trials}});
  }
  return {{"config_hash", art.hash},
          {"axis", to_string(art.config.axis)},
          {"config", to_json(art.config)},
          {"aggregates", rows}};
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
  if (!out) throw IoError("write failed: " + p.string());
}

/// Writes aer_vs_<axis>.csv, trials.csv and summary.json into `dir`.
inline std::vector<std::filesystem::path> emit_plotdata(const RunArtifact& art,
                                                        const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::vector<std::filesystem::path> files{
      dir / ("aer_vs_" + std::string(to_string(art.config.axis)) + ".csv"),
      dir / "trials.csv", dir / "summary.json"};
  write_text(files[0], aggregate_csv(art));
  write_text(files[1], trials_csv(art));
  write_text(files[2], summary_json(art).dump(2) + "\n");
  return files;
}

/// One row per (t, b): cost, selected neighbor, messages, payload bytes.
inline std::string trace_csv(const IterationTrace& trace) {
  std::ostringstream out;
  out << "t,b,failed,cost,selected,step,clamped,messages,bytes\n";
  for (const auto& r : trace.records) {
    out << r.round << ',' << r.ap << ',' << (r.failed ? 1 : 0) << ',' << fmt(r.cost) << ','
        << r.selected << ',' << fmt(r.step) << ',' << r.clamped << ',' << r.messages << ','
        << r.bytes() << '\n';
  }
  return out.str();
}

struct TrendCheck {
  bool ok = true;
  int inversions = 0;
  std::string detail;
};

/// Non-increasing means, allowing at most `allowed` rises each no larger than
/// the larger standard error of the two points.
inline TrendCheck non_increasing(const std::vector<AggregateRow>& rows, int allowed = 1) {
  TrendCheck tc;
  std::ostringstream d;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const double rise = rows[i + 1].mean_aer - rows[i].mean_aer;
    if (rise <= 0.0) continue;
    tc.inversions += 1;
    const double se = std::max(rows[i].stderr_aer, rows[i + 1].stderr_aer);
    if (rise > se) {
      tc.ok = false;
      d << "rise " << fmt(rise) << " > stderr " << fmt(se) << " at " << fmt(rows[i + 1].axis_value)
        << "; ";
    }
  }
  if (tc.inversions > allowed) {
    tc.ok = false;
    d << tc.inversions << " inversions; ";
  }
  tc.detail = d.str();
  return tc;
}

inline std::vector<AggregateRow> rows_for(const RunArtifact& art, Mode mode) {
  std::vector<AggregateRow> out;
  for (const auto& r : art.aggregates) {
    if (r.mode == mode) out.push_back(r);
  }
  return out;
}

}  // namespace cmd
