// Command-line front end: run / calibrate / fixture / inspect.

#include "cmd/harness.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> modes;
  std::string sweep;  // axis=v1,v2,...
  std::string out;
  std::optional<int> trials;
  std::string failure_plan;
  std::optional<int> workers;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "master seed (overrides the config)");
  app->add_option("--mode", c.modes, "cmd, no_coop or centralized_pool (repeatable)");
  app->add_option("--sweep", c.sweep, "sweep as axis=v1,v2,... (coop_degree, M, L, snr_db)");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--trials", c.trials, "Monte-Carlo trials per sweep point");
  app->add_option("--failure-plan", c.failure_plan, "failure plan (JSON)")
      ->check(CLI::ExistingFile);
  app->add_option("--workers", c.workers, "worker threads");
}

cmd::ExperimentConfig load(const Common& c) {
  nlohmann::json j = c.config.empty() ? nlohmann::json::object() : cmd::read_json_file(c.config);
  if (c.seed) j["seed"] = *c.seed;
  if (!c.modes.empty()) j["modes"] = c.modes;
  if (c.trials) j["trials"] = *c.trials;
  if (!c.out.empty()) j["output_dir"] = c.out;
  if (c.workers) j["workers"] = *c.workers;
  if (!c.failure_plan.empty()) j["failures"] = cmd::read_json_file(c.failure_plan);
  if (!c.sweep.empty()) {
    const auto eq = c.sweep.find('=');
    if (eq == std::string::npos) throw cmd::InvalidConfig("--sweep: expected axis=v1,v2,...");
    std::vector<double> values;
    std::string rest = c.sweep.substr(eq + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      const auto comma = rest.find(',', pos);
      const std::string tok = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      try {
        values.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw cmd::InvalidConfig("--sweep: bad value '" + tok + "'");
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    j["sweep"] = {{"axis", c.sweep.substr(0, eq)}, {"values", values}};
  }
  return cmd::experiment_from_json(j);
}

int do_run(const Common& c) {
  const auto cfg = load(c);
  const auto art = cmd::run_experiment(cfg);
  const auto files = cmd::emit_plotdata(art, cfg.output_dir);
  std::cout << cmd::aggregate_csv(art);
  for (const auto& f : files) std::cerr << "wrote " << f.string() << "\n";
  return 0;
}

int do_calibrate(const Common& c) {
  const auto cfg = load(c);
  for (double v : cmd::sweep_points(cfg)) {
    const auto scfg = cmd::apply_axis(cfg.scenario, cfg.axis, v);
    for (auto mode : cfg.modes) {
      const auto cal = cmd::calibrate_for(cfg, scfg, mode);
      std::printf("%s=%s mode=%s iota=%s mean_aer=%s\n", cmd::to_string(cfg.axis),
                  cmd::fmt(v).c_str(), cmd::to_string(mode), cmd::fmt(cal.iota).c_str(),
                  cmd::fmt(cal.mean_aer).c_str());
    }
  }
  return 0;
}

int do_fixture(const Common& c) {
  const auto cfg = load(c);
  cmd::ScenarioConfig scfg = cfg.scenario;
  scfg.topology.seed = cfg.seed;
  const auto sc = cmd::make_scenario(scfg);
  const auto obs = cmd::synthesize(sc, false);
  const std::string text = cmd::scenario_to_json(sc, &obs).dump(1) + "\n";
  if (c.out.empty()) {
    std::cout << text;
  } else {
    std::filesystem::create_directories(c.out);
    const auto p = std::filesystem::path(c.out) / "scenario.json";
    cmd::write_text(p, text);
    std::cerr << "wrote " << p.string() << "\n";
  }
  return 0;
}

int do_inspect(const Common& c) {
  const auto cfg = load(c);
  const auto mode = cfg.modes.front();
  const auto scfg = cmd::apply_axis(cfg.scenario, cfg.axis, cmd::sweep_points(cfg).front());
  cmd::Scenario sc;
  cmd::RunResult r;
  const auto t = cmd::solve_trial(cfg, scfg, mode, cmd::trial_seed(cfg.seed, 0), &sc, &r);
  const int aps = mode == cmd::Mode::centralized_pool ? 1 : sc.num_aps();
  const auto costs = r.trace.total_cost_per_round(aps);
  std::printf("mode=%s rounds=%d clamped=%d wall=%.3fs\n", cmd::to_string(mode), r.rounds,
              r.clamped, r.wall_seconds);
  std::printf("round,total_cost,attempted,delivered,dropped,scalars\n");
  for (std::size_t i = 0; i < r.ledger.rounds().size(); ++i) {
    const auto& s = r.ledger.rounds()[i];
    std::printf("%d,%s,%zu,%zu,%zu,%zu\n", s.round, cmd::fmt(costs[i]).c_str(), s.attempted,
                s.delivered, s.dropped, s.scalars_sent);
  }
  double per_iter = 0.0;
  for (const auto& rec : r.trace.records) per_iter += rec.wall_seconds;
  std::printf("mean per-AP iteration: %.3g ms\n",
              1e3 * per_iter / static_cast<double>(std::max<std::size_t>(1, r.trace.records.size())));
  if (!c.out.empty()) {
    std::filesystem::create_directories(c.out);
    cmd::write_text(std::filesystem::path(c.out) / "trace.csv", cmd::trace_csv(r.trace));
  }
  (void)t;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cooperative activity detection experiments"};
  app.require_subcommand(1);
  Common common;
  auto* run = app.add_subcommand("run", "Monte-Carlo experiment, writes CSV and JSON");
  auto* cal = app.add_subcommand("calibrate", "calibrate the detection threshold");
  auto* fix = app.add_subcommand("fixture", "emit a pinned scenario as JSON");
  auto* ins = app.add_subcommand("inspect", "per-round trace of one trial");
  for (auto* s : {run, cal, fix, ins}) add_common(s, common);
  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return do_run(common);
    if (cal->parsed()) return do_calibrate(common);
    if (fix->parsed()) return do_fixture(common);
    if (ins->parsed()) return do_inspect(common);
  } catch (const cmd::InvalidConfig& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
