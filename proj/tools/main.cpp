#include "scenmpc/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

void add_common(CLI::App* app, scenmpc::RunConfig& cfg, int& scenarios,
                int& horizon) {
  app->add_option("--config", cfg.config_path, "scenario file (JSON)")
      ->required();
  app->add_option("--seed", cfg.seed, "master random seed");
  app->add_option("--out", cfg.out_dir, "output directory");
  app->add_option("--scenarios", scenarios, "override scenario count K");
  app->add_option("--horizon", horizon, "override horizon length N");
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"scenario-based speed advisory for signal-free intersections"};
  app.require_subcommand(0, 1);

  scenmpc::RunConfig cfg;
  int scenarios = -1, horizon = -1;
  std::string mode_flag;

  app.add_option("--config", cfg.config_path, "scenario file (JSON)");
  app.add_option("--mode", mode_flag,
                 "certify | simulate | compare | montecarlo");
  app.add_option("--seed", cfg.seed, "master random seed");
  app.add_option("--out", cfg.out_dir, "output directory");
  app.add_option("--scenarios", scenarios, "override scenario count K");
  app.add_option("--horizon", horizon, "override horizon length N");

  scenmpc::RunConfig sub_cfg;
  int sub_scenarios = -1, sub_horizon = -1;
  CLI::App* certify = app.add_subcommand("certify", "stability scatter + gain interval");
  CLI::App* simulate = app.add_subcommand("simulate", "closed-loop run");
  CLI::App* compare = app.add_subcommand("compare", "stochastic vs baseline run");
  CLI::App* montecarlo = app.add_subcommand("montecarlo", "violation-rate study");
  for (CLI::App* sub : {certify, simulate, compare, montecarlo}) {
    add_common(sub, sub_cfg, sub_scenarios, sub_horizon);
  }

  CLI11_PARSE(app, argc, argv);

  if (app.get_subcommands().size() == 1) {
    CLI::App* sub = app.get_subcommands().front();
    sub_cfg.mode = sub->get_name();
    if (sub_scenarios > 0) sub_cfg.scenarios_override = sub_scenarios;
    if (sub_horizon > 0) sub_cfg.horizon_override = sub_horizon;
    cfg = sub_cfg;
  } else {
    if (cfg.config_path.empty() || mode_flag.empty()) {
      std::cerr << "need a subcommand or both --config and --mode\n";
      return 2;
    }
    cfg.mode = mode_flag;
    if (scenarios > 0) cfg.scenarios_override = scenarios;
    if (horizon > 0) cfg.horizon_override = horizon;
  }

  const scenmpc::RunArtifacts art = scenmpc::run(cfg);
  if (art.exit_code == 0) {
    std::cout << art.summary.dump(2) << "\n";
  }
  return art.exit_code;
}
