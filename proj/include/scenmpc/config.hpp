#pragma once

#include "scenmpc/coordination.hpp"
#include "scenmpc/sim.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scenmpc {

/// Error carrying the config-file location (line and JSON path) of the
/// offending entry.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BaselineDriver {
  double kd = 0.0;
  double tau = 0.0;
};

/// Fully parsed scenario file: everything needed to build controllers and
/// run the closed-loop simulation.
struct ParsedScenario {
  ControllerConfig controller;
  DriverUncertaintyBounds default_bounds;
  SimConfig sim;
  std::vector<SimAgent> agents;
  ConflictTopology topology;
  PriorityMap gamma;
  std::map<int, BaselineDriver> baseline_drivers;
  int montecarlo_runs = 200;
};

/// One batch invocation: which config, which mode, where to write.
struct RunConfig {
  std::string config_path;
  std::string mode = "simulate"; // certify | simulate | compare | montecarlo
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  std::optional<int> scenarios_override; // K
  std::optional<int> horizon_override;   // N
  std::optional<CostWeights> weights_override;
};

ParsedScenario load_scenario_file(const std::string& path);
ParsedScenario parse_scenario_text(const std::string& text,
                                   const std::string& origin = "<string>");

// Swap the controllers to the single-realization baseline: one scenario,
// point uncertainty at the configured baseline drivers, zero offsets.
ParsedScenario make_baseline(const ParsedScenario& sc);

void apply_overrides(ParsedScenario& sc, const RunConfig& rc);

} // namespace scenmpc
