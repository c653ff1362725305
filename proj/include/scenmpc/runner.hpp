#pragma once

#include "scenmpc/config.hpp"

#include <json.hpp>

#include <array>
#include <string>

namespace scenmpc {

struct AgentSummary {
  int id = 0;
  double v_min = 0.0, v_max = 0.0;
  double ax_min = 0.0, ax_max = 0.0;
  double max_deceleration = 0.0;
  double crossing_time = 0.0; // s; NaN when the agent never crosses
};

struct PairSummary {
  int i = 0, l = 0;
  double min_distance = 0.0;
};

struct TraceSummary {
  std::vector<AgentSummary> agents;
  std::vector<PairSummary> pairs;
  std::vector<CollisionEvent> collisions;
  std::vector<int> crossing_order; // agents that crossed, by crossing time
  int collision_count = 0;
};

TraceSummary summarize(const SimTrace& trace, const ConflictTopology& topology,
                       const std::vector<SimAgent>& agents);

nlohmann::json to_json(const TraceSummary& s);

struct RunArtifacts {
  int exit_code = 0;
  nlohmann::json summary;
};

// Dispatch one batch run: certify | simulate | compare | montecarlo.
// Writes the mode's artifacts (trace.csv, summary.json, certify.csv,
// violations.csv) into cfg.out_dir.
RunArtifacts run(const RunConfig& cfg);

// Pieces of run(), exposed for tests and bindings.
SimTrace run_simulation(const ParsedScenario& sc, std::uint64_t seed);
void write_trace_csv(const SimTrace& trace, const std::string& path);
std::string format_double(double v); // 9 significant digits

struct MonteCarloResult {
  int runs = 0;
  int steps_per_run = 0;
  long trials = 0;
  long violations = 0;
  double rate = 0.0;
  double bound = 0.0;      // 1 / (1 + K)
  double ci_margin = 0.0;  // two-sided 95% binomial margin at the bound
  std::vector<std::array<long, 2>> per_run; // (trials, violations)
};

MonteCarloResult run_montecarlo(const ParsedScenario& sc, std::uint64_t seed,
                                int runs);

} // namespace scenmpc
