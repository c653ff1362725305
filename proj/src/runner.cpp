#include "scenmpc/runner.hpp"

#include "scenmpc/rng.hpp"
#include "scenmpc/stability.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace scenmpc {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::vector<AgentController> build_controllers(const ParsedScenario& sc,
                                               std::uint64_t seed) {
  ControllerConfig cc = sc.controller;
  cc.seed = seed;
  std::map<int, VehicleParams> vehicles;
  for (const SimAgent& a : sc.agents) vehicles[a.params.id] = a.params.vehicle;
  std::vector<AgentController> out;
  out.reserve(sc.agents.size());
  for (const SimAgent& a : sc.agents) {
    out.emplace_back(a.params, cc, sc.topology, sc.gamma, vehicles);
  }
  return out;
}

std::vector<SimAgent> seeded_agents(const ParsedScenario& sc,
                                    std::uint64_t seed) {
  std::vector<SimAgent> agents = sc.agents;
  for (SimAgent& a : agents) {
    const DvSchedule& dv = a.truth.dv;
    a.truth.dv = DvSchedule(
        dv.base(), dv.amplitude(), dv.period(),
        mix64(seed ^ mix64(0xd5 + static_cast<std::uint64_t>(a.params.id))));
  }
  return agents;
}

double own_crossing_reference(const ConflictTopology& topo, int id) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (int l : topo.conflicting(id)) {
    const double sc = topo.collision_point(id, l);
    lo = std::min(lo, sc);
    hi = std::max(hi, sc);
  }
  if (!std::isfinite(lo)) return kNan;
  return 0.5 * (lo + hi);
}

} // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

SimTrace run_simulation(const ParsedScenario& sc, std::uint64_t seed) {
  const std::vector<SimAgent> agents = seeded_agents(sc, seed);
  std::vector<AgentController> controllers = build_controllers(sc, seed);
  return simulate(agents, sc.topology, sc.gamma, controllers, sc.sim);
}

TraceSummary summarize(const SimTrace& trace, const ConflictTopology& topology,
                       const std::vector<SimAgent>& agents) {
  TraceSummary out;
  std::map<int, AgentSummary> per_agent;
  std::map<int, double> crossing_ref, crossing_time;
  for (const SimAgent& a : agents) {
    AgentSummary s;
    s.id = a.params.id;
    s.v_min = std::numeric_limits<double>::infinity();
    s.v_max = -std::numeric_limits<double>::infinity();
    s.ax_min = std::numeric_limits<double>::infinity();
    s.ax_max = -std::numeric_limits<double>::infinity();
    s.crossing_time = kNan;
    per_agent[s.id] = s;
    crossing_ref[s.id] = own_crossing_reference(topology, s.id);
  }

  std::map<std::pair<int, int>, double> pair_min;
  for (const auto& pr : topology.pairs()) {
    pair_min[pr] = std::numeric_limits<double>::infinity();
  }

  std::map<int, double> last_s;
  for (const TraceRow& row : trace.rows) {
    AgentSummary& s = per_agent.at(row.agent);
    s.v_min = std::min(s.v_min, row.v);
    s.v_max = std::max(s.v_max, row.v);
    s.ax_min = std::min(s.ax_min, row.ax);
    s.ax_max = std::max(s.ax_max, row.ax);
    const double ref = crossing_ref.at(row.agent);
    if (std::isfinite(ref) && std::isnan(per_agent.at(row.agent).crossing_time) &&
        row.s >= ref) {
      per_agent.at(row.agent).crossing_time = row.t;
    }
    last_s[row.agent] = row.s;
  }

  // pairwise minimum distances from synchronized rows
  std::map<int, std::map<double, double>> s_by_agent_time;
  for (const TraceRow& row : trace.rows) {
    s_by_agent_time[row.agent][row.t] = row.s;
  }
  for (auto& [pr, dmin] : pair_min) {
    const auto& si = s_by_agent_time.at(pr.first);
    const auto& sl = s_by_agent_time.at(pr.second);
    const double sc_il = topology.collision_point(pr.first, pr.second);
    const double sc_li = topology.collision_point(pr.second, pr.first);
    for (const auto& [t, s_i] : si) {
      const auto it = sl.find(t);
      if (it == sl.end()) continue;
      dmin = std::min(dmin, pairwise_distance(s_i, sc_il, it->second, sc_li));
    }
  }

  for (const auto& [id, s] : per_agent) {
    AgentSummary copy = s;
    copy.max_deceleration = copy.ax_min < 0.0 ? -copy.ax_min : 0.0;
    out.agents.push_back(copy);
  }
  for (const auto& [pr, dmin] : pair_min) {
    out.pairs.push_back({pr.first, pr.second, dmin});
  }
  out.collisions = trace.collisions;
  out.collision_count = static_cast<int>(trace.collisions.size());

  std::vector<std::pair<double, int>> order;
  for (const auto& [id, s] : per_agent) {
    if (!std::isnan(s.crossing_time)) order.emplace_back(s.crossing_time, id);
  }
  std::sort(order.begin(), order.end());
  for (const auto& [t, id] : order) out.crossing_order.push_back(id);
  return out;
}

nlohmann::json to_json(const TraceSummary& s) {
  nlohmann::json j;
  j["agents"] = nlohmann::json::array();
  for (const AgentSummary& a : s.agents) {
    nlohmann::json ja;
    ja["id"] = a.id;
    ja["v_min"] = a.v_min;
    ja["v_max"] = a.v_max;
    ja["ax_min"] = a.ax_min;
    ja["ax_max"] = a.ax_max;
    ja["max_deceleration"] = a.max_deceleration;
    if (std::isnan(a.crossing_time)) {
      ja["crossing_time"] = nullptr;
    } else {
      ja["crossing_time"] = a.crossing_time;
    }
    j["agents"].push_back(ja);
  }
  j["pairs"] = nlohmann::json::array();
  for (const PairSummary& p : s.pairs) {
    j["pairs"].push_back({{"i", p.i}, {"l", p.l}, {"min_distance", p.min_distance}});
  }
  j["collisions"] = nlohmann::json::array();
  for (const CollisionEvent& c : s.collisions) {
    j["collisions"].push_back(
        {{"i", c.i}, {"l", c.l}, {"t", c.t}, {"s_i", c.s_i}, {"s_l", c.s_l}});
  }
  j["collision_count"] = s.collision_count;
  j["crossing_order"] = s.crossing_order;
  return j;
}

void write_trace_csv(const SimTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "t,agent,s,v,a_x,advice,dv,margin_v,margin_a,min_pair_distance,"
         "collision,ccp_iters,ccp_slack,ccp_objective,qp_status,"
         "soft_infeasible,mean_v_armed\n";

  std::map<std::pair<long, int>, const TickRecord*> tick_at;
  const double h = trace.fine_step;
  const long nsub = std::lround(trace.controller_period / trace.fine_step);
  for (const TickRecord& tr : trace.ticks) {
    tick_at[{static_cast<long>(tr.step) * nsub, tr.agent}] = &tr;
  }

  for (const TraceRow& row : trace.rows) {
    const long n = std::lround(row.t / h);
    out << format_double(row.t) << ',' << row.agent << ','
        << format_double(row.s) << ',' << format_double(row.v) << ','
        << format_double(row.ax) << ',' << format_double(row.advice) << ','
        << format_double(row.dv) << ',' << format_double(row.margin_v) << ','
        << format_double(row.margin_a) << ','
        << format_double(row.min_pair_distance) << ','
        << (row.collision ? 1 : 0);
    const auto it = tick_at.find({n, row.agent});
    if (it != tick_at.end()) {
      const TickRecord& tr = *it->second;
      out << ',' << tr.diagnostics.ccp_iterations << ','
          << format_double(tr.diagnostics.final_slack) << ','
          << format_double(tr.diagnostics.objective) << ','
          << to_string(tr.diagnostics.qp_status) << ','
          << (tr.diagnostics.soft_infeasible ? 1 : 0) << ','
          << (tr.mean_v_armed ? 1 : 0);
    } else {
      out << ",,,,,,";
    }
    out << '\n';
  }
}

MonteCarloResult run_montecarlo(const ParsedScenario& sc, std::uint64_t seed,
                                int runs) {
  if (sc.agents.size() != 1) {
    throw ConfigError("montecarlo mode needs exactly one agent");
  }
  MonteCarloResult res;
  res.runs = runs;
  res.steps_per_run = sc.sim.controller_ticks();
  res.bound = 1.0 / (1.0 + sc.controller.num_scenarios);
  res.per_run.assign(static_cast<size_t>(runs), {0, 0});

#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < runs; ++r) {
    ParsedScenario local = sc;
    SimAgent& agent = local.agents[0];
    const std::uint64_t run_seed = mix64(seed ^ mix64(0xac0ffee ^ static_cast<std::uint64_t>(r)));
    // truth driver resampled from the same box the controller samples
    SplitMix64 rng(run_seed);
    const DriverUncertaintyBounds& b = agent.params.bounds;
    agent.truth.kd = rng.uniform(b.kd_min, b.kd_max);
    agent.truth.tau = rng.uniform(b.tau_min, b.tau_max);
    // stepwise offsets, one fresh draw per controller period
    agent.truth.dv =
        DvSchedule(0.5 * (b.dv_min + b.dv_max), 0.5 * (b.dv_max - b.dv_min),
                   local.controller.t_s, rng.next_u64());

    std::vector<AgentController> controllers = build_controllers(local, run_seed);
    const SimTrace trace =
        simulate(local.agents, local.topology, local.gamma, controllers, local.sim);

    // realized state at each next tick against the state constraint set
    const long nsub = std::lround(trace.controller_period / trace.fine_step);
    long trials = 0, violations = 0;
    for (int k = 0; k < res.steps_per_run; ++k) {
      const size_t row_idx = static_cast<size_t>((k + 1) * nsub);
      if (row_idx >= trace.rows.size()) break;
      const TraceRow& row = trace.rows[row_idx];
      ++trials;
      const bool ok = row.ax >= agent.params.a_min - 1e-9 &&
                      row.ax <= agent.params.a_max + 1e-9 &&
                      row.v >= -1e-9 && row.v <= agent.params.v_upper + 1e-9;
      if (!ok) ++violations;
    }
    res.per_run[static_cast<size_t>(r)] = {trials, violations};
  }

  for (const auto& [trials, violations] : res.per_run) {
    res.trials += trials;
    res.violations += violations;
  }
  res.rate = res.trials > 0
                 ? static_cast<double>(res.violations) / static_cast<double>(res.trials)
                 : 0.0;
  res.ci_margin = res.trials > 0
                      ? 1.96 * std::sqrt(res.bound * (1.0 - res.bound) /
                                         static_cast<double>(res.trials))
                      : 0.0;
  return res;
}

namespace {

RunArtifacts run_certify(const ParsedScenario& sc, const RunConfig& cfg) {
  const VehicleParams& vehicle = sc.agents.front().params.vehicle;
  const DriverUncertaintyBounds& bounds = sc.default_bounds;

  const std::vector<RadiusSample> samples = sample_spectral_radii(
      sc.controller.kv, bounds, vehicle, sc.controller.t_s, 2000, cfg.seed);

  std::ofstream csv(std::filesystem::path(cfg.out_dir) / "certify.csv");
  csv << "kd,tau,spectral_radius\n";
  int unstable = 0;
  double worst = 0.0;
  for (const RadiusSample& s : samples) {
    csv << format_double(s.kd) << ',' << format_double(s.tau) << ','
        << format_double(s.spectral_radius) << '\n';
    if (!s.schur) ++unstable;
    worst = std::max(worst, s.spectral_radius);
  }

  GainSearchConfig gs;
  gs.rng_seed = cfg.seed;
  gs.sample_count = 150;
  const auto interval =
      search_gain(bounds, vehicle, sc.controller.t_s, gs);

  RunArtifacts art;
  art.summary["mode"] = "certify";
  art.summary["kv"] = sc.controller.kv;
  art.summary["samples"] = static_cast<int>(samples.size());
  art.summary["unstable_samples"] = unstable;
  art.summary["worst_spectral_radius"] = worst;
  if (interval) {
    art.summary["certified_interval"] = {{"kv_lo", interval->kv_lo},
                                         {"kv_hi", interval->kv_hi},
                                         {"kv_recommended", interval->kv_recommended}};
  } else {
    art.summary["certified_interval"] = nullptr;
    art.exit_code = 1;
  }
  if (unstable > 0) art.exit_code = 1;
  return art;
}

} // namespace

RunArtifacts run(const RunConfig& cfg) {
  RunArtifacts art;
  try {
    ParsedScenario sc = load_scenario_file(cfg.config_path);
    apply_overrides(sc, cfg);
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path out(cfg.out_dir);

    if (cfg.mode == "certify") {
      art = run_certify(sc, cfg);
    } else if (cfg.mode == "simulate") {
      const SimTrace trace = run_simulation(sc, cfg.seed);
      write_trace_csv(trace, (out / "trace.csv").string());
      const TraceSummary sum = summarize(trace, sc.topology, sc.agents);
      art.summary = to_json(sum);
      art.summary["mode"] = "simulate";
    } else if (cfg.mode == "compare") {
      const SimTrace trace = run_simulation(sc, cfg.seed);
      write_trace_csv(trace, (out / "trace.csv").string());
      const TraceSummary stochastic = summarize(trace, sc.topology, sc.agents);

      const ParsedScenario base = make_baseline(sc);
      const SimTrace trace_base = run_simulation(base, cfg.seed);
      write_trace_csv(trace_base, (out / "trace_baseline.csv").string());
      const TraceSummary baseline = summarize(trace_base, base.topology, base.agents);

      art.summary["mode"] = "compare";
      art.summary["stochastic"] = to_json(stochastic);
      art.summary["baseline"] = to_json(baseline);
      art.summary["diff"] = {
          {"stochastic_collisions", stochastic.collision_count},
          {"baseline_collisions", baseline.collision_count}};
    } else if (cfg.mode == "montecarlo") {
      const MonteCarloResult mc = run_montecarlo(sc, cfg.seed, sc.montecarlo_runs);
      std::ofstream csv(out / "violations.csv");
      csv << "run,trials,violations\n";
      for (size_t r = 0; r < mc.per_run.size(); ++r) {
        csv << r << ',' << mc.per_run[r][0] << ',' << mc.per_run[r][1] << '\n';
      }
      art.summary["mode"] = "montecarlo";
      art.summary["runs"] = mc.runs;
      art.summary["steps_per_run"] = mc.steps_per_run;
      art.summary["trials"] = mc.trials;
      art.summary["violations"] = mc.violations;
      art.summary["rate"] = mc.rate;
      art.summary["bound"] = mc.bound;
      art.summary["ci_margin"] = mc.ci_margin;
      art.summary["within_bound"] = mc.rate <= mc.bound + mc.ci_margin;
    } else {
      std::cerr << "unknown mode: " << cfg.mode << "\n";
      art.exit_code = 2;
      return art;
    }

    std::ofstream sj(out / "summary.json");
    sj << art.summary.dump(2) << '\n';
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    art.exit_code = 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    art.exit_code = 1;
  }
  return art;
}

} // namespace scenmpc
