#include "scenmpc/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace scenmpc {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& origin, const std::string& where,
                       const std::string& what) {
  throw ConfigError(origin + ": " + where + ": " + what);
}

int line_of_offset(const std::string& text, size_t byte) {
  int line = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

double require_number(const json& j, const std::string& origin,
                      const std::string& where) {
  if (!j.is_number()) fail(origin, where, "expected a number");
  return j.get<double>();
}

double get_number(const json& j, const char* key, double fallback,
                  const std::string& origin, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return require_number(j.at(key), origin, where + "." + key);
}

int get_int(const json& j, const char* key, int fallback,
            const std::string& origin, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer()) fail(origin, where + "." + key, "expected an integer");
  return v.get<int>();
}

DriverUncertaintyBounds parse_bounds(const json& j, const std::string& origin,
                                     const std::string& where) {
  DriverUncertaintyBounds b;
  const auto interval = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_array() || v.size() != 2) {
      fail(origin, where + "." + key, "expected [min, max]");
    }
    lo = require_number(v[0], origin, where + "." + key + "[0]");
    hi = require_number(v[1], origin, where + "." + key + "[1]");
  };
  interval("kd", b.kd_min, b.kd_max);
  interval("tau", b.tau_min, b.tau_max);
  interval("dv", b.dv_min, b.dv_max);
  try {
    b.validate();
  } catch (const std::invalid_argument& e) {
    fail(origin, where, e.what());
  }
  return b;
}

void parse_topology(const json& j, const std::vector<SimAgent>& agents,
                    ConflictTopology& topo, const std::string& origin) {
  if (j.contains("template")) {
    const std::string name = j.at("template").get<std::string>();
    if (name != "fourway") fail(origin, "topology.template", "unknown template");
    if (agents.size() != 4) {
      fail(origin, "topology.template", "fourway template needs exactly 4 agents");
    }
    const double w = get_number(j, "lane_offset", 1.75, origin, "topology");
    // four straight perpendicular crossings; each path meets the two
    // cross-traffic lanes 2*lane_offset apart, origin at the first one
    const int a1 = agents[0].params.id, a2 = agents[1].params.id;
    const int a3 = agents[2].params.id, a4 = agents[3].params.id;
    ConflictTopology t;
    t.add_conflict(a1, a2, 0.0, 2.0 * w);
    t.add_conflict(a1, a3, 2.0 * w, 0.0);
    t.add_conflict(a2, a4, 0.0, 2.0 * w);
    t.add_conflict(a3, a4, 2.0 * w, 0.0);
    topo = t;
    return;
  }
  if (!j.contains("collision_points")) {
    fail(origin, "topology", "need either template or collision_points");
  }
  const json& pts = j.at("collision_points");
  if (!pts.is_array()) fail(origin, "topology.collision_points", "expected an array");
  for (size_t n = 0; n < pts.size(); ++n) {
    const json& p = pts[n];
    const std::string where = "topology.collision_points[" + std::to_string(n) + "]";
    if (!p.contains("i") || !p.contains("l") || !p.contains("s_i") ||
        !p.contains("s_l")) {
      fail(origin, where, "need fields i, l, s_i, s_l");
    }
    topo.add_conflict(p.at("i").get<int>(), p.at("l").get<int>(),
                      require_number(p.at("s_i"), origin, where + ".s_i"),
                      require_number(p.at("s_l"), origin, where + ".s_l"));
  }
}

} // namespace

ParsedScenario parse_scenario_text(const std::string& text,
                                   const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ":" + std::to_string(line_of_offset(text, e.byte)) +
                      ": " + e.what());
  }

  ParsedScenario sc;

  const json& ctrl = root.value("controller", json::object());
  sc.controller.t_s = get_number(ctrl, "sample_time", 0.25, origin, "controller");
  sc.controller.horizon = get_int(ctrl, "horizon", 40, origin, "controller");
  sc.controller.num_scenarios = get_int(ctrl, "scenarios", 99, origin, "controller");
  sc.controller.kv = get_number(ctrl, "kv", -0.59, origin, "controller");
  if (sc.controller.t_s <= 0.0) fail(origin, "controller.sample_time", "must be positive");
  if (sc.controller.horizon < 1) fail(origin, "controller.horizon", "must be >= 1");
  if (sc.controller.num_scenarios < 1) fail(origin, "controller.scenarios", "must be >= 1");
  if (sc.controller.kv > 0.0) fail(origin, "controller.kv", "must be <= 0");

  if (ctrl.contains("ccp")) {
    const json& c = ctrl.at("ccp");
    sc.controller.ccp.penalty_mu0 =
        get_number(c, "mu0", sc.controller.ccp.penalty_mu0, origin, "controller.ccp");
    sc.controller.ccp.penalty_growth =
        get_number(c, "growth", sc.controller.ccp.penalty_growth, origin, "controller.ccp");
    sc.controller.ccp.penalty_mu_max =
        get_number(c, "mu_max", sc.controller.ccp.penalty_mu_max, origin, "controller.ccp");
    sc.controller.ccp.max_iters =
        get_int(c, "max_iters", sc.controller.ccp.max_iters, origin, "controller.ccp");
    sc.controller.ccp.convergence_tol = get_number(
        c, "convergence_tol", sc.controller.ccp.convergence_tol, origin, "controller.ccp");
    sc.controller.ccp.slack_feasible_tol = get_number(
        c, "slack_tol", sc.controller.ccp.slack_feasible_tol, origin, "controller.ccp");
    sc.controller.ccp.linearization_window = get_number(
        c, "window", sc.controller.ccp.linearization_window, origin, "controller.ccp");
    try {
      sc.controller.ccp.validate();
    } catch (const std::invalid_argument& e) {
      fail(origin, "controller.ccp", e.what());
    }
  }
  if (ctrl.contains("qp")) {
    const json& q = ctrl.at("qp");
    sc.controller.qp.step_rho =
        get_number(q, "rho", sc.controller.qp.step_rho, origin, "controller.qp");
    sc.controller.qp.relaxation_alpha =
        get_number(q, "alpha", sc.controller.qp.relaxation_alpha, origin, "controller.qp");
    sc.controller.qp.abs_tol =
        get_number(q, "abs_tol", sc.controller.qp.abs_tol, origin, "controller.qp");
    sc.controller.qp.rel_tol =
        get_number(q, "rel_tol", sc.controller.qp.rel_tol, origin, "controller.qp");
    sc.controller.qp.max_iters =
        get_int(q, "max_iters", sc.controller.qp.max_iters, origin, "controller.qp");
    if (q.contains("polish")) sc.controller.qp.polish = q.at("polish").get<bool>();
  }

  sc.default_bounds =
      parse_bounds(ctrl.value("bounds", json::object()), origin, "controller.bounds");

  const json& sim = root.value("sim", json::object());
  sc.sim.fine_step = get_number(sim, "fine_step", 0.01, origin, "sim");
  sc.sim.duration = get_number(sim, "duration", 25.0, origin, "sim");
  sc.sim.controller_period = sc.controller.t_s;
  try {
    sc.sim.validate();
  } catch (const std::invalid_argument& e) {
    fail(origin, "sim", e.what());
  }

  if (!root.contains("agents") || !root.at("agents").is_array() ||
      root.at("agents").empty()) {
    fail(origin, "agents", "need a non-empty agent list");
  }
  std::set<int> ids;
  for (size_t n = 0; n < root.at("agents").size(); ++n) {
    const json& a = root.at("agents")[n];
    const std::string where = "agents[" + std::to_string(n) + "]";
    SimAgent agent;
    AgentParams& p = agent.params;
    p.id = get_int(a, "id", static_cast<int>(n) + 1, origin, where);
    if (!ids.insert(p.id).second) fail(origin, where + ".id", "duplicate agent id");

    if (a.contains("vehicle")) {
      const json& v = a.at("vehicle");
      p.vehicle.length = get_number(v, "length", 4.87, origin, where + ".vehicle");
      p.vehicle.width = get_number(v, "width", 1.85, origin, where + ".vehicle");
      p.vehicle.drivetrain_time_constant =
          get_number(v, "t_ax", 0.3, origin, where + ".vehicle");
    }
    try {
      p.vehicle.validate();
    } catch (const std::invalid_argument& e) {
      fail(origin, where + ".vehicle", e.what());
    }

    p.bounds = a.contains("bounds")
                   ? parse_bounds(a.at("bounds"), origin, where + ".bounds")
                   : sc.default_bounds;
    p.v_set = get_number(a, "v_set", 13.9, origin, where);
    p.v_upper = get_number(a, "v_upper", 1.1 * p.v_set, origin, where);
    p.a_min = get_number(a, "a_min", -7.0, origin, where);
    p.a_max = get_number(a, "a_max", 4.0, origin, where);
    if (a.contains("weights")) {
      const json& w = a.at("weights");
      p.weights.q = get_number(w, "q", 0.5, origin, where + ".weights");
      p.weights.r = get_number(w, "r", 20.0, origin, where + ".weights");
      p.weights.s_a = get_number(w, "s_a", 5.0, origin, where + ".weights");
      p.weights.s_da = get_number(w, "s_da", 1.0, origin, where + ".weights");
    }
    try {
      p.weights.validate();
    } catch (const std::invalid_argument& e) {
      fail(origin, where + ".weights", e.what());
    }
    if (a.contains("mean_v")) {
      const json& m = a.at("mean_v");
      p.v_mean_min = get_number(m, "min", 5.0, origin, where + ".mean_v");
      p.mean_v_activation_distance =
          get_number(m, "activation_distance", 40.0, origin, where + ".mean_v");
    }
    p.safety_margin = get_number(a, "safety_margin", 0.5, origin, where);

    if (!a.contains("initial")) fail(origin, where, "missing initial state");
    p.initial_s = require_number(a.at("initial").at("s"), origin, where + ".initial.s");
    p.initial_v = require_number(a.at("initial").at("v"), origin, where + ".initial.v");

    if (a.contains("truth")) {
      const json& t = a.at("truth");
      agent.truth.kd = get_number(t, "kd", 0.8, origin, where + ".truth");
      agent.truth.tau = get_number(t, "tau", 1.0, origin, where + ".truth");
      if (agent.truth.kd <= 0.0) fail(origin, where + ".truth.kd", "must be positive");
      if (agent.truth.tau < 0.0) fail(origin, where + ".truth.tau", "must be nonnegative");
      const double base = get_number(t, "dv_base", 0.0, origin, where + ".truth");
      const double amp = get_number(t, "dv_amplitude", 0.0, origin, where + ".truth");
      const double period = get_number(t, "dv_period", 2.0, origin, where + ".truth");
      agent.truth.dv = DvSchedule(base, amp, period, 0); // seeded by the runner
      const std::string mode = t.value("mode", "continuous");
      if (mode == "continuous") {
        agent.truth.mode = TruthDriver::Mode::continuous_delay;
      } else if (mode == "digital") {
        agent.truth.mode = TruthDriver::Mode::digital;
      } else {
        fail(origin, where + ".truth.mode", "expected continuous or digital");
      }
    }

    const int gamma = get_int(a, "priority", static_cast<int>(n) + 1, origin, where);
    sc.gamma.gamma[p.id] = gamma;
    sc.agents.push_back(std::move(agent));
  }
  try {
    sc.gamma.validate();
  } catch (const std::invalid_argument& e) {
    fail(origin, "agents[].priority", e.what());
  }

  if (root.contains("topology")) {
    parse_topology(root.at("topology"), sc.agents, sc.topology, origin);
  }

  if (root.contains("baseline")) {
    const json& b = root.at("baseline");
    if (!b.contains("drivers") || !b.at("drivers").is_array()) {
      fail(origin, "baseline.drivers", "expected an array");
    }
    for (size_t n = 0; n < b.at("drivers").size(); ++n) {
      const json& d = b.at("drivers")[n];
      const std::string where = "baseline.drivers[" + std::to_string(n) + "]";
      const int id = get_int(d, "id", -1, origin, where);
      if (!ids.count(id)) fail(origin, where + ".id", "unknown agent id");
      BaselineDriver bd;
      bd.kd = require_number(d.at("kd"), origin, where + ".kd");
      bd.tau = require_number(d.at("tau"), origin, where + ".tau");
      sc.baseline_drivers[id] = bd;
    }
  }

  if (root.contains("montecarlo")) {
    sc.montecarlo_runs =
        get_int(root.at("montecarlo"), "runs", 200, origin, "montecarlo");
    if (sc.montecarlo_runs < 1) fail(origin, "montecarlo.runs", "must be >= 1");
  }
  return sc;
}

ParsedScenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario_text(buf.str(), path);
}

ParsedScenario make_baseline(const ParsedScenario& sc) {
  if (sc.baseline_drivers.empty()) {
    throw ConfigError("make_baseline: config has no baseline.drivers block");
  }
  ParsedScenario base = sc;
  base.controller.num_scenarios = 1;
  for (SimAgent& a : base.agents) {
    const auto it = sc.baseline_drivers.find(a.params.id);
    if (it == sc.baseline_drivers.end()) {
      throw ConfigError("make_baseline: no baseline driver for agent " +
                        std::to_string(a.params.id));
    }
    a.params.bounds.kd_min = a.params.bounds.kd_max = it->second.kd;
    a.params.bounds.tau_min = a.params.bounds.tau_max = it->second.tau;
    a.params.bounds.dv_min = a.params.bounds.dv_max = 0.0;
  }
  return base;
}

void apply_overrides(ParsedScenario& sc, const RunConfig& rc) {
  if (rc.scenarios_override) {
    if (*rc.scenarios_override < 1) {
      throw ConfigError("override: scenarios must be >= 1");
    }
    sc.controller.num_scenarios = *rc.scenarios_override;
  }
  if (rc.horizon_override) {
    if (*rc.horizon_override < 1) {
      throw ConfigError("override: horizon must be >= 1");
    }
    sc.controller.horizon = *rc.horizon_override;
  }
  if (rc.weights_override) {
    rc.weights_override->validate();
    for (SimAgent& a : sc.agents) a.params.weights = *rc.weights_override;
  }
}

} // namespace scenmpc
