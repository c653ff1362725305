#include "scenmpc/scenario.hpp"

#include "scenmpc/rng.hpp"
#include "scenmpc/stability.hpp"

#include <stdexcept>

namespace scenmpc {

void SamplerConfig::validate() const {
  if (count < 1) {
    throw std::invalid_argument("SamplerConfig: need at least one scenario");
  }
}

namespace {

Scenario make_scenario(int index, double kd, double tau,
                       std::vector<double> dv_horizon,
                       const std::vector<double>& dv_past,
                       const VehicleParams& p, double kv, double t_s,
                       const AgentHistories& histories) {
  Scenario sc;
  sc.index = index;
  sc.plant = build_delayed_model(p, kd, tau, t_s);
  sc.k_theta = feedback_row(kv, sc.plant.delay_steps());
  sc.a_closed = sc.plant.a + sc.plant.b * sc.k_theta;
  sc.realization.kd = kd;
  sc.realization.tau = tau;
  sc.realization.dv_offsets = std::move(dv_horizon);

  const int steps = sc.plant.delay_steps();
  sc.x0.resize(3 + steps);
  sc.x0.head<3>() = histories.x_v;
  if (steps > 0) {
    sc.x0.tail(steps) = initial_delay_states(
        histories.vref_history, histories.v_at, dv_past, sc.plant,
        histories.t_now);
  }
  return sc;
}

} // namespace

ScenarioSet sample_scenarios(const DriverUncertaintyBounds& bounds,
                             const VehicleParams& p, double kv, double t_s,
                             int horizon, const SamplerConfig& cfg,
                             const AgentHistories& histories) {
  cfg.validate();
  bounds.validate();
  if (horizon < 1) {
    throw std::invalid_argument("sample_scenarios: horizon must be positive");
  }

  ScenarioSet set;
  set.horizon = horizon;
  set.kv = kv;
  set.scenarios.reserve(static_cast<size_t>(cfg.count));

  // scenario 1: nominal midpoint, zero offsets
  {
    const double kd_mid = 0.5 * (bounds.kd_min + bounds.kd_max);
    const double tau_mid = 0.5 * (bounds.tau_min + bounds.tau_max);
    const int steps = decompose_delay(tau_mid, t_s).steps;
    set.scenarios.push_back(make_scenario(
        0, kd_mid, tau_mid, std::vector<double>(static_cast<size_t>(horizon), 0.0),
        std::vector<double>(static_cast<size_t>(steps), 0.0), p, kv, t_s,
        histories));
  }

  const SplitMix64 base(cfg.rng_seed);
  for (int k = 1; k < cfg.count; ++k) {
    SplitMix64 rng = base.derive(static_cast<std::uint64_t>(k));
    const double kd = rng.uniform(bounds.kd_min, bounds.kd_max);
    const double tau = rng.uniform(bounds.tau_min, bounds.tau_max);
    std::vector<double> dv_horizon(static_cast<size_t>(horizon));
    for (double& dv : dv_horizon) dv = rng.uniform(bounds.dv_min, bounds.dv_max);
    const int steps = decompose_delay(tau, t_s).steps;
    std::vector<double> dv_past(static_cast<size_t>(steps));
    for (double& dv : dv_past) dv = rng.uniform(bounds.dv_min, bounds.dv_max);
    set.scenarios.push_back(make_scenario(k, kd, tau, std::move(dv_horizon),
                                          dv_past, p, kv, t_s, histories));
  }
  return set;
}

CondensedPrediction condense(const Scenario& sc, int horizon, double u_prev) {
  const int n = sc.plant.dim();
  const int big_n = horizon;

  CondensedPrediction cp;
  auto init = [&](CondensedChannel& ch, int rows) {
    ch.offset.setZero(rows);
    ch.gain.setZero(rows, big_n);
  };
  init(cp.v, big_n);
  init(cp.s, big_n);
  init(cp.ax, big_n);
  init(cp.dax, big_n);
  init(cp.u, big_n);
  init(cp.du, big_n);

  Eigen::VectorXd offset = sc.x0;
  Eigen::MatrixXd gain = Eigen::MatrixXd::Zero(n, big_n);

  for (int j = 0; j < big_n; ++j) {
    // resulting input at step j, before advancing the state
    cp.u.offset(j) = sc.k_theta * offset;
    cp.u.gain.row(j) = sc.k_theta * gain;
    cp.u.gain(j, j) += 1.0;

    const double w = sc.realization.dv_offsets[static_cast<size_t>(j)];
    offset = (sc.a_closed * offset + sc.plant.e * w).eval();
    gain = (sc.a_closed * gain).eval();
    gain.col(j) += sc.plant.b;

    cp.ax.offset(j) = offset(0);
    cp.ax.gain.row(j) = gain.row(0);
    cp.v.offset(j) = offset(1);
    cp.v.gain.row(j) = gain.row(1);
    cp.s.offset(j) = offset(2);
    cp.s.gain.row(j) = gain.row(2);
  }

  cp.du.offset = cp.u.offset;
  cp.du.gain = cp.u.gain;
  cp.du.offset(0) -= u_prev;
  for (int j = big_n - 1; j >= 1; --j) {
    cp.du.offset(j) -= cp.u.offset(j - 1);
    cp.du.gain.row(j) -= cp.u.gain.row(j - 1);
  }

  cp.dax.offset = cp.ax.offset;
  cp.dax.gain = cp.ax.gain;
  cp.dax.offset(0) -= sc.x0(0);
  for (int j = big_n - 1; j >= 1; --j) {
    cp.dax.offset(j) -= cp.ax.offset(j - 1);
    cp.dax.gain.row(j) -= cp.ax.gain.row(j - 1);
  }
  return cp;
}

void condense_all(ScenarioSet& set, double u_prev) {
  set.predictions.resize(set.scenarios.size());
  for (size_t i = 0; i < set.scenarios.size(); ++i) {
    set.predictions[i] = condense(set.scenarios[i], set.horizon, u_prev);
  }
}

PositionEnvelope worst_case_envelope(const ScenarioSet& set,
                                     const Eigen::VectorXd& delta_u) {
  if (set.predictions.size() != set.scenarios.size() || set.scenarios.empty()) {
    throw std::invalid_argument("worst_case_envelope: set not condensed");
  }
  if (delta_u.size() != set.horizon) {
    throw std::invalid_argument("worst_case_envelope: delta_u length mismatch");
  }
  PositionEnvelope env;
  env.s_min = set.predictions.front().s.evaluate(delta_u);
  env.s_max = env.s_min;
  for (size_t i = 1; i < set.predictions.size(); ++i) {
    const Eigen::VectorXd s = set.predictions[i].s.evaluate(delta_u);
    env.s_min = env.s_min.cwiseMin(s);
    env.s_max = env.s_max.cwiseMax(s);
  }
  env.center = 0.5 * (env.s_min + env.s_max);
  env.width = env.s_max - env.s_min;
  return env;
}

} // namespace scenmpc
