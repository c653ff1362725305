#include <doctest.h>

#include "scenmpc/ocp.hpp"
#include "scenmpc/rng.hpp"

using namespace scenmpc;

namespace {

VehicleParams paper_vehicle() {
  VehicleParams p;
  p.drivetrain_time_constant = 0.3;
  return p;
}

AgentHistories cruise_histories(double v0, double s0) {
  AgentHistories h;
  h.x_v = Eigen::Vector3d(0.0, v0, s0);
  h.vref_history.assign(12, v0);
  h.v_at = [v0](double) { return v0; };
  h.t_now = 0.0;
  return h;
}

ScenarioSet small_set(int count, int horizon, double v0, double s0,
                      std::uint64_t seed, double u_prev,
                      DriverUncertaintyBounds b = DriverUncertaintyBounds{}) {
  SamplerConfig cfg;
  cfg.count = count;
  cfg.rng_seed = seed;
  ScenarioSet set = sample_scenarios(b, paper_vehicle(), -0.59, 0.25, horizon,
                                     cfg, cruise_histories(v0, s0));
  condense_all(set, u_prev);
  return set;
}

OcpLimits paper_limits(int horizon) {
  OcpLimits lim;
  lim.v_set = 13.9;
  lim.v_upper = Eigen::VectorXd::Constant(horizon, 15.29);
  lim.a_min = -7.0;
  lim.a_max = 4.0;
  return lim;
}

double rollout_cost(const ScenarioSet& set, const CostWeights& w,
                    const Eigen::VectorXd& v_set, double u_prev,
                    const Eigen::VectorXd& du) {
  double total = 0.0;
  for (int kappa = 0; kappa < set.count(); ++kappa) {
    const Scenario& sc = set.scenarios[static_cast<size_t>(kappa)];
    Eigen::VectorXd x = sc.x0;
    double u_last = u_prev;
    double ax_last = sc.x0(0);
    double j_cost = 0.0;
    for (int j = 0; j < set.horizon; ++j) {
      const double u = sc.k_theta * x + du(j);
      j_cost += w.r * (u - u_last) * (u - u_last);
      u_last = u;
      x = (sc.a_closed * x + sc.plant.b * du(j) +
           sc.plant.e * sc.realization.dv_offsets[static_cast<size_t>(j)])
              .eval();
      j_cost += w.q * (v_set(j) - x(1)) * (v_set(j) - x(1));
      j_cost += w.s_a * x(0) * x(0);
      j_cost += w.s_da * (x(0) - ax_last) * (x(0) - ax_last);
      ax_last = x(0);
    }
    total += j_cost;
  }
  return total / set.count();
}

} // namespace

TEST_CASE("scenario cost") {
  SUBCASE("at rest with zero set speed the cost vanishes") {
    DriverUncertaintyBounds b;
    b.dv_min = b.dv_max = 0.0;
    SamplerConfig cfg;
    cfg.count = 4;
    cfg.rng_seed = 3;
    AgentHistories h;
    h.x_v = Eigen::Vector3d::Zero();
    h.vref_history.assign(12, 0.0);
    h.v_at = [](double) { return 0.0; };
    ScenarioSet set =
        sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 6, cfg, h);
    condense_all(set, 0.0);
    const QuadraticCost cost = scenario_cost(
        set, CostWeights{}, Eigen::VectorXd::Zero(6), 0.0);
    CHECK(cost.evaluate(Eigen::VectorXd::Zero(6)) == doctest::Approx(0.0).scale(1.0));
  }

  SUBCASE("single scenario, single step expands by hand") {
    DriverUncertaintyBounds b;
    b.kd_min = b.kd_max = 0.8;
    b.tau_min = b.tau_max = 0.0;
    b.dv_min = b.dv_max = 0.0;
    ScenarioSet set = small_set(1, 1, 10.0, -50.0, 1, 9.5, b);
    CostWeights w;
    const Eigen::VectorXd v_set = Eigen::VectorXd::Constant(1, 12.0);
    const QuadraticCost cost = scenario_cost(set, w, v_set, 9.5);

    const Scenario& sc = set.scenarios[0];
    // channels by hand for one step
    const double u_off = sc.k_theta * sc.x0;
    const Eigen::VectorXd x1_off = sc.a_closed * sc.x0;
    const Eigen::VectorXd x1_g = sc.plant.b;
    for (double du0 : {-1.0, 0.0, 0.7, 2.3}) {
      const double u = u_off + du0;
      const double v1 = x1_off(1) + x1_g(1) * du0;
      const double a1 = x1_off(0) + x1_g(0) * du0;
      const double expected = w.q * (12.0 - v1) * (12.0 - v1) +
                              w.r * (u - 9.5) * (u - 9.5) + w.s_a * a1 * a1 +
                              w.s_da * (a1 - sc.x0(0)) * (a1 - sc.x0(0));
      Eigen::VectorXd du(1);
      du << du0;
      CHECK(cost.evaluate(du) == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("hessian is positive semidefinite") {
    SplitMix64 rng(15);
    for (int trial = 0; trial < 5; ++trial) {
      ScenarioSet set = small_set(8, 10, rng.uniform(5, 15), -80.0,
                                  rng.next_u64(), 10.0);
      const QuadraticCost cost = scenario_cost(
          set, CostWeights{}, Eigen::VectorXd::Constant(10, 13.9), 10.0);
      const Eigen::LLT<Eigen::MatrixXd> llt(
          cost.hessian + 1e-8 * Eigen::MatrixXd::Identity(10, 10));
      CHECK(llt.info() == Eigen::Success);
      for (int probe = 0; probe < 20; ++probe) {
        Eigen::VectorXd z(10);
        for (int i = 0; i < 10; ++i) z(i) = rng.uniform(-1, 1);
        CHECK(z.dot(cost.hessian * z) >= -1e-8);
      }
    }
  }

  SUBCASE("quadratic form matches rollout evaluation") {
    SplitMix64 rng(77);
    ScenarioSet set = small_set(12, 15, 12.0, -70.0, 4, 11.5);
    CostWeights w;
    const Eigen::VectorXd v_set = Eigen::VectorXd::Constant(15, 13.9);
    const QuadraticCost cost = scenario_cost(set, w, v_set, 11.5);
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::VectorXd du(15);
      for (int j = 0; j < 15; ++j) du(j) = rng.uniform(-2, 2);
      const double direct = rollout_cost(set, w, v_set, 11.5, du);
      const double quad = cost.evaluate(du);
      CHECK(std::abs(direct - quad) / std::max(1.0, std::abs(direct)) < 1e-8);
    }
  }
}

TEST_CASE("input constraints") {
  const int n = 5;
  ScenarioSet set = small_set(6, n, 13.0, -60.0, 21, 13.0);
  OcpLimits lim = paper_limits(n);
  const LinearConstraints c = input_constraints(set, lim);
  REQUIRE(c.rows() == 6 * n);

  SUBCASE("margins match direct channel evaluation") {
    SplitMix64 rng(31);
    Eigen::VectorXd du(n);
    for (int j = 0; j < n; ++j) du(j) = rng.uniform(-2, 2);
    const Eigen::VectorXd val = c.g * du;
    int row = 0;
    for (int kappa = 0; kappa < 6; ++kappa) {
      const auto& cp = set.predictions[static_cast<size_t>(kappa)];
      const auto& dv = set.scenarios[static_cast<size_t>(kappa)].realization.dv_offsets;
      const Eigen::VectorXd u = cp.u.evaluate(du);
      for (int j = 0; j < n; ++j) {
        const double total = u(j) + dv[static_cast<size_t>(j)];
        CHECK(c.upper(row) - val(row) == doctest::Approx(15.29 - total).epsilon(1e-9));
        CHECK(val(row) - c.lower(row) == doctest::Approx(total).epsilon(1e-9));
        ++row;
      }
    }
  }

  SUBCASE("violation shows up with the right magnitude") {
    // push the advice negative: u + dv = -0.1 for scenario 0, step 0
    const auto& cp = set.predictions[0];
    const double dv0 = set.scenarios[0].realization.dv_offsets[0];
    Eigen::VectorXd du = Eigen::VectorXd::Zero(n);
    du(0) = -0.1 - dv0 - cp.u.offset(0); // u gain at (0,0) is 1
    const Eigen::VectorXd val = c.g * du;
    CHECK(val(0) - c.lower(0) == doctest::Approx(-0.1).epsilon(1e-9));
  }
}

TEST_CASE("state constraints against rollout violations") {
  const int n = 8;
  ScenarioSet set = small_set(10, n, 13.0, -60.0, 33, 13.0);
  OcpLimits lim = paper_limits(n);
  lim.a_min = -0.5; // tight bounds so random inputs violate sometimes
  lim.a_max = 0.5;
  lim.v_upper = Eigen::VectorXd::Constant(n, 13.5);
  const LinearConstraints c = state_constraints(set, lim);
  REQUIRE(c.rows() == 2 * 10 * n);

  SplitMix64 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd du(n);
    for (int j = 0; j < n; ++j) du(j) = rng.uniform(-1.5, 1.5);
    const Eigen::VectorXd val = c.g * du;
    int from_rows = 0;
    for (int r = 0; r < c.rows(); ++r) {
      if (val(r) > c.upper(r) + 1e-12) ++from_rows;
      if (val(r) < c.lower(r) - 1e-12) ++from_rows;
    }
    int from_rollout = 0;
    for (int kappa = 0; kappa < set.count(); ++kappa) {
      const auto& cp = set.predictions[static_cast<size_t>(kappa)];
      const Eigen::VectorXd ax = cp.ax.evaluate(du);
      const Eigen::VectorXd v = cp.v.evaluate(du);
      for (int j = 0; j < n; ++j) {
        if (ax(j) > lim.a_max + 1e-12) ++from_rollout;
        if (ax(j) < lim.a_min - 1e-12) ++from_rollout;
        if (v(j) > lim.v_upper(j) + 1e-12) ++from_rollout;
        if (v(j) < -1e-12) ++from_rollout;
      }
    }
    CHECK(from_rows == from_rollout);
  }
}

TEST_CASE("mean velocity constraint") {
  const int n = 4;
  ScenarioSet set = small_set(3, n, 10.0, -30.0, 51, 10.0);
  OcpLimits lim = paper_limits(n);

  SUBCASE("inactive flag emits nothing") {
    lim.mean_v_active = false;
    CHECK(mean_velocity_constraint(set, lim, 10.0).rows() == 0);
  }

  SUBCASE("margin arithmetic") {
    lim.mean_v_active = true;
    lim.v_mean_min = 9.0;
    // force known channel values
    for (auto& cp : set.predictions) {
      cp.v.offset.setConstant(10.0);
      cp.v.gain.setZero();
    }
    const LinearConstraints c = mean_velocity_constraint(set, lim, 10.0);
    REQUIRE(c.rows() == 3);
    const Eigen::VectorXd val = c.g * Eigen::VectorXd::Zero(n);
    for (int i = 0; i < 3; ++i) {
      CHECK(val(i) - c.lower(i) == doctest::Approx(1.0));
    }
  }

  SUBCASE("single step violation magnitude") {
    ScenarioSet tiny = small_set(1, 1, 10.0, -30.0, 5, 10.0);
    OcpLimits l1 = paper_limits(1);
    l1.mean_v_active = true;
    l1.v_mean_min = 9.1;
    tiny.predictions[0].v.offset.setConstant(8.0);
    tiny.predictions[0].v.gain.setZero();
    const LinearConstraints c = mean_velocity_constraint(tiny, l1, 10.0);
    REQUIRE(c.rows() == 1);
    // mean = (10 + 8)/2 = 9 which violates 9.1 by 0.1
    CHECK(c.lower(0) - (c.g * Eigen::VectorXd::Zero(1))(0) ==
          doctest::Approx(0.1).epsilon(1e-9));
  }
}

TEST_CASE("row deduplication keeps the tightest bounds") {
  LinearConstraints c;
  c.g.setZero(4, 3);
  c.g << 1, 0, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0;
  c.upper.resize(4);
  c.upper << 5.0, 2.0, 3.0, 7.0;
  c.lower.resize(4);
  c.lower << -1.0, 0.0, -4.0, 0.5;
  const LinearConstraints d = deduplicate_rows(c);
  REQUIRE(d.rows() == 2);
  CHECK(d.upper(0) == 3.0);
  CHECK(d.lower(0) == 0.5);
  CHECK(d.upper(1) == 2.0);
  CHECK(d.lower(1) == 0.0);
}

TEST_CASE("safety linearization") {
  const int n = 6;
  ScenarioSet set = small_set(4, n, 12.0, -40.0, 61, 12.0);

  SafetyConstraintSpec spec;
  spec.s_c = 0.0;
  spec.opponent_dc = Eigen::VectorXd::Constant(n, 0.0);
  spec.opponent_dl = Eigen::VectorXd::Constant(n, 0.0);
  spec.d_safe_base = 5.0;

  SUBCASE("direct substitution example") {
    // linearization at s_bar - s_c = -10 with r = 5:
    // -20 (s - s_c) - 100 + slack >= 25, i.e. s <= -6.25 + slack/20
    Eigen::MatrixXd s_bar = Eigen::MatrixXd::Constant(4, n, -10.0);
    const SafetyLinearization lin = linearize_safety(set, spec, s_bar);
    REQUIRE(lin.rows.rows() == 4 * n);
    // row 0: scenario 0, step 1. Evaluate at du=0 and compare against the
    // closed form boundary.
    const auto& cp = set.predictions[0];
    const double s1 = cp.s.offset(0);
    const double violation = (lin.rows.g.row(0) * Eigen::VectorXd::Zero(n))(0) -
                             lin.rows.upper(0);
    // feasible (zero slack) iff s1 <= -6.25
    if (s1 <= -6.25) {
      CHECK(violation <= 1e-9);
    } else {
      CHECK(violation > 0.0);
    }
    // exact algebra: -20*(s1 - 0) - h must equal 25 + 100 shifted; verify
    // h = 2a(o - s_c) - a^2 - r^2 with a = -10
    CHECK(lin.rows.upper(0) ==
          doctest::Approx(2.0 * (-10.0) * s1 - 100.0 - 25.0).epsilon(1e-12));
  }

  SUBCASE("no rows when the opponent keeps its distance") {
    spec.opponent_dc = Eigen::VectorXd::Constant(n, 6.0); // beyond d_safe
    Eigen::MatrixXd s_bar = Eigen::MatrixXd::Constant(4, n, -10.0);
    CHECK(linearize_safety(set, spec, s_bar).rows.rows() == 0);
  }

  SUBCASE("minorant property on random points") {
    SplitMix64 rng(71);
    for (int trial = 0; trial < 10000; ++trial) {
      const double a = rng.uniform(-20, 20); // s_bar - s_c
      const double s = rng.uniform(-25, 25);
      const double lhs = 2.0 * a * (s - 0.0) - a * a; // minorant at s_c = 0
      CHECK(lhs <= (s * s) + 1e-9);
    }
  }

  SUBCASE("feasible set of the linearized rows is inside the original") {
    Eigen::MatrixXd s_bar(4, n);
    SplitMix64 rng(81);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < n; ++j) s_bar(i, j) = rng.uniform(-30, -1);
    }
    const SafetyLinearization lin = linearize_safety(set, spec, s_bar);
    for (int trial = 0; trial < 200; ++trial) {
      Eigen::VectorXd du(n);
      for (int j = 0; j < n; ++j) du(j) = rng.uniform(-2, 2);
      const Eigen::VectorXd resid = lin.rows.g * du - lin.rows.upper;
      for (size_t row = 0; row < lin.origin.size(); ++row) {
        if (resid(static_cast<int>(row)) <= 0.0) { // zero slack feasible
          const auto [kappa, j] = lin.origin[row];
          const double s =
              set.predictions[static_cast<size_t>(kappa)].s.evaluate(du)(j);
          const double r = effective_safety_distance(spec, j) -
                           std::abs(spec.opponent_dc(j));
          CHECK((s - spec.s_c) * (s - spec.s_c) >= r * r - 1e-9);
        }
      }
    }
  }
}

TEST_CASE("solve_agent_ocp") {
  QpSettings qp;
  CcpConfig ccp;

  SUBCASE("no opponents at set speed stays near zero correction") {
    const int n = 20;
    // equilibrium: driver holds v_set when the advice equals v_set, i.e.
    // delta_u* = (1 + kv) * v_set
    DriverUncertaintyBounds b;
    b.dv_min = b.dv_max = 0.0;
    ScenarioSet set = small_set(5, n, 13.9, -200.0, 91, 13.9, b);
    OcpLimits lim = paper_limits(n);
    const double du_eq = (1.0 + (-0.59)) * 13.9;
    Eigen::VectorXd warm = Eigen::VectorXd::Constant(n, du_eq);
    const OcpResult res = solve_agent_ocp(set, CostWeights{}, lim, {}, ccp, qp,
                                          13.9, 13.9, &warm);
    CHECK(res.diagnostics.ccp_iterations == 1);
    CHECK(res.diagnostics.qp_status == QpStatus::optimal);
    // advice u = kv-feedback + delta u stays near the set speed
    const Eigen::VectorXd u = set.predictions[0].u.evaluate(res.delta_u);
    for (int j = 0; j < n; ++j) CHECK(std::abs(u(j) - 13.9) < 0.2);
  }

  SUBCASE("blocked collision point forces the safety margin") {
    // worst sampled driver (kd 0.5, tau 2) needs roughly 40 m to come to a
    // stop from 10 m/s, so leave enough road for a clean brake
    const int n = 25;
    ScenarioSet set = small_set(9, n, 10.0, -60.0, 101, 10.0);
    OcpLimits lim = paper_limits(n);
    lim.v_set = 10.0;

    SafetyConstraintSpec spec;
    spec.s_c = 0.0;
    spec.opponent_dc = Eigen::VectorXd::Zero(n); // opponent parked on the point
    spec.opponent_dl = Eigen::VectorXd::Zero(n);
    spec.d_safe_base = 6.0;

    const OcpResult res =
        solve_agent_ocp(set, CostWeights{}, lim, {spec}, ccp, qp, 10.0, 10.0);
    CHECK_FALSE(res.diagnostics.soft_infeasible);
    CHECK(res.diagnostics.final_slack <= 1e-4);
    // post-hoc rollout: every scenario keeps (s - s_c)^2 >= r^2
    CHECK(res.diagnostics.safety_margin >= -1e-4);
  }

  SUBCASE("convexified objective is monotone at fixed penalty") {
    const int n = 25;
    ScenarioSet set = small_set(9, n, 10.0, -45.0, 111, 10.0);
    OcpLimits lim = paper_limits(n);
    lim.v_set = 10.0;
    SafetyConstraintSpec spec;
    spec.s_c = 0.0;
    spec.opponent_dc = Eigen::VectorXd::Zero(n);
    spec.opponent_dl = Eigen::VectorXd::Zero(n);
    spec.d_safe_base = 6.0;

    CcpConfig fixed = ccp;
    fixed.penalty_growth = 1.0;
    fixed.max_iters = 8;
    fixed.convergence_tol = 1e-12;  // keep iterating
    fixed.linearization_window = 1e9; // fixed row set across iterations
    const OcpResult res =
        solve_agent_ocp(set, CostWeights{}, lim, {spec}, fixed, qp, 10.0, 10.0);
    const auto& trace = res.diagnostics.ccp_objective_trace;
    REQUIRE(trace.size() >= 2);
    for (size_t i = 1; i < trace.size(); ++i) {
      CHECK(trace[i] <= trace[i - 1] + 1e-5 * std::max(1.0, std::abs(trace[i - 1])));
    }
  }
}
