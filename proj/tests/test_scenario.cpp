#include <doctest.h>

#include "scenmpc/rng.hpp"
#include "scenmpc/scenario.hpp"

using namespace scenmpc;

namespace {

VehicleParams paper_vehicle() {
  VehicleParams p;
  p.drivetrain_time_constant = 0.3;
  return p;
}

AgentHistories cruise_histories(double v0, int max_delay_steps) {
  AgentHistories h;
  h.x_v = Eigen::Vector3d(0.0, v0, -100.0);
  h.vref_history.assign(static_cast<size_t>(max_delay_steps), v0);
  h.v_at = [v0](double) { return v0; };
  h.t_now = 0.0;
  return h;
}

// explicit recursion, independent of the condensed maps
Eigen::MatrixXd rollout_states(const Scenario& sc, const Eigen::VectorXd& du) {
  const int n = static_cast<int>(du.size());
  Eigen::MatrixXd xs(sc.plant.dim(), n + 1);
  xs.col(0) = sc.x0;
  for (int j = 0; j < n; ++j) {
    xs.col(j + 1) = sc.a_closed * xs.col(j) + sc.plant.b * du(j) +
                    sc.plant.e * sc.realization.dv_offsets[static_cast<size_t>(j)];
  }
  return xs;
}

} // namespace

TEST_CASE("sampling respects bounds and pins the nominal scenario") {
  DriverUncertaintyBounds b;
  SamplerConfig cfg;
  cfg.count = 99;
  cfg.rng_seed = 2024;
  const AgentHistories h = cruise_histories(13.9, 8);
  const ScenarioSet set =
      sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 40, cfg, h);

  REQUIRE(set.count() == 99);
  CHECK(set.scenarios[0].realization.kd == doctest::Approx(0.85));
  CHECK(set.scenarios[0].realization.tau == doctest::Approx(1.0));
  for (const Scenario& sc : set.scenarios) {
    CHECK(sc.realization.kd >= b.kd_min);
    CHECK(sc.realization.kd <= b.kd_max);
    CHECK(sc.realization.tau >= b.tau_min);
    CHECK(sc.realization.tau <= b.tau_max);
    REQUIRE(sc.realization.dv_offsets.size() == 40);
    for (double dv : sc.realization.dv_offsets) {
      CHECK(dv >= b.dv_min);
      CHECK(dv <= b.dv_max);
    }
    CHECK(sc.x0.size() == sc.plant.dim());
  }
}

TEST_CASE("sampling property sweep") {
  DriverUncertaintyBounds b;
  b.kd_min = 0.7;
  b.kd_max = 0.9;
  b.tau_min = 0.4;
  b.tau_max = 1.1;
  const AgentHistories h = cruise_histories(10.0, 8);

  SUBCASE("all draws stay inside the box") {
    SamplerConfig cfg;
    cfg.count = 2500; // 10^4 sampled parameters across kd/tau/dv
    cfg.rng_seed = 5;
    const ScenarioSet set =
        sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 4, cfg, h);
    for (const Scenario& sc : set.scenarios) {
      CHECK(sc.realization.kd >= b.kd_min);
      CHECK(sc.realization.kd <= b.kd_max);
      CHECK(sc.realization.tau >= b.tau_min);
      CHECK(sc.realization.tau <= b.tau_max);
    }
  }

  SUBCASE("empirical gain mean near the box midpoint") {
    SplitMix64 probe(77);
    double acc = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) acc += probe.uniform(b.kd_min, b.kd_max);
    const double mean = acc / draws;
    const double sigma =
        (b.kd_max - b.kd_min) / std::sqrt(12.0) / std::sqrt(double(draws));
    CHECK(std::abs(mean - 0.8) < 3.0 * sigma);
  }
}

TEST_CASE("degenerate bounds produce identical scenarios") {
  DriverUncertaintyBounds b;
  b.kd_min = b.kd_max = 0.8;
  b.tau_min = b.tau_max = 1.5;
  b.dv_min = b.dv_max = 0.0;
  SamplerConfig cfg;
  cfg.count = 5;
  cfg.rng_seed = 9;
  const AgentHistories h = cruise_histories(12.0, 8);
  const ScenarioSet set =
      sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 10, cfg, h);
  for (const Scenario& sc : set.scenarios) {
    CHECK(sc.realization.kd == 0.8);
    CHECK(sc.realization.tau == 1.5);
    CHECK((sc.x0 - set.scenarios[0].x0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sc.plant.a - set.scenarios[0].plant.a).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("sampling is deterministic for a fixed seed") {
  DriverUncertaintyBounds b;
  SamplerConfig cfg;
  cfg.count = 20;
  cfg.rng_seed = 321;
  const AgentHistories h = cruise_histories(13.0, 8);
  const ScenarioSet s1 = sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 15, cfg, h);
  const ScenarioSet s2 = sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 15, cfg, h);
  for (int k = 0; k < s1.count(); ++k) {
    CHECK(s1.scenarios[static_cast<size_t>(k)].realization.kd ==
          s2.scenarios[static_cast<size_t>(k)].realization.kd);
    CHECK(s1.scenarios[static_cast<size_t>(k)].realization.tau ==
          s2.scenarios[static_cast<size_t>(k)].realization.tau);
    CHECK((s1.scenarios[static_cast<size_t>(k)].x0 -
           s2.scenarios[static_cast<size_t>(k)].x0)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("condensation matches the explicit rollout") {
  DriverUncertaintyBounds b;
  SamplerConfig cfg;
  cfg.count = 25;
  cfg.rng_seed = 1234;
  const AgentHistories h = cruise_histories(13.9, 8);
  ScenarioSet set = sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 12, cfg, h);
  const double u_prev = 13.9;
  condense_all(set, u_prev);

  SplitMix64 rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    const int kappa = static_cast<int>(rng.next_u64() % set.count());
    Eigen::VectorXd du(set.horizon);
    for (int j = 0; j < set.horizon; ++j) du(j) = rng.uniform(-3, 3);

    const Scenario& sc = set.scenarios[static_cast<size_t>(kappa)];
    const CondensedPrediction& cp = set.predictions[static_cast<size_t>(kappa)];
    const Eigen::MatrixXd xs = rollout_states(sc, du);

    for (int j = 1; j <= set.horizon; ++j) {
      const int c = j - 1;
      CHECK(cp.ax.evaluate(du)(c) == doctest::Approx(xs(0, j)).epsilon(1e-10));
      CHECK(cp.v.evaluate(du)(c) == doctest::Approx(xs(1, j)).epsilon(1e-10));
      CHECK(cp.s.evaluate(du)(c) == doctest::Approx(xs(2, j)).epsilon(1e-10));
    }
    // resulting input and its increments
    Eigen::VectorXd u_ref(set.horizon);
    for (int j = 0; j < set.horizon; ++j) {
      u_ref(j) = sc.k_theta * xs.col(j) + du(j);
    }
    const Eigen::VectorXd u_eval = cp.u.evaluate(du);
    CHECK((u_eval - u_ref).cwiseAbs().maxCoeff() < 1e-10);
    const Eigen::VectorXd du_eval = cp.du.evaluate(du);
    CHECK(du_eval(0) == doctest::Approx(u_ref(0) - u_prev).epsilon(1e-10));
    for (int j = 1; j < set.horizon; ++j) {
      CHECK(du_eval(j) == doctest::Approx(u_ref(j) - u_ref(j - 1)).epsilon(1e-10));
    }
    const Eigen::VectorXd dax_eval = cp.dax.evaluate(du);
    CHECK(dax_eval(0) == doctest::Approx(xs(0, 1) - sc.x0(0)).epsilon(1e-10));
  }
}

TEST_CASE("autonomous response and impulse column") {
  DriverUncertaintyBounds b;
  SamplerConfig cfg;
  cfg.count = 3;
  cfg.rng_seed = 42;
  const AgentHistories h = cruise_histories(10.0, 8);
  ScenarioSet set = sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 8, cfg, h);
  condense_all(set, 10.0);

  SUBCASE("zero input reproduces the autonomous trajectory") {
    const Eigen::VectorXd du = Eigen::VectorXd::Zero(set.horizon);
    for (int kappa = 0; kappa < set.count(); ++kappa) {
      const Eigen::MatrixXd xs =
          rollout_states(set.scenarios[static_cast<size_t>(kappa)], du);
      const Eigen::VectorXd v =
          set.predictions[static_cast<size_t>(kappa)].v.evaluate(du);
      for (int j = 1; j <= set.horizon; ++j) {
        CHECK(v(j - 1) == doctest::Approx(xs(1, j)).epsilon(1e-12));
      }
    }
  }

  SUBCASE("unit impulse reads off the v-channel gain column") {
    // zero state, zero disturbance scenario built by hand
    Scenario sc = set.scenarios[0];
    sc.x0.setZero();
    std::fill(sc.realization.dv_offsets.begin(), sc.realization.dv_offsets.end(), 0.0);
    const CondensedPrediction cp = condense(sc, set.horizon, 0.0);
    Eigen::VectorXd du = Eigen::VectorXd::Zero(set.horizon);
    du(0) = 1.0;
    const Eigen::VectorXd v = cp.v.evaluate(du);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(sc.plant.dim());
    for (int j = 0; j < set.horizon; ++j) {
      x = (sc.a_closed * x + sc.plant.b * (j == 0 ? 1.0 : 0.0)).eval();
      CHECK(v(j) == doctest::Approx(x(1)).epsilon(1e-12));
      CHECK(cp.v.gain(j, 0) == doctest::Approx(x(1)).epsilon(1e-12));
    }
  }
}

TEST_CASE("worst case envelope") {
  DriverUncertaintyBounds b;
  SamplerConfig cfg;
  cfg.rng_seed = 8;
  const AgentHistories h = cruise_histories(13.0, 8);

  SUBCASE("single scenario has zero width") {
    cfg.count = 1;
    ScenarioSet set = sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 10, cfg, h);
    condense_all(set, 13.0);
    const PositionEnvelope env =
        worst_case_envelope(set, Eigen::VectorXd::Zero(10));
    CHECK(env.width.cwiseAbs().maxCoeff() == 0.0);
    CHECK((env.center - set.predictions[0].s.offset).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("center and width arithmetic") {
    cfg.count = 2;
    ScenarioSet set = sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 4, cfg, h);
    condense_all(set, 13.0);
    // overwrite the s channels with fixed values
    set.predictions[0].s.offset.setConstant(10.0);
    set.predictions[0].s.gain.setZero();
    set.predictions[1].s.offset.setConstant(14.0);
    set.predictions[1].s.gain.setZero();
    const PositionEnvelope env = worst_case_envelope(set, Eigen::VectorXd::Zero(4));
    CHECK(env.center(0) == doctest::Approx(12.0));
    CHECK(env.width(0) == doctest::Approx(4.0));
  }

  SUBCASE("envelope contains every trajectory and grows monotonically") {
    cfg.count = 30;
    ScenarioSet set = sample_scenarios(b, paper_vehicle(), -0.59, 0.25, 12, cfg, h);
    condense_all(set, 13.0);
    SplitMix64 rng(91);
    Eigen::VectorXd du(12);
    for (int j = 0; j < 12; ++j) du(j) = rng.uniform(-2, 2);
    const PositionEnvelope env = worst_case_envelope(set, du);
    for (int kappa = 0; kappa < set.count(); ++kappa) {
      const Eigen::VectorXd s =
          set.predictions[static_cast<size_t>(kappa)].s.evaluate(du);
      for (int j = 0; j < 12; ++j) {
        CHECK(s(j) >= env.s_min(j) - 1e-12);
        CHECK(s(j) <= env.s_max(j) + 1e-12);
      }
    }
    // dropping scenarios never widens the envelope
    ScenarioSet subset = set;
    subset.scenarios.resize(10);
    subset.predictions.resize(10);
    const PositionEnvelope env_small = worst_case_envelope(subset, du);
    for (int j = 0; j < 12; ++j) {
      CHECK(env_small.width(j) <= env.width(j) + 1e-12);
    }
  }
}
