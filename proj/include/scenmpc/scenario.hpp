#pragma once

#include "scenmpc/linmodel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

namespace scenmpc {

/// One sampled uncertainty realization together with its closed-loop
/// prediction model and sampled initial condition.
struct Scenario {
  int index = 0;
  DriverRealization realization;
  DelayedPlantModel plant;
  Eigen::MatrixXd a_closed;    // plant.a + plant.b * k_theta
  Eigen::RowVectorXd k_theta;  // prestabilizing feedback row
  Eigen::VectorXd x0;          // augmented initial state
};

/// Affine map from the corrective-input sequence to one predicted channel:
/// value(j) = offset(j) + gain.row(j) * delta_u.
struct CondensedChannel {
  Eigen::VectorXd offset;
  Eigen::MatrixXd gain;

  Eigen::VectorXd evaluate(const Eigen::VectorXd& delta_u) const {
    return offset + gain * delta_u;
  }
};

/// Channel maps of one scenario. v, s, ax and dax cover prediction steps
/// 1..N; u and du cover steps 0..N-1.
struct CondensedPrediction {
  CondensedChannel v, s, ax, dax;
  CondensedChannel u, du;
};

struct SamplerConfig {
  int count = 99; // K
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Measurement context the sampler needs: current kinematic state plus
/// stored advice and velocity histories for the delay states.
struct AgentHistories {
  Eigen::Vector3d x_v = Eigen::Vector3d::Zero();
  std::vector<double> vref_history; // advice n sample periods ago, n = 1..
  std::function<double(double)> v_at;
  double t_now = 0.0;
};

struct ScenarioSet {
  std::vector<Scenario> scenarios;
  std::vector<CondensedPrediction> predictions; // filled by condense_all
  int horizon = 0;
  double kv = 0.0;

  int count() const { return static_cast<int>(scenarios.size()); }
};

/// Per-step min/max envelope of the predicted path coordinate over all
/// scenarios of a set.
struct PositionEnvelope {
  Eigen::VectorXd s_min, s_max, center, width;
};

// Draw K i.i.d. realizations. Gain and delay are held constant over the
// horizon, the speed offset is re-sampled per step, and the delay-state
// initial condition is sampled per scenario. Scenario 1 is pinned to the
// box midpoint with zero offsets so the applied input is reproducible.
ScenarioSet sample_scenarios(const DriverUncertaintyBounds& bounds,
                             const VehicleParams& p, double kv, double t_s,
                             int horizon, const SamplerConfig& cfg,
                             const AgentHistories& histories);

// Propagate the closed-loop recursion symbolically in delta_u.
CondensedPrediction condense(const Scenario& sc, int horizon, double u_prev);

// Convenience: condense every scenario of the set in place.
void condense_all(ScenarioSet& set, double u_prev);

PositionEnvelope worst_case_envelope(const ScenarioSet& set,
                                     const Eigen::VectorXd& delta_u);

} // namespace scenmpc
