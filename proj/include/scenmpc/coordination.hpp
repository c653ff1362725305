#pragma once

#include "scenmpc/ocp.hpp"
#include "scenmpc/scenario.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <vector>

namespace scenmpc {

/// Injective agent ranking; lower value means higher priority.
struct PriorityMap {
  std::map<int, int> gamma;

  void validate() const;
  int priority(int id) const;
};

/// Collision-point coordinates per ordered agent pair. An absent pair
/// means no conflict (infinite distance).
class ConflictTopology {
 public:
  void add_conflict(int i, int l, double s_in_i, double s_in_l);
  bool in_conflict(int i, int l) const;
  // s_c of agent i's path toward agent l; +inf without a conflict
  double collision_point(int i, int l) const;
  std::vector<int> conflicting(int i) const;
  std::vector<std::pair<int, int>> pairs() const; // i < l

 private:
  std::map<std::pair<int, int>, double> points_;
};

/// Broadcast payload of one agent toward one receiver: signed distances of
/// the prediction envelope center to the sender's collision point with
/// that receiver, plus the envelope widths.
struct ConflictMessage {
  int sender = 0;
  int receiver = 0;
  Eigen::VectorXd dc; // length N
  Eigen::VectorXd dl; // length N
  int stamp = -1;     // controller step the message was computed at
};

/// Everything that parameterizes one agent's controller.
struct AgentParams {
  int id = 0;
  VehicleParams vehicle;
  DriverUncertaintyBounds bounds;
  CostWeights weights;
  double v_set = 13.9;
  double v_upper = 15.29;
  double a_min = -7.0;
  double a_max = 4.0;
  double v_mean_min = 5.0;
  double mean_v_activation_distance = 40.0;
  double safety_margin = 0.5;
  double initial_s = 0.0;
  double initial_v = 13.9;
};

struct ControllerConfig {
  double t_s = 0.25;
  int horizon = 40;
  int num_scenarios = 99;
  double kv = -0.59;
  CcpConfig ccp;
  QpSettings qp;
  std::uint64_t seed = 0;
};

struct Measurement {
  double t = 0.0;
  Eigen::Vector3d x_v = Eigen::Vector3d::Zero();
  std::function<double(double)> v_at;
};

struct ControllerStepResult {
  double applied_u = 0.0;
  Eigen::VectorXd delta_u;
  std::vector<ConflictMessage> outbox;
  OcpDiagnostics diagnostics;
  bool fallback_spec_used = false;
  bool mean_v_armed = false;
};

// Sum of absolute distances to the joint collision point; infinite when
// the pair has none.
double pairwise_distance(double s_i, double s_c_il, double s_l, double s_c_li);

// Conflicting agents with strictly higher priority than i.
std::vector<int> prioritized_conflict_set(int i, const ConflictTopology& topology,
                                          const PriorityMap& gamma);

// Safety data per higher-priority opponent. Messages must carry stamp
// current_step-1; a missing message falls back to an opponent parked at
// the collision point. Received trajectories are shifted one step to
// align the stamps.
std::vector<SafetyConstraintSpec> build_safety_specs(
    int i, const std::vector<ConflictMessage>& inbox,
    const ConflictTopology& topology, const PriorityMap& gamma,
    const std::map<int, VehicleParams>& vehicles, double safety_margin,
    int current_step, int horizon, bool* fallback_used = nullptr);

double base_safety_distance(const VehicleParams& own,
                            const VehicleParams& opponent, double margin);

/// Receding-horizon controller of one agent, holding the advice history
/// and warm starts between steps.
class AgentController {
 public:
  AgentController(AgentParams params, ControllerConfig cfg,
                  ConflictTopology topology, PriorityMap gamma,
                  std::map<int, VehicleParams> vehicles);

  ControllerStepResult step(const Measurement& m,
                            const std::vector<ConflictMessage>& inbox);

  const AgentParams& params() const { return params_; }
  const ControllerConfig& config() const { return cfg_; }
  int steps_taken() const { return step_count_; }

 private:
  AgentParams params_;
  ControllerConfig cfg_;
  ConflictTopology topology_;
  PriorityMap gamma_;
  std::map<int, VehicleParams> vehicles_;
  int step_count_ = 0;
  std::vector<double> vref_history_; // most recent first
  double last_applied_u_ = 0.0;
  Eigen::VectorXd warm_delta_u_;
  bool has_warm_ = false;
};

} // namespace scenmpc
