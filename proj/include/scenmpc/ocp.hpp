#pragma once

#include "scenmpc/qp.hpp"
#include "scenmpc/scenario.hpp"

#include <Eigen/Dense>

#include <limits>
#include <vector>

namespace scenmpc {

struct CostWeights {
  double q = 0.5;    // velocity tracking
  double r = 20.0;   // advice step change
  double s_a = 5.0;  // acceleration
  double s_da = 1.0; // acceleration step change

  void validate() const;
};

struct OcpLimits {
  double v_set = 13.9;
  Eigen::VectorXd v_upper;       // per prediction step
  double a_min = -7.0, a_max = 4.0;
  double v_mean_min = 5.0;
  bool mean_v_active = false;

  void validate() const;
};

/// Safety data against one higher-priority opponent: own collision point,
/// the opponent's transmitted center distances and envelope widths, and
/// the geometric base safety distance.
struct SafetyConstraintSpec {
  double s_c = 0.0;
  Eigen::VectorXd opponent_dc; // signed center-to-point distance, length N
  Eigen::VectorXd opponent_dl; // envelope widths, length N
  double d_safe_base = 0.0;
};

struct CcpConfig {
  double penalty_mu0 = 1e2;
  double penalty_growth = 5.0;
  double penalty_mu_max = 1e6;
  int max_iters = 12;
  double convergence_tol = 1e-3;    // relative objective change
  double slack_feasible_tol = 1e-4; // m^2, total slack and true violation
  // rows whose linearization point sits further than this outside the
  // required distance are left out of the subproblem; the true-violation
  // convergence check re-admits them if the iterates ever get close
  double linearization_window = 15.0; // m

  void validate() const;
};

/// Quadratic cost 0.5 du'H du + f'du + constant.
struct QuadraticCost {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear;
  double constant = 0.0;

  double evaluate(const Eigen::VectorXd& du) const {
    return 0.5 * du.dot(hessian * du) + linear.dot(du) + constant;
  }
};

/// Banded inequalities lower <= g * du <= upper over the corrective-input
/// sequence (either side may be infinite).
struct LinearConstraints {
  Eigen::MatrixXd g;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int rows() const { return static_cast<int>(upper.size()); }
  void append(const LinearConstraints& other);
  // smallest distance to either bound at the given input
  double margin(const Eigen::VectorXd& delta_u) const;
};

/// Safety rows plus their (scenario, step) origin; each row receives its
/// own slack column in the CCP subproblem.
struct SafetyLinearization {
  LinearConstraints rows;
  std::vector<std::pair<int, int>> origin;
};

struct OcpDiagnostics {
  int ccp_iterations = 0;
  double final_slack = 0.0;
  double objective = 0.0;
  QpStatus qp_status = QpStatus::optimal;
  bool soft_infeasible = false;
  int qp_iterations = 0;
  std::vector<double> ccp_objective_trace; // convexified objective per iteration
  double input_margin = 0.0;
  double state_margin = 0.0;
  double mean_v_margin = 0.0;
  double safety_margin = 0.0; // min over active pairs of (s-s_c)^2 - r^2
};

struct OcpResult {
  Eigen::VectorXd delta_u;
  OcpDiagnostics diagnostics;
};

QuadraticCost scenario_cost(const ScenarioSet& set, const CostWeights& w,
                            const Eigen::VectorXd& v_set_traj, double u_prev);

LinearConstraints input_constraints(const ScenarioSet& set,
                                    const OcpLimits& limits);

LinearConstraints state_constraints(const ScenarioSet& set,
                                    const OcpLimits& limits);

LinearConstraints mean_velocity_constraint(const ScenarioSet& set,
                                           const OcpLimits& limits, double v_k);

// Drop duplicated gradient rows, keeping the tightest right-hand side.
LinearConstraints deduplicate_rows(const LinearConstraints& c);

// Linearize the reverse-convex side (s - s_c)^2 >= r^2 around the previous
// iterate s_bar (one row per scenario and step where the constraint is
// active, i.e. where d_safe exceeds the opponent's center distance). A
// finite keep_window drops rows whose linearization point clears the
// required distance by more than the window.
SafetyLinearization linearize_safety(
    const ScenarioSet& set, const SafetyConstraintSpec& spec,
    const Eigen::MatrixXd& s_bar,
    double keep_window = std::numeric_limits<double>::infinity());

// Worst per-pair violation max(0, r^2 - (s-s_c)^2) over all active pairs,
// in m^2 (the unpruned ground truth the CCP converges against).
double safety_violation(const ScenarioSet& set,
                        const std::vector<SafetyConstraintSpec>& specs,
                        const Eigen::VectorXd& delta_u);

double effective_safety_distance(const SafetyConstraintSpec& spec, int step);

OcpResult solve_agent_ocp(const ScenarioSet& set, const CostWeights& w,
                          const OcpLimits& limits,
                          const std::vector<SafetyConstraintSpec>& specs,
                          const CcpConfig& ccp, const QpSettings& qp_settings,
                          double v_k, double u_prev,
                          const Eigen::VectorXd* warm_delta_u = nullptr);

} // namespace scenmpc
