#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace scenmpc {

/// Physical parameters of one vehicle. The drivetrain is a first order lag
/// from demanded to actual longitudinal acceleration.
struct VehicleParams {
  double length = 4.87;                  // m
  double width = 1.85;                   // m
  double drivetrain_time_constant = 0.3; // s

  void validate() const;
};

/// Box bounds of the uncertain driver reaction: proportional gain,
/// reaction time delay and additive speed offset.
struct DriverUncertaintyBounds {
  double kd_min = 0.5, kd_max = 1.2; // 1/s
  double tau_min = 0.0, tau_max = 2.0; // s
  double dv_min = -1.0, dv_max = 1.0;  // m/s

  void validate() const;
  bool contains(double kd, double tau) const;
};

/// One concrete draw of the driver uncertainty. Gain and delay are held
/// constant; the speed offset varies per prediction step.
struct DriverRealization {
  double kd = 0.0;  // 1/s
  double tau = 0.0; // s
  std::vector<double> dv_offsets; // m/s, one per prediction step
};

/// Split of a reaction time into tau = steps * T_s - fraction with
/// 0 <= fraction < T_s.
struct DelayDecomposition {
  int steps = 0;       // number of delay states
  double fraction = 0; // s, remaining part below one sample period
};

/// Discrete-time delay-augmented model of driver + vehicle for one
/// uncertainty realization. State is [a_x, v, s, x_tau(0..steps-1)] where
/// the delay states hold pending acceleration demands, newest first.
struct DelayedPlantModel {
  Eigen::MatrixXd a;      // (3+steps) x (3+steps)
  Eigen::VectorXd b;      // 3+steps, input = speed advice
  Eigen::VectorXd e;      // 3+steps, disturbance = driver speed offset
  Eigen::RowVectorXd c;   // output = velocity
  Eigen::RowVector3d gamma_a; // velocity propagator over the delay fraction
  double gamma_b = 0.0;       // demand propagator over the delay fraction
  DelayDecomposition decomposition;
  double kd = 0.0;
  double sample_time = 0.0;

  int dim() const { return static_cast<int>(a.rows()); }
  int delay_steps() const { return decomposition.steps; }
};

/// State of a DelayedPlantModel with named kinematic components.
struct AugmentedState {
  Eigen::VectorXd vec; // [a_x, v, s, x_tau...]

  double ax() const { return vec(0); }
  double v() const { return vec(1); }
  double s() const { return vec(2); }
};

// Continuous kinematics: first order drivetrain lag plus double integrator.
void continuous_vehicle_matrices(const VehicleParams& p, Eigen::Matrix3d& a_v,
                                 Eigen::Vector3d& b_v);

// Exact zero order hold discretization of the lag + double integrator
// structure, in closed form.
void zoh_discretize(const Eigen::Matrix3d& a_v, const Eigen::Vector3d& b_v,
                    double h, Eigen::Matrix3d& a_bar, Eigen::Vector3d& b_bar);

DelayDecomposition decompose_delay(double tau, double t_s);

// Velocity propagators over the fractional part of the delay:
// gamma_a = [0 1 0] expm(A_v * fraction),
// gamma_b = [0 1 0] int_0^fraction expm(A_v s) ds B_v.
void fractional_propagators(const Eigen::Matrix3d& a_v,
                            const Eigen::Vector3d& b_v, double fraction,
                            Eigen::RowVector3d& gamma_a, double& gamma_b);

// Assemble the delay-augmented discrete model for gain kd and delay tau.
DelayedPlantModel build_delayed_model(const VehicleParams& p, double kd,
                                      double tau, double t_s);

AugmentedState step_model(const DelayedPlantModel& m, const AugmentedState& x,
                          double u, double w);

double output_velocity(const DelayedPlantModel& m, const AugmentedState& x);

/// Reconstruct the pending-demand register from stored histories.
/// vref_history[n-1] is the advice issued n sample periods before t_k,
/// v_at samples the measured velocity at an arbitrary past time, and
/// dv_samples holds one sampled speed offset per delay state.
Eigen::VectorXd initial_delay_states(
    const std::vector<double>& vref_history,
    const std::function<double(double)>& v_at,
    const std::vector<double>& dv_samples, const DelayedPlantModel& m,
    double t_k);

} // namespace scenmpc
