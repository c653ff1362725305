#include "scenmpc/linmodel.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <stdexcept>

namespace scenmpc {

void VehicleParams::validate() const {
  if (!(length > 0.0) || !(width > 0.0) || !(drivetrain_time_constant > 0.0)) {
    throw std::invalid_argument("VehicleParams: all fields must be positive");
  }
}

void DriverUncertaintyBounds::validate() const {
  if (!(kd_min > 0.0) || !(kd_min <= kd_max)) {
    throw std::invalid_argument("DriverUncertaintyBounds: need 0 < kd_min <= kd_max");
  }
  if (!(tau_min >= 0.0) || !(tau_min <= tau_max)) {
    throw std::invalid_argument("DriverUncertaintyBounds: need 0 <= tau_min <= tau_max");
  }
  if (!(dv_min <= dv_max)) {
    throw std::invalid_argument("DriverUncertaintyBounds: need dv_min <= dv_max");
  }
}

bool DriverUncertaintyBounds::contains(double kd, double tau) const {
  return kd >= kd_min && kd <= kd_max && tau >= tau_min && tau <= tau_max;
}

void continuous_vehicle_matrices(const VehicleParams& p, Eigen::Matrix3d& a_v,
                                 Eigen::Vector3d& b_v) {
  p.validate();
  const double t = p.drivetrain_time_constant;
  a_v << -1.0 / t, 0, 0,
          1,       0, 0,
          0,       1, 0;
  b_v << 1.0 / t, 0, 0;
}

namespace {

// The closed forms below assume the lag + double integrator structure;
// reject anything else so they are never silently misapplied.
double lag_time_constant(const Eigen::Matrix3d& a_v, const Eigen::Vector3d& b_v) {
  const double t = -1.0 / a_v(0, 0);
  Eigen::Matrix3d expected;
  expected << -1.0 / t, 0, 0, 1, 0, 0, 0, 1, 0;
  if (!(t > 0.0) || !a_v.isApprox(expected, 1e-12) ||
      !b_v.isApprox(Eigen::Vector3d(1.0 / t, 0, 0), 1e-12)) {
    throw std::invalid_argument("zoh_discretize: unexpected matrix structure");
  }
  return t;
}

} // namespace

void zoh_discretize(const Eigen::Matrix3d& a_v, const Eigen::Vector3d& b_v,
                    double h, Eigen::Matrix3d& a_bar, Eigen::Vector3d& b_bar) {
  if (!(h > 0.0)) {
    throw std::invalid_argument("zoh_discretize: step must be positive");
  }
  const double t = lag_time_constant(a_v, b_v);
  const double em = -std::expm1(-h / t); // 1 - exp(-h/t), stable for small h
  a_bar << 1.0 - em,          0, 0,
           t * em,            1, 0,
           t * (h - t * em),  h, 1;
  b_bar << em, h - t * em, 0.5 * h * h - t * h + t * t * em;
}

DelayDecomposition decompose_delay(double tau, double t_s) {
  if (tau < 0.0) {
    throw std::invalid_argument("decompose_delay: tau must be nonnegative");
  }
  if (!(t_s > 0.0)) {
    throw std::invalid_argument("decompose_delay: T_s must be positive");
  }
  DelayDecomposition d;
  if (tau == 0.0) {
    return d;
  }
  d.steps = static_cast<int>(std::ceil(tau / t_s - 1e-12));
  if (d.steps < 1) d.steps = 1;
  d.fraction = d.steps * t_s - tau;
  if (d.fraction < 0.0) { // tau marginally above an exact multiple
    d.steps += 1;
    d.fraction = d.steps * t_s - tau;
  }
  return d;
}

void fractional_propagators(const Eigen::Matrix3d& a_v,
                            const Eigen::Vector3d& b_v, double fraction,
                            Eigen::RowVector3d& gamma_a, double& gamma_b) {
  if (fraction < 0.0) {
    throw std::invalid_argument("fractional_propagators: fraction must be nonnegative");
  }
  const double t = lag_time_constant(a_v, b_v);
  const double em = -std::expm1(-fraction / t);
  gamma_a << t * em, 1.0, 0.0;
  gamma_b = fraction - t * em;
}

DelayedPlantModel build_delayed_model(const VehicleParams& p, double kd,
                                      double tau, double t_s) {
  if (!(kd > 0.0)) {
    throw std::invalid_argument("build_delayed_model: kd must be positive");
  }
  if (!(t_s > 0.0)) {
    throw std::invalid_argument("build_delayed_model: T_s must be positive");
  }
  Eigen::Matrix3d a_v;
  Eigen::Vector3d b_v;
  continuous_vehicle_matrices(p, a_v, b_v);

  DelayedPlantModel m;
  m.decomposition = decompose_delay(tau, t_s);
  m.kd = kd;
  m.sample_time = t_s;
  const int steps = m.decomposition.steps;

  if (steps == 0) {
    // No delay: discretize the merged driver + vehicle continuous system.
    Eigen::Matrix3d a_c = a_v;
    a_c.col(1) -= kd * b_v;
    const Eigen::Vector3d b_c = kd * b_v;
    Eigen::Matrix4d aug = Eigen::Matrix4d::Zero();
    aug.topLeftCorner<3, 3>() = a_c;
    aug.topRightCorner<3, 1>() = b_c;
    const Eigen::Matrix4d expm = (aug * t_s).exp();
    m.a = expm.topLeftCorner<3, 3>();
    m.b = expm.topRightCorner<3, 1>();
    m.e = m.b;
    m.c = Eigen::RowVector3d(0, 1, 0);
    m.gamma_a << 0, 1, 0;
    m.gamma_b = 0.0;
    return m;
  }

  Eigen::Matrix3d a_bar;
  Eigen::Vector3d b_bar;
  zoh_discretize(a_v, b_v, t_s, a_bar, b_bar);
  fractional_propagators(a_v, b_v, m.decomposition.fraction, m.gamma_a, m.gamma_b);

  const int n = 3 + steps;
  m.a = Eigen::MatrixXd::Zero(n, n);
  m.a.topLeftCorner<3, 3>() = a_bar;
  m.a.block(0, n - 1, 3, 1) = b_bar;            // oldest pending demand drives x_v
  m.a.block(3, 0, 1, 3) = -kd * m.gamma_a;      // fresh demand from delayed velocity
  m.a(3, n - 1) = -kd * m.gamma_b;
  if (steps > 1) {
    m.a.block(4, 3, steps - 1, steps - 1).setIdentity(); // shift register
  }

  m.b = Eigen::VectorXd::Zero(n);
  m.b(3) = kd;
  m.e = m.b;
  m.c = Eigen::RowVectorXd::Zero(n);
  m.c(1) = 1.0;
  return m;
}

AugmentedState step_model(const DelayedPlantModel& m, const AugmentedState& x,
                          double u, double w) {
  if (x.vec.size() != m.dim()) {
    throw std::invalid_argument("step_model: state dimension mismatch");
  }
  return AugmentedState{m.a * x.vec + m.b * u + m.e * w};
}

double output_velocity(const DelayedPlantModel& m, const AugmentedState& x) {
  if (x.vec.size() != m.dim()) {
    throw std::invalid_argument("output_velocity: state dimension mismatch");
  }
  return m.c * x.vec;
}

Eigen::VectorXd initial_delay_states(
    const std::vector<double>& vref_history,
    const std::function<double(double)>& v_at,
    const std::vector<double>& dv_samples, const DelayedPlantModel& m,
    double t_k) {
  const int steps = m.delay_steps();
  if (static_cast<int>(vref_history.size()) < steps) {
    throw std::invalid_argument("initial_delay_states: vref history too short");
  }
  if (static_cast<int>(dv_samples.size()) != steps) {
    throw std::invalid_argument("initial_delay_states: need one dv sample per delay state");
  }
  Eigen::VectorXd x_tau(steps);
  for (int n = 1; n <= steps; ++n) {
    const double vref = vref_history[static_cast<size_t>(n - 1)];
    const double v = v_at(t_k + m.decomposition.fraction - n * m.sample_time);
    x_tau(n - 1) = m.kd * (vref + dv_samples[static_cast<size_t>(n - 1)] - v);
  }
  return x_tau;
}

} // namespace scenmpc
