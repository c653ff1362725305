#pragma once

#include "scenmpc/linmodel.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace scenmpc {

struct GainSearchConfig {
  double kv_grid_min = -1.5;
  double kv_grid_max = -0.05;
  int grid_points = 146;
  int sample_count = 200;
  unsigned long long rng_seed = 1;
  double margin = 1.0; // spectral radius threshold for certification

  void validate() const;
};

struct StabilityCertificate {
  double kv = 0.0;
  double worst_spectral_radius = 0.0;
  double worst_kd = 0.0;
  double worst_tau = 0.0;
  int samples_checked = 0;
};

struct CertifyResult {
  bool certified = false;
  StabilityCertificate certificate;
  // set when certification failed: first realization found unstable
  double failing_kd = 0.0;
  double failing_tau = 0.0;
};

struct GainInterval {
  double kv_lo = 0.0;
  double kv_hi = 0.0;
  double kv_recommended = 0.0;
};

struct SchurResult {
  bool schur = false;
  double spectral_radius = 0.0; // power iteration estimate, diagnostics only
};

// Velocity feedback row K_theta = [0, -kv, 0, 0...] for a model with the
// given number of delay states.
Eigen::RowVectorXd feedback_row(double kv, int delay_steps);

// Schur stability via the discrete Lyapunov equation M' P M - P = -I,
// solved through its Kronecker-vectorized linear system. The boolean
// verdict never relies on the spectral radius estimate.
SchurResult is_schur(const Eigen::MatrixXd& m);

Eigen::MatrixXd closed_loop_matrix(const DelayedPlantModel& m, double kv);

// Closed loop with the path coordinate removed. The position state is a
// pure integrator hanging off the velocity loop (nothing feeds back from
// it), so it contributes a fixed eigenvalue at one and is excluded from
// the stability test.
Eigen::MatrixXd stability_matrix(const DelayedPlantModel& m, double kv);

// Certify one gain over the uncertainty box: worst corner first, then all
// box corners, then sampled realizations.
CertifyResult certify_gain(double kv, const DriverUncertaintyBounds& bounds,
                           const VehicleParams& p, double t_s,
                           const GainSearchConfig& cfg);

// Scan the gain grid and return the maximal contiguous certified interval.
std::optional<GainInterval> search_gain(const DriverUncertaintyBounds& bounds,
                                        const VehicleParams& p, double t_s,
                                        const GainSearchConfig& cfg);

struct RadiusSample {
  double kd = 0.0;
  double tau = 0.0;
  double spectral_radius = 0.0;
  bool schur = false;
};

// Sampled scatter of the prestabilized closed loop's spectral radius over
// the uncertainty box (the certify CSV payload).
std::vector<RadiusSample> sample_spectral_radii(
    double kv, const DriverUncertaintyBounds& bounds, const VehicleParams& p,
    double t_s, int count, unsigned long long seed);

struct StepResponse {
  double v_final = 0.0;
  double settling_time = 0.0; // s; +inf when the band is never held
};

// Velocity response of the (optionally prestabilized) driver-following
// loop to a unit advice step from rest, with the settling time of the
// two-percent band (relative to the final value).
StepResponse advice_step_settling(const DelayedPlantModel& m, double kv,
                                  bool with_feedback, double band = 0.02,
                                  double t_max = 60.0);

} // namespace scenmpc
