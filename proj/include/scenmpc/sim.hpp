#pragma once

#include "scenmpc/coordination.hpp"

#include <cstdint>
#include <vector>

namespace scenmpc {

/// Piecewise-constant speed offset: a base value plus a step-wise jitter
/// resampled each period. Values before t = 0 stay at the base.
class DvSchedule {
 public:
  DvSchedule() = default;
  DvSchedule(double base, double amplitude, double period, std::uint64_t seed);

  double at(double t) const;
  double base() const { return base_; }
  double amplitude() const { return amplitude_; }
  double period() const { return period_; }

 private:
  double base_ = 0.0;
  double amplitude_ = 0.0;
  double period_ = 1.0;
  std::uint64_t seed_ = 0;
};

DvSchedule dv_schedule_periodic(double base, double amplitude, double period,
                                std::uint64_t seed);

/// True (simulated) driver of one agent, as opposed to the controller's
/// sampled prediction models.
struct TruthDriver {
  double kd = 0.8;
  double tau = 1.0; // s
  DvSchedule dv;
  enum class Mode { continuous_delay, digital };
  Mode mode = Mode::continuous_delay;
};

struct SimConfig {
  double fine_step = 0.01;
  double duration = 25.0;
  double controller_period = 0.25;

  void validate() const;
  int substeps() const;
  int controller_ticks() const;
};

/// Uniformly sampled signal log with linear interpolation; queries before
/// the first sample return the initial value, queries past the newest
/// sample hold the last one.
class VelocityLog {
 public:
  VelocityLog() = default;
  VelocityLog(double v_initial, double t0, double dt);
  void record(double v);
  double at(double t) const;

 private:
  double t0_ = 0.0;
  double dt_ = 0.01;
  std::vector<double> values_;
};

struct TraceRow {
  double t = 0.0;
  int agent = 0;
  double s = 0.0, v = 0.0, ax = 0.0;
  double advice = 0.0, dv = 0.0;
  double margin_v = 0.0, margin_a = 0.0;
  double min_pair_distance = 0.0; // +inf without conflicts
  bool collision = false;
};

struct TickRecord {
  int step = 0;
  double t = 0.0;
  int agent = 0;
  double applied_u = 0.0;
  OcpDiagnostics diagnostics;
  bool fallback_spec_used = false;
  bool mean_v_armed = false;
};

struct CollisionEvent {
  int i = 0, l = 0;
  double t = 0.0;
  double s_i = 0.0, s_l = 0.0;
};

struct SimTrace {
  std::vector<TraceRow> rows;    // fine grid, agents interleaved per instant
  std::vector<TickRecord> ticks; // one per agent per controller step
  std::vector<CollisionEvent> collisions; // first event per pair
  double fine_step = 0.01;
  double controller_period = 0.25;
  std::vector<int> agent_ids;
};

struct SimAgent {
  AgentParams params;
  TruthDriver truth;
};

// Perpendicular-crossing footprint overlap at the pair's joint collision
// point; false when the pair has none.
bool detect_collision(double s_i, double s_l, double s_c_il, double s_c_li,
                      const VehicleParams& veh_i, const VehicleParams& veh_l);

// Closed loop: RK4 integration of drivetrain lag + kinematics, the delayed
// driver reaction on ring-buffered histories, and the controllers invoked
// every controller period with one-step message delay between agents.
SimTrace simulate(const std::vector<SimAgent>& agents,
                  const ConflictTopology& topology, const PriorityMap& gamma,
                  std::vector<AgentController>& controllers,
                  const SimConfig& cfg);

} // namespace scenmpc
