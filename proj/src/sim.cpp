#include "scenmpc/sim.hpp"

#include "scenmpc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace scenmpc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

DvSchedule::DvSchedule(double base, double amplitude, double period,
                       std::uint64_t seed)
    : base_(base), amplitude_(amplitude), period_(period), seed_(seed) {
  if (amplitude < 0.0 || !(period > 0.0)) {
    throw std::invalid_argument("DvSchedule: invalid amplitude or period");
  }
}

double DvSchedule::at(double t) const {
  if (t < 0.0 || amplitude_ == 0.0) return base_;
  const auto slot = static_cast<std::uint64_t>(std::floor(t / period_));
  SplitMix64 rng = SplitMix64(seed_).derive(slot);
  return base_ + rng.uniform(-amplitude_, amplitude_);
}

DvSchedule dv_schedule_periodic(double base, double amplitude, double period,
                                std::uint64_t seed) {
  return DvSchedule(base, amplitude, period, seed);
}

void SimConfig::validate() const {
  if (!(fine_step > 0.0) || !(controller_period > 0.0) || !(duration > 0.0)) {
    throw std::invalid_argument("SimConfig: times must be positive");
  }
  const double ratio = controller_period / fine_step;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw std::invalid_argument(
        "SimConfig: fine_step must divide the controller period");
  }
}

int SimConfig::substeps() const {
  return static_cast<int>(std::round(controller_period / fine_step));
}

int SimConfig::controller_ticks() const {
  return static_cast<int>(std::ceil(duration / controller_period - 1e-9));
}

VelocityLog::VelocityLog(double v_initial, double t0, double dt)
    : t0_(t0), dt_(dt) {
  values_.push_back(v_initial);
}

void VelocityLog::record(double v) { values_.push_back(v); }

double VelocityLog::at(double t) const {
  const double pos = (t - t0_) / dt_;
  if (pos <= 0.0) return values_.front();
  const auto last = static_cast<double>(values_.size() - 1);
  if (pos >= last) return values_.back();
  const auto idx = static_cast<size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(idx);
  return values_[idx] * (1.0 - frac) + values_[idx + 1] * frac;
}

bool detect_collision(double s_i, double s_l, double s_c_il, double s_c_li,
                      const VehicleParams& veh_i, const VehicleParams& veh_l) {
  if (!std::isfinite(s_c_il) || !std::isfinite(s_c_li)) return false;
  return std::abs(s_i - s_c_il) < 0.5 * (veh_i.length + veh_l.width) &&
         std::abs(s_l - s_c_li) < 0.5 * (veh_l.length + veh_i.width);
}

namespace {

// advice held constant over each controller period, with a pre-run value
// for times before the first tick
class AdviceLog {
 public:
  AdviceLog(double pre_value, double period)
      : pre_value_(pre_value), period_(period) {}

  void push(double u) { values_.push_back(u); }

  double at(double t) const {
    if (t < 0.0 || values_.empty()) return pre_value_;
    auto idx = static_cast<long>(std::floor(t / period_ + 1e-12));
    if (idx < 0) return pre_value_;
    if (idx >= static_cast<long>(values_.size())) idx = static_cast<long>(values_.size()) - 1;
    return values_[static_cast<size_t>(idx)];
  }

 private:
  double pre_value_;
  double period_;
  std::vector<double> values_;
};

struct AgentRuntime {
  Eigen::Vector3d x; // a_x, v, s
  VelocityLog v_log;
  AdviceLog advice;
  double digital_demand = 0.0; // active demand in digital mode
  const SimAgent* agent;

  // the pre-run advice is the one consistent with cruising at initial_v
  AgentRuntime(const SimAgent& a, double fine_step, double period)
      : x(0.0, a.params.initial_v, a.params.initial_s),
        v_log(a.params.initial_v, 0.0, fine_step),
        advice(a.params.initial_v - a.truth.dv.base(), period),
        agent(&a) {}
};

double continuous_demand(const AgentRuntime& rt, double t, double v_now) {
  const TruthDriver& d = rt.agent->truth;
  const double t_obs = t - d.tau;
  const double v_obs = d.tau < 1e-12 ? v_now : rt.v_log.at(t_obs);
  return d.kd * (rt.advice.at(t_obs) + d.dv.at(t_obs) - v_obs);
}

void rk4_step(AgentRuntime& rt, double t, double h,
              const std::function<double(double, double)>& demand_at) {
  const double t_ax = rt.agent->params.vehicle.drivetrain_time_constant;
  const auto deriv = [&](double ti, const Eigen::Vector3d& x) {
    return Eigen::Vector3d((demand_at(ti, x(1)) - x(0)) / t_ax, x(0), x(1));
  };
  const Eigen::Vector3d k1 = deriv(t, rt.x);
  const Eigen::Vector3d k2 = deriv(t + 0.5 * h, rt.x + 0.5 * h * k1);
  const Eigen::Vector3d k3 = deriv(t + 0.5 * h, rt.x + 0.5 * h * k2);
  const Eigen::Vector3d k4 = deriv(t + h, rt.x + h * k3);
  rt.x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

} // namespace

SimTrace simulate(const std::vector<SimAgent>& agents,
                  const ConflictTopology& topology, const PriorityMap& gamma,
                  std::vector<AgentController>& controllers,
                  const SimConfig& cfg) {
  cfg.validate();
  if (agents.empty() || controllers.size() != agents.size()) {
    throw std::invalid_argument("simulate: agents and controllers must align");
  }

  const int na = static_cast<int>(agents.size());
  const int ticks = cfg.controller_ticks();
  const int nsub = cfg.substeps();
  const double h = cfg.fine_step;

  SimTrace trace;
  trace.fine_step = cfg.fine_step;
  trace.controller_period = cfg.controller_period;

  std::vector<AgentRuntime> rt;
  rt.reserve(static_cast<size_t>(na));
  for (const SimAgent& a : agents) {
    rt.emplace_back(a, h, cfg.controller_period);
    trace.agent_ids.push_back(a.params.id);
  }

  std::set<std::pair<int, int>> collided;
  std::vector<std::vector<ConflictMessage>> inbox(static_cast<size_t>(na));

  const auto record_rows = [&](double t) {
    for (int i = 0; i < na; ++i) {
      const AgentRuntime& r = rt[static_cast<size_t>(i)];
      const AgentParams& p = agents[static_cast<size_t>(i)].params;
      TraceRow row;
      row.t = t;
      row.agent = p.id;
      row.ax = r.x(0);
      row.v = r.x(1);
      row.s = r.x(2);
      row.advice = r.advice.at(t);
      row.dv = agents[static_cast<size_t>(i)].truth.dv.at(t);
      row.margin_v = std::min(p.v_upper - row.v, row.v);
      row.margin_a = std::min(p.a_max - row.ax, row.ax - p.a_min);
      row.min_pair_distance = kInf;
      row.collision = false;
      for (int j = 0; j < na; ++j) {
        if (j == i) continue;
        const int other = agents[static_cast<size_t>(j)].params.id;
        if (!topology.in_conflict(p.id, other)) continue;
        const double sc_il = topology.collision_point(p.id, other);
        const double sc_li = topology.collision_point(other, p.id);
        const double s_other = rt[static_cast<size_t>(j)].x(2);
        row.min_pair_distance =
            std::min(row.min_pair_distance,
                     pairwise_distance(row.s, sc_il, s_other, sc_li));
        if (detect_collision(row.s, s_other, sc_il, sc_li, p.vehicle,
                             agents[static_cast<size_t>(j)].params.vehicle)) {
          row.collision = true;
          const std::pair<int, int> key{std::min(p.id, other),
                                        std::max(p.id, other)};
          if (collided.insert(key).second) {
            trace.collisions.push_back(
                {key.first, key.second, t,
                 key.first == p.id ? row.s : s_other,
                 key.first == p.id ? s_other : row.s});
          }
        }
      }
      trace.rows.push_back(row);
    }
  };

  record_rows(0.0);

  for (int k = 0; k < ticks; ++k) {
    const double t_k = k * cfg.controller_period;

    std::vector<ControllerStepResult> results(static_cast<size_t>(na));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < na; ++i) {
      Measurement m;
      m.t = t_k;
      m.x_v = rt[static_cast<size_t>(i)].x;
      const VelocityLog* log = &rt[static_cast<size_t>(i)].v_log;
      m.v_at = [log](double t) { return log->at(t); };
      results[static_cast<size_t>(i)] =
          controllers[static_cast<size_t>(i)].step(m, inbox[static_cast<size_t>(i)]);
    }

    // barrier: outboxes become next-step inboxes (one-step delay)
    for (auto& box : inbox) box.clear();
    for (int i = 0; i < na; ++i) {
      rt[static_cast<size_t>(i)].advice.push(results[static_cast<size_t>(i)].applied_u);
      TickRecord tr;
      tr.step = k;
      tr.t = t_k;
      tr.agent = agents[static_cast<size_t>(i)].params.id;
      tr.applied_u = results[static_cast<size_t>(i)].applied_u;
      tr.diagnostics = results[static_cast<size_t>(i)].diagnostics;
      tr.fallback_spec_used = results[static_cast<size_t>(i)].fallback_spec_used;
      tr.mean_v_armed = results[static_cast<size_t>(i)].mean_v_armed;
      trace.ticks.push_back(tr);
      for (ConflictMessage& msg : results[static_cast<size_t>(i)].outbox) {
        for (int j = 0; j < na; ++j) {
          if (agents[static_cast<size_t>(j)].params.id == msg.receiver) {
            inbox[static_cast<size_t>(j)].push_back(msg);
          }
        }
      }
    }

    // digital drivers refresh their held demand once per tick
    for (int i = 0; i < na; ++i) {
      AgentRuntime& r = rt[static_cast<size_t>(i)];
      if (r.agent->truth.mode == TruthDriver::Mode::digital) {
        const TruthDriver& d = r.agent->truth;
        const double t_obs = t_k - d.tau;
        r.digital_demand =
            d.kd * (r.advice.at(t_obs) + d.dv.at(t_obs) - r.v_log.at(t_obs));
      }
    }

    for (int sub = 0; sub < nsub; ++sub) {
      const double t = t_k + sub * h;
      for (int i = 0; i < na; ++i) {
        AgentRuntime& r = rt[static_cast<size_t>(i)];
        if (r.agent->truth.mode == TruthDriver::Mode::digital) {
          const double demand = r.digital_demand;
          rk4_step(r, t, h, [demand](double, double) { return demand; });
        } else {
          rk4_step(r, t, h,
                   [&r](double ti, double v_now) {
                     return continuous_demand(r, ti, v_now);
                   });
        }
        r.v_log.record(r.x(1));
      }
      record_rows(t + h);
    }
  }
  return trace;
}

} // namespace scenmpc
