#include "scenmpc/coordination.hpp"

#include "scenmpc/rng.hpp"
#include "scenmpc/stability.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace scenmpc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void PriorityMap::validate() const {
  std::set<int> seen;
  for (const auto& [id, g] : gamma) {
    if (g < 1) {
      throw std::invalid_argument("PriorityMap: priorities must be positive");
    }
    if (!seen.insert(g).second) {
      throw std::invalid_argument("PriorityMap: priorities must be injective");
    }
  }
}

int PriorityMap::priority(int id) const {
  const auto it = gamma.find(id);
  if (it == gamma.end()) {
    throw std::invalid_argument("PriorityMap: unknown agent id");
  }
  return it->second;
}

void ConflictTopology::add_conflict(int i, int l, double s_in_i, double s_in_l) {
  if (i == l) {
    throw std::invalid_argument("ConflictTopology: self conflicts are not allowed");
  }
  if (!std::isfinite(s_in_i) || !std::isfinite(s_in_l)) {
    throw std::invalid_argument("ConflictTopology: collision points must be finite");
  }
  points_[{i, l}] = s_in_i;
  points_[{l, i}] = s_in_l;
}

bool ConflictTopology::in_conflict(int i, int l) const {
  return points_.count({i, l}) > 0;
}

double ConflictTopology::collision_point(int i, int l) const {
  const auto it = points_.find({i, l});
  return it == points_.end() ? kInf : it->second;
}

std::vector<int> ConflictTopology::conflicting(int i) const {
  std::vector<int> out;
  for (const auto& [key, unused] : points_) {
    if (key.first == i) out.push_back(key.second);
  }
  return out;
}

std::vector<std::pair<int, int>> ConflictTopology::pairs() const {
  std::vector<std::pair<int, int>> out;
  for (const auto& [key, unused] : points_) {
    if (key.first < key.second) out.push_back(key);
  }
  return out;
}

double pairwise_distance(double s_i, double s_c_il, double s_l, double s_c_li) {
  if (!std::isfinite(s_c_il) || !std::isfinite(s_c_li)) return kInf;
  return std::abs(s_i - s_c_il) + std::abs(s_l - s_c_li);
}

std::vector<int> prioritized_conflict_set(int i, const ConflictTopology& topology,
                                          const PriorityMap& gamma) {
  std::vector<int> out;
  const int own = gamma.priority(i);
  for (int l : topology.conflicting(i)) {
    if (gamma.priority(l) < own) out.push_back(l);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double base_safety_distance(const VehicleParams& own,
                            const VehicleParams& opponent, double margin) {
  const auto half_diag = [](const VehicleParams& v) {
    return 0.5 * std::hypot(v.length, v.width);
  };
  return half_diag(own) + half_diag(opponent) + margin;
}

std::vector<SafetyConstraintSpec> build_safety_specs(
    int i, const std::vector<ConflictMessage>& inbox,
    const ConflictTopology& topology, const PriorityMap& gamma,
    const std::map<int, VehicleParams>& vehicles, double safety_margin,
    int current_step, int horizon, bool* fallback_used) {
  if (fallback_used) *fallback_used = false;
  std::vector<SafetyConstraintSpec> specs;
  for (int l : prioritized_conflict_set(i, topology, gamma)) {
    SafetyConstraintSpec spec;
    spec.s_c = topology.collision_point(i, l);
    spec.d_safe_base =
        base_safety_distance(vehicles.at(i), vehicles.at(l), safety_margin);

    const ConflictMessage* msg = nullptr;
    for (const ConflictMessage& m : inbox) {
      if (m.sender == l && m.receiver == i) {
        if (m.stamp >= current_step) {
          throw std::logic_error(
              "build_safety_specs: message read before its delivery step");
        }
        if (m.stamp == current_step - 1) msg = &m;
      }
    }
    if (msg != nullptr && msg->dc.size() == horizon) {
      // align stamps: drop the first element, repeat the last
      spec.opponent_dc.resize(horizon);
      spec.opponent_dl.resize(horizon);
      spec.opponent_dc.head(horizon - 1) = msg->dc.tail(horizon - 1);
      spec.opponent_dc(horizon - 1) = msg->dc(horizon - 1);
      spec.opponent_dl.head(horizon - 1) = msg->dl.tail(horizon - 1);
      spec.opponent_dl(horizon - 1) = msg->dl(horizon - 1);
    } else {
      // conservative fallback: opponent parked at the collision point
      spec.opponent_dc = Eigen::VectorXd::Zero(horizon);
      spec.opponent_dl = Eigen::VectorXd::Zero(horizon);
      if (fallback_used) *fallback_used = true;
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

AgentController::AgentController(AgentParams params, ControllerConfig cfg,
                                 ConflictTopology topology, PriorityMap gamma,
                                 std::map<int, VehicleParams> vehicles)
    : params_(std::move(params)),
      cfg_(std::move(cfg)),
      topology_(std::move(topology)),
      gamma_(std::move(gamma)),
      vehicles_(std::move(vehicles)) {
  gamma_.validate();
  params_.vehicle.validate();
  params_.bounds.validate();
  // cruise warm start until real advice history accumulates
  const int max_delay =
      decompose_delay(params_.bounds.tau_max, cfg_.t_s).steps + 1;
  vref_history_.assign(static_cast<size_t>(max_delay), params_.initial_v);
  last_applied_u_ = params_.initial_v;
}

ControllerStepResult AgentController::step(
    const Measurement& m, const std::vector<ConflictMessage>& inbox) {
  const int k = step_count_;
  ControllerStepResult res;

  const std::vector<SafetyConstraintSpec> specs = build_safety_specs(
      params_.id, inbox, topology_, gamma_, vehicles_, params_.safety_margin,
      k, cfg_.horizon, &res.fallback_spec_used);

  AgentHistories histories;
  histories.x_v = m.x_v;
  histories.vref_history = vref_history_;
  histories.v_at = m.v_at;
  histories.t_now = m.t;

  SamplerConfig sampler;
  sampler.count = cfg_.num_scenarios;
  sampler.rng_seed = mix64(cfg_.seed ^
                           mix64(static_cast<std::uint64_t>(params_.id) ^
                                 mix64(static_cast<std::uint64_t>(k) + 1)));

  ScenarioSet set =
      sample_scenarios(params_.bounds, params_.vehicle, cfg_.kv, cfg_.t_s,
                       cfg_.horizon, sampler, histories);
  condense_all(set, last_applied_u_);

  OcpLimits limits;
  limits.v_set = params_.v_set;
  limits.v_upper = Eigen::VectorXd::Constant(cfg_.horizon, params_.v_upper);
  limits.a_min = params_.a_min;
  limits.a_max = params_.a_max;
  limits.v_mean_min = params_.v_mean_min;
  double nearest = kInf;
  for (int l : topology_.conflicting(params_.id)) {
    nearest = std::min(nearest,
                       std::abs(m.x_v(2) - topology_.collision_point(params_.id, l)));
  }
  limits.mean_v_active = nearest <= params_.mean_v_activation_distance;
  res.mean_v_armed = limits.mean_v_active;

  const OcpResult ocp = solve_agent_ocp(
      set, params_.weights, limits, specs, cfg_.ccp, cfg_.qp, m.x_v(1),
      last_applied_u_, has_warm_ ? &warm_delta_u_ : nullptr);
  res.delta_u = ocp.delta_u;
  res.diagnostics = ocp.diagnostics;

  // shifted warm start for the next step
  warm_delta_u_.resize(cfg_.horizon);
  warm_delta_u_.head(cfg_.horizon - 1) = ocp.delta_u.tail(cfg_.horizon - 1);
  warm_delta_u_(cfg_.horizon - 1) = ocp.delta_u(cfg_.horizon - 1);
  has_warm_ = true;

  const PositionEnvelope env = worst_case_envelope(set, ocp.delta_u);
  for (int l : topology_.conflicting(params_.id)) {
    ConflictMessage msg;
    msg.sender = params_.id;
    msg.receiver = l;
    msg.stamp = k;
    msg.dc = env.center.array() - topology_.collision_point(params_.id, l);
    msg.dl = env.width;
    res.outbox.push_back(std::move(msg));
  }

  res.applied_u = -cfg_.kv * m.x_v(1) + ocp.delta_u(0);

  vref_history_.insert(vref_history_.begin(), res.applied_u);
  vref_history_.pop_back();
  last_applied_u_ = res.applied_u;
  ++step_count_;
  return res;
}

} // namespace scenmpc
