#include "scenmpc/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace scenmpc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void CostWeights::validate() const {
  if (!(q > 0.0) || !(r > 0.0) || !(s_a > 0.0) || !(s_da > 0.0)) {
    throw std::invalid_argument("CostWeights: all weights must be positive");
  }
}

void OcpLimits::validate() const {
  if (!(a_min < 0.0) || !(a_max > 0.0)) {
    throw std::invalid_argument("OcpLimits: need a_min < 0 < a_max");
  }
  if (v_upper.size() == 0 || v_upper.minCoeff() <= 0.0) {
    throw std::invalid_argument("OcpLimits: v_upper must be positive");
  }
}

void CcpConfig::validate() const {
  if (!(penalty_mu0 > 0.0) || !(penalty_growth >= 1.0) ||
      !(penalty_mu_max >= penalty_mu0)) {
    throw std::invalid_argument("CcpConfig: invalid penalty schedule");
  }
  if (max_iters < 1 || !(convergence_tol > 0.0) || !(slack_feasible_tol > 0.0)) {
    throw std::invalid_argument("CcpConfig: invalid iteration parameters");
  }
  if (!(linearization_window > 0.0)) {
    throw std::invalid_argument("CcpConfig: linearization window must be positive");
  }
}

void LinearConstraints::append(const LinearConstraints& other) {
  if (other.rows() == 0) return;
  if (rows() == 0) {
    *this = other;
    return;
  }
  const int old_rows = rows();
  Eigen::MatrixXd g_new(old_rows + other.rows(), g.cols());
  g_new << g, other.g;
  Eigen::VectorXd lo_new(old_rows + other.rows());
  lo_new << lower, other.lower;
  Eigen::VectorXd up_new(old_rows + other.rows());
  up_new << upper, other.upper;
  g = std::move(g_new);
  lower = std::move(lo_new);
  upper = std::move(up_new);
}

double LinearConstraints::margin(const Eigen::VectorXd& delta_u) const {
  if (rows() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::VectorXd val = g * delta_u;
  double m = kInf;
  for (int i = 0; i < rows(); ++i) {
    if (std::isfinite(upper(i))) m = std::min(m, upper(i) - val(i));
    if (std::isfinite(lower(i))) m = std::min(m, val(i) - lower(i));
  }
  return m;
}

QuadraticCost scenario_cost(const ScenarioSet& set, const CostWeights& w,
                            const Eigen::VectorXd& v_set_traj, double u_prev) {
  w.validate();
  if (set.predictions.size() != set.scenarios.size()) {
    throw std::invalid_argument("scenario_cost: set not condensed");
  }
  (void)u_prev; // already folded into the du channel during condensation
  const int n = set.horizon;
  if (v_set_traj.size() != n) {
    throw std::invalid_argument("scenario_cost: v_set trajectory length mismatch");
  }

  QuadraticCost cost;
  cost.hessian.setZero(n, n);
  cost.linear.setZero(n);
  const double inv_k = 1.0 / static_cast<double>(set.count());

  auto add_term = [&](const CondensedChannel& ch, const Eigen::VectorXd& target,
                      double weight) {
    const double c = weight * inv_k;
    const Eigen::VectorXd d = ch.offset - target;
    cost.hessian.noalias() += 2.0 * c * ch.gain.transpose() * ch.gain;
    cost.linear.noalias() += 2.0 * c * ch.gain.transpose() * d;
    cost.constant += c * d.squaredNorm();
  };

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  for (const CondensedPrediction& cp : set.predictions) {
    add_term(cp.v, v_set_traj, w.q);
    add_term(cp.du, zero, w.r);
    add_term(cp.ax, zero, w.s_a);
    add_term(cp.dax, zero, w.s_da);
  }
  cost.hessian = 0.5 * (cost.hessian + cost.hessian.transpose()).eval();
  return cost;
}

LinearConstraints input_constraints(const ScenarioSet& set,
                                    const OcpLimits& limits) {
  limits.validate();
  const int n = set.horizon;
  const int k = set.count();
  LinearConstraints c;
  c.g.setZero(k * n, n);
  c.lower.setZero(k * n);
  c.upper.setZero(k * n);
  int row = 0;
  for (int kappa = 0; kappa < k; ++kappa) {
    const CondensedPrediction& cp = set.predictions[static_cast<size_t>(kappa)];
    const auto& dv = set.scenarios[static_cast<size_t>(kappa)].realization.dv_offsets;
    for (int j = 0; j < n; ++j) {
      const double off = cp.u.offset(j) + dv[static_cast<size_t>(j)];
      c.g.row(row) = cp.u.gain.row(j);
      c.lower(row) = -off;                    // advice plus offset stays >= 0
      c.upper(row) = limits.v_upper(j) - off; // and below the driver bound
      ++row;
    }
  }
  return c;
}

LinearConstraints state_constraints(const ScenarioSet& set,
                                    const OcpLimits& limits) {
  limits.validate();
  const int n = set.horizon;
  const int k = set.count();
  LinearConstraints c;
  c.g.setZero(2 * k * n, n);
  c.lower.setZero(2 * k * n);
  c.upper.setZero(2 * k * n);
  int row = 0;
  for (int kappa = 0; kappa < k; ++kappa) {
    const CondensedPrediction& cp = set.predictions[static_cast<size_t>(kappa)];
    for (int j = 0; j < n; ++j) {
      c.g.row(row) = cp.ax.gain.row(j);
      c.lower(row) = limits.a_min - cp.ax.offset(j);
      c.upper(row) = limits.a_max - cp.ax.offset(j);
      ++row;
      c.g.row(row) = cp.v.gain.row(j);
      c.lower(row) = -cp.v.offset(j);
      c.upper(row) = limits.v_upper(j) - cp.v.offset(j);
      ++row;
    }
  }
  return c;
}

LinearConstraints mean_velocity_constraint(const ScenarioSet& set,
                                           const OcpLimits& limits, double v_k) {
  LinearConstraints c;
  c.g.setZero(0, set.horizon);
  c.lower.setZero(0);
  c.upper.setZero(0);
  if (!limits.mean_v_active) return c;

  const int n = set.horizon;
  const int k = set.count();
  const double scale = 1.0 / static_cast<double>(n + 1);
  c.g.setZero(k, n);
  c.lower.setZero(k);
  c.upper.setConstant(k, kInf);
  for (int kappa = 0; kappa < k; ++kappa) {
    const CondensedPrediction& cp = set.predictions[static_cast<size_t>(kappa)];
    c.g.row(kappa) = scale * cp.v.gain.colwise().sum();
    c.lower(kappa) = limits.v_mean_min - scale * (v_k + cp.v.offset.sum());
  }
  return c;
}

LinearConstraints deduplicate_rows(const LinearConstraints& c) {
  const int m = c.rows();
  const int n = static_cast<int>(c.g.cols());
  std::unordered_map<std::string, int> seen;
  seen.reserve(static_cast<size_t>(m));
  std::vector<int> keep;
  std::vector<double> lo, up;
  keep.reserve(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    std::string key(reinterpret_cast<const char*>(c.g.row(i).eval().data()),
                    sizeof(double) * static_cast<size_t>(n));
    const auto [it, inserted] =
        seen.emplace(std::move(key), static_cast<int>(keep.size()));
    if (inserted) {
      keep.push_back(i);
      lo.push_back(c.lower(i));
      up.push_back(c.upper(i));
    } else {
      lo[static_cast<size_t>(it->second)] =
          std::max(lo[static_cast<size_t>(it->second)], c.lower(i));
      up[static_cast<size_t>(it->second)] =
          std::min(up[static_cast<size_t>(it->second)], c.upper(i));
    }
  }
  LinearConstraints out;
  out.g.setZero(static_cast<int>(keep.size()), n);
  out.lower.setZero(static_cast<int>(keep.size()));
  out.upper.setZero(static_cast<int>(keep.size()));
  for (size_t i = 0; i < keep.size(); ++i) {
    out.g.row(static_cast<int>(i)) = c.g.row(keep[i]);
    out.lower(static_cast<int>(i)) = lo[i];
    out.upper(static_cast<int>(i)) = up[i];
  }
  return out;
}

double effective_safety_distance(const SafetyConstraintSpec& spec, int step) {
  return spec.d_safe_base + 0.5 * spec.opponent_dl(step);
}

SafetyLinearization linearize_safety(const ScenarioSet& set,
                                     const SafetyConstraintSpec& spec,
                                     const Eigen::MatrixXd& s_bar,
                                     double keep_window) {
  const int n = set.horizon;
  const int k = set.count();
  if (s_bar.rows() != k || s_bar.cols() != n) {
    throw std::invalid_argument("linearize_safety: s_bar shape mismatch");
  }
  SafetyLinearization lin;
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  const auto emit = [&](int kappa, int j, double r2) {
    const CondensedPrediction& cp = set.predictions[static_cast<size_t>(kappa)];
    double a = s_bar(kappa, j) - spec.s_c;
    if (std::abs(a) < 1e-9) {
      // degenerate linearization point: nudge toward the approach side
      const double side =
          set.scenarios[static_cast<size_t>(kappa)].x0(2) <= spec.s_c ? -1.0 : 1.0;
      a = side * 1e-6;
    }
    rows.emplace_back(-2.0 * a * cp.s.gain.row(j));
    rhs.push_back(2.0 * a * (cp.s.offset(j) - spec.s_c) - a * a - r2);
    lin.origin.emplace_back(kappa, j);
  };
  for (int j = 0; j < n; ++j) {
    const double r = effective_safety_distance(spec, j) - std::abs(spec.opponent_dc(j));
    if (r <= 0.0) continue; // opponent keeps enough distance at this step
    const double r2 = r * r;
    // scenarios far outside the band get one representative row per side
    // (the extreme one): a loose ceiling that stops the subproblem from
    // planning straight through the excluded disc
    int rep_behind = -1, rep_passed = -1;
    for (int kappa = 0; kappa < k; ++kappa) {
      const double a = s_bar(kappa, j) - spec.s_c;
      if (std::abs(a) <= r + keep_window) {
        emit(kappa, j, r2);
      } else if (a < 0.0) {
        if (rep_behind < 0 || a > s_bar(rep_behind, j) - spec.s_c) rep_behind = kappa;
      } else {
        if (rep_passed < 0 || a < s_bar(rep_passed, j) - spec.s_c) rep_passed = kappa;
      }
    }
    if (rep_behind >= 0) emit(rep_behind, j, r2);
    if (rep_passed >= 0) emit(rep_passed, j, r2);
  }
  lin.rows.g.setZero(static_cast<int>(rows.size()), n);
  lin.rows.lower = Eigen::VectorXd::Constant(static_cast<int>(rows.size()), -kInf);
  lin.rows.upper.setZero(static_cast<int>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    lin.rows.g.row(static_cast<int>(i)) = rows[i];
    lin.rows.upper(static_cast<int>(i)) = rhs[i];
  }
  return lin;
}

namespace {

Eigen::MatrixXd predicted_positions(const ScenarioSet& set,
                                    const Eigen::VectorXd& delta_u) {
  Eigen::MatrixXd s(set.count(), set.horizon);
  for (int kappa = 0; kappa < set.count(); ++kappa) {
    s.row(kappa) =
        set.predictions[static_cast<size_t>(kappa)].s.evaluate(delta_u).transpose();
  }
  return s;
}

} // namespace

double safety_violation(const ScenarioSet& set,
                        const std::vector<SafetyConstraintSpec>& specs,
                        const Eigen::VectorXd& delta_u) {
  if (specs.empty()) return 0.0;
  const Eigen::MatrixXd s = predicted_positions(set, delta_u);
  double worst = 0.0;
  for (const SafetyConstraintSpec& spec : specs) {
    for (int j = 0; j < set.horizon; ++j) {
      const double r =
          effective_safety_distance(spec, j) - std::abs(spec.opponent_dc(j));
      if (r <= 0.0) continue;
      for (int kappa = 0; kappa < set.count(); ++kappa) {
        const double d = s(kappa, j) - spec.s_c;
        worst = std::max(worst, r * r - d * d);
      }
    }
  }
  return worst;
}

OcpResult solve_agent_ocp(const ScenarioSet& set, const CostWeights& w,
                          const OcpLimits& limits,
                          const std::vector<SafetyConstraintSpec>& specs,
                          const CcpConfig& ccp, const QpSettings& qp_settings,
                          double v_k, double u_prev,
                          const Eigen::VectorXd* warm_delta_u) {
  ccp.validate();
  const int n = set.horizon;
  const Eigen::VectorXd v_set_traj = Eigen::VectorXd::Constant(n, limits.v_set);
  const QuadraticCost cost = scenario_cost(set, w, v_set_traj, u_prev);

  const LinearConstraints input_c = input_constraints(set, limits);
  const LinearConstraints state_c = state_constraints(set, limits);
  const LinearConstraints mean_c = mean_velocity_constraint(set, limits, v_k);
  LinearConstraints base = input_c;
  base.append(state_c);
  base.append(mean_c);
  base = deduplicate_rows(base);

  // whether any pair can ever activate depends on received data only
  bool any_active_pair = false;
  for (const SafetyConstraintSpec& spec : specs) {
    for (int j = 0; j < n && !any_active_pair; ++j) {
      if (effective_safety_distance(spec, j) - std::abs(spec.opponent_dc(j)) > 0.0) {
        any_active_pair = true;
      }
    }
  }

  Eigen::VectorXd delta_u = Eigen::VectorXd::Zero(n);
  if (warm_delta_u && warm_delta_u->size() == n) delta_u = *warm_delta_u;

  OcpResult res;
  res.delta_u = delta_u;
  OcpDiagnostics& diag = res.diagnostics;

  const std::vector<Eigen::Triplet<double>> h_trips = [&] {
    std::vector<Eigen::Triplet<double>> t;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (cost.hessian(i, j) != 0.0) t.emplace_back(i, j, cost.hessian(i, j));
      }
    }
    return t;
  }();
  const std::vector<Eigen::Triplet<double>> base_trips = [&] {
    std::vector<Eigen::Triplet<double>> t;
    for (int i = 0; i < base.rows(); ++i) {
      for (int j = 0; j < n; ++j) {
        if (base.g(i, j) != 0.0) t.emplace_back(i, j, base.g(i, j));
      }
    }
    return t;
  }();

  double mu = ccp.penalty_mu0;
  double prev_objective = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd warm_z, warm_y;
  int prev_ms = -1;
  for (int iter = 1; iter <= ccp.max_iters; ++iter) {
    LinearConstraints safety;
    safety.g.setZero(0, n);
    safety.lower.setZero(0);
    safety.upper.setZero(0);
    if (any_active_pair) {
      const Eigen::MatrixXd s_bar = predicted_positions(set, res.delta_u);
      for (const SafetyConstraintSpec& spec : specs) {
        safety.append(
            linearize_safety(set, spec, s_bar, ccp.linearization_window).rows);
      }
    }
    const int ms = safety.rows();
    const int nv = n + ms;

    QpProblem qp;
    {
      std::vector<Eigen::Triplet<double>> trips = h_trips;
      qp.hessian.resize(nv, nv);
      qp.hessian.setFromTriplets(trips.begin(), trips.end());
    }
    qp.linear.resize(nv);
    qp.linear.head(n) = cost.linear;
    qp.linear.tail(ms).setConstant(mu);

    {
      std::vector<Eigen::Triplet<double>> trips = base_trips;
      for (int i = 0; i < ms; ++i) {
        const int row = base.rows() + i;
        for (int j = 0; j < n; ++j) {
          if (safety.g(i, j) != 0.0) trips.emplace_back(row, j, safety.g(i, j));
        }
        trips.emplace_back(row, n + i, -1.0); // slack relaxes the row
      }
      qp.g.resize(base.rows() + ms, nv);
      qp.g.setFromTriplets(trips.begin(), trips.end());
    }
    qp.h.resize(base.rows() + ms);
    qp.h.head(base.rows()) = base.upper;
    qp.h.tail(ms) = safety.upper;
    Eigen::VectorXd glo(base.rows() + ms);
    glo.head(base.rows()) = base.lower;
    glo.tail(ms).setConstant(-kInf);
    qp.g_lower = std::move(glo);
    Eigen::VectorXd lb = Eigen::VectorXd::Constant(nv, -kInf);
    lb.tail(ms).setZero(); // slacks are nonnegative
    qp.lower_bound = std::move(lb);

    Eigen::VectorXd warm_z_full;
    if (warm_z.size() == n + prev_ms && prev_ms == ms) {
      warm_z_full = warm_z;
    } else {
      warm_z_full.setZero(nv);
      warm_z_full.head(n) = res.delta_u;
    }
    const QpSolution sol = solve_qp(
        qp, qp_settings, &warm_z_full,
        (prev_ms == ms && warm_y.size() == qp.h.size()) ? &warm_y : nullptr);
    diag.qp_status = sol.status;
    diag.qp_iterations += sol.iterations;
    diag.ccp_iterations = iter;
    if (sol.status == QpStatus::primal_infeasible) {
      diag.soft_infeasible = true;
      break;
    }
    warm_z = sol.z;
    warm_y = sol.y;
    prev_ms = ms;
    res.delta_u = sol.z.head(n);

    const double slack_sum = ms > 0 ? sol.z.tail(ms).cwiseMax(0.0).sum() : 0.0;
    const double worst_violation = safety_violation(set, specs, res.delta_u);
    const double objective = cost.evaluate(res.delta_u);
    diag.final_slack = worst_violation;
    diag.ccp_objective_trace.push_back(objective + mu * slack_sum);

    const bool feasible = diag.final_slack <= ccp.slack_feasible_tol;
    const bool obj_settled =
        std::isfinite(prev_objective) &&
        std::abs(objective - prev_objective) <=
            ccp.convergence_tol * std::max(1.0, std::abs(prev_objective));
    prev_objective = objective;
    if (feasible && (obj_settled || (iter == 1 && ms == 0))) break;
    mu = std::min(mu * ccp.penalty_growth, ccp.penalty_mu_max);
  }
  diag.soft_infeasible =
      diag.soft_infeasible || diag.final_slack > ccp.slack_feasible_tol;

  diag.objective = cost.evaluate(res.delta_u);
  diag.input_margin = input_c.margin(res.delta_u);
  diag.state_margin = state_c.margin(res.delta_u);
  diag.mean_v_margin = mean_c.margin(res.delta_u);

  diag.safety_margin = std::numeric_limits<double>::quiet_NaN();
  if (!specs.empty()) {
    const Eigen::MatrixXd s_final = predicted_positions(set, res.delta_u);
    for (const SafetyConstraintSpec& spec : specs) {
      for (int j = 0; j < n; ++j) {
        const double r =
            effective_safety_distance(spec, j) - std::abs(spec.opponent_dc(j));
        if (r <= 0.0) continue;
        for (int kappa = 0; kappa < set.count(); ++kappa) {
          const double d = s_final(kappa, j) - spec.s_c;
          const double margin = d * d - r * r;
          if (std::isnan(diag.safety_margin) || margin < diag.safety_margin) {
            diag.safety_margin = margin;
          }
        }
      }
    }
  }
  return res;
}

} // namespace scenmpc
