#include "scenmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace scenmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

} // namespace

QpProblem QpProblem::from_dense(const Eigen::MatrixXd& hessian,
                                const Eigen::VectorXd& linear,
                                const Eigen::MatrixXd& g,
                                const Eigen::VectorXd& h) {
  QpProblem p;
  p.hessian = hessian.sparseView();
  p.linear = linear;
  p.g = g.sparseView();
  p.h = h;
  return p;
}

void QpProblem::validate() const {
  const int n = num_vars();
  if (hessian.rows() != n || hessian.cols() != n) {
    throw std::invalid_argument("QpProblem: hessian dimension mismatch");
  }
  if (g.rows() != h.size() || (g.rows() > 0 && g.cols() != n)) {
    throw std::invalid_argument("QpProblem: constraint dimension mismatch");
  }
  if (g_lower && g_lower->size() != h.size()) {
    throw std::invalid_argument("QpProblem: g_lower dimension mismatch");
  }
  const Eigen::SparseMatrix<double> diff =
      hessian - Eigen::SparseMatrix<double>(hessian.transpose());
  for (int k = 0; k < diff.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(diff, k); it; ++it) {
      if (std::abs(it.value()) > 1e-12) {
        throw std::invalid_argument("QpProblem: hessian must be symmetric");
      }
    }
  }
}

namespace {

// Constraints in two-sided form l <= Az <= u, box bounds appended as
// identity rows.
struct Stacked {
  Eigen::SparseMatrix<double> a;
  Eigen::VectorXd l, u;
  int num_g_rows = 0;
};

Stacked stack_constraints(const QpProblem& p) {
  Stacked st;
  st.num_g_rows = p.num_constraints();
  const int n = p.num_vars();
  std::vector<int> box_vars;
  if (p.lower_bound || p.upper_bound) {
    for (int i = 0; i < n; ++i) {
      const double lo = p.lower_bound ? (*p.lower_bound)(i) : -kInf;
      const double hi = p.upper_bound ? (*p.upper_bound)(i) : kInf;
      if (lo > -kInf || hi < kInf) box_vars.push_back(i);
    }
  }
  const int m = st.num_g_rows + static_cast<int>(box_vars.size());
  st.a.resize(m, n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(p.g.nonZeros()) + box_vars.size());
  for (int k = 0; k < p.g.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(p.g, k); it; ++it) {
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
    }
  }
  st.l = Eigen::VectorXd::Constant(m, -kInf);
  st.u = Eigen::VectorXd::Constant(m, kInf);
  st.u.head(st.num_g_rows) = p.h;
  if (p.g_lower) st.l.head(st.num_g_rows) = *p.g_lower;
  for (size_t j = 0; j < box_vars.size(); ++j) {
    const int row = st.num_g_rows + static_cast<int>(j);
    trips.emplace_back(row, box_vars[j], 1.0);
    if (p.lower_bound) st.l(row) = (*p.lower_bound)(box_vars[j]);
    if (p.upper_bound) st.u(row) = (*p.upper_bound)(box_vars[j]);
  }
  st.a.setFromTriplets(trips.begin(), trips.end());
  return st;
}

struct Scaling {
  Eigen::VectorXd d; // variable scaling
  Eigen::VectorXd e; // constraint scaling
  double c = 1.0;    // cost scaling
};

// Modified Ruiz equilibration of the KKT data.
Scaling ruiz_scale(Eigen::SparseMatrix<double>& p, Eigen::VectorXd& q,
                   Eigen::SparseMatrix<double>& a) {
  const int n = static_cast<int>(p.rows());
  const int m = static_cast<int>(a.rows());
  Scaling sc;
  sc.d = Eigen::VectorXd::Ones(n);
  sc.e = Eigen::VectorXd::Ones(m);

  for (int pass = 0; pass < 10; ++pass) {
    Eigen::VectorXd col_norm = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < p.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(p, k); it; ++it) {
        col_norm(it.col()) = std::max(col_norm(it.col()), std::abs(it.value()));
      }
    }
    Eigen::VectorXd row_norm = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < a.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it) {
        col_norm(it.col()) = std::max(col_norm(it.col()), std::abs(it.value()));
        row_norm(it.row()) = std::max(row_norm(it.row()), std::abs(it.value()));
      }
    }
    Eigen::VectorXd delta(n), eps(m);
    for (int j = 0; j < n; ++j) {
      delta(j) = col_norm(j) > 1e-12 ? 1.0 / std::sqrt(col_norm(j)) : 1.0;
    }
    for (int i = 0; i < m; ++i) {
      eps(i) = row_norm(i) > 1e-12 ? 1.0 / std::sqrt(row_norm(i)) : 1.0;
    }
    p = delta.asDiagonal() * p * delta.asDiagonal();
    q = delta.asDiagonal() * q;
    a = eps.asDiagonal() * a * delta.asDiagonal();
    sc.d = sc.d.cwiseProduct(delta);
    sc.e = sc.e.cwiseProduct(eps);

    Eigen::VectorXd pcol = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < p.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(p, k); it; ++it) {
        pcol(it.col()) = std::max(pcol(it.col()), std::abs(it.value()));
      }
    }
    const double mean_p = n > 0 ? pcol.mean() : 0.0;
    const double gamma_den = std::max(mean_p, inf_norm(q));
    const double gamma = gamma_den > 1e-12 ? 1.0 / gamma_den : 1.0;
    p *= gamma;
    q *= gamma;
    sc.c *= gamma;
  }
  return sc;
}

struct Workspace {
  Eigen::SparseMatrix<double> p, a;
  Eigen::VectorXd q, l, u;
  Scaling sc;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> kkt;
  double rho = 0.1;
  double sigma = 1e-6;

  void factorize() {
    Eigen::SparseMatrix<double> reg(p.rows(), p.cols());
    reg.setIdentity();
    const Eigen::SparseMatrix<double> m =
        p + sigma * reg +
        rho * Eigen::SparseMatrix<double>(a.transpose() * a);
    kkt.factorize(m);
    if (kkt.info() != Eigen::Success) {
      throw std::runtime_error("solve_qp: KKT factorization failed");
    }
  }
};

struct UnscaledIterate {
  Eigen::VectorXd x, y, z;
  double prim_res = 0.0, dual_res = 0.0;
  double eps_prim = 0.0, eps_dual = 0.0;
  double prim_norm = 1.0, dual_norm = 1.0;
};

UnscaledIterate unscale(const Workspace& w, const QpProblem& prob,
                        const Stacked& st, const Eigen::VectorXd& xb,
                        const Eigen::VectorXd& zb, const Eigen::VectorXd& yb,
                        const QpSettings& s) {
  UnscaledIterate it;
  it.x = w.sc.d.cwiseProduct(xb);
  it.y = w.sc.e.cwiseProduct(yb) / w.sc.c;
  it.z = zb.cwiseQuotient(w.sc.e);

  const Eigen::VectorXd ax = st.a * it.x;
  const Eigen::VectorXd hx = prob.hessian * it.x;
  const Eigen::VectorXd aty = st.a.transpose() * it.y;
  it.prim_res = inf_norm(ax - it.z);
  it.dual_res = inf_norm(hx + prob.linear + aty);
  it.prim_norm = std::max(inf_norm(ax), inf_norm(it.z));
  it.dual_norm = std::max({inf_norm(hx), inf_norm(aty), inf_norm(prob.linear)});
  it.eps_prim = s.abs_tol + s.rel_tol * it.prim_norm;
  it.eps_dual = s.abs_tol + s.rel_tol * it.dual_norm;
  return it;
}

bool primal_infeasibility_certificate(const Stacked& st,
                                      const Eigen::VectorXd& dy) {
  const double norm_dy = inf_norm(dy);
  if (norm_dy < 1e-12) return false;
  constexpr double eps = 1e-6;
  if (inf_norm(st.a.transpose() * dy) > eps * norm_dy) return false;
  double support = 0.0;
  for (int i = 0; i < dy.size(); ++i) {
    if (dy(i) > eps * norm_dy) {
      if (st.u(i) >= kInf) return false;
      support += st.u(i) * dy(i);
    } else if (dy(i) < -eps * norm_dy) {
      if (st.l(i) <= -kInf) return false;
      support += st.l(i) * dy(i);
    }
  }
  return support < -eps * norm_dy;
}

// Equality-constrained resolve on the active set, with iterative
// refinement against the unregularized KKT system.
bool polish(const QpProblem& prob, const Stacked& st, QpSolution& sol,
            const QpSettings& s) {
  const int n = prob.num_vars();
  const int m = static_cast<int>(st.a.rows());
  Eigen::VectorXd y_full = Eigen::VectorXd::Zero(m);
  y_full.head(sol.y.size()) = sol.y;

  const double ymax = inf_norm(y_full);
  std::vector<int> active;
  std::vector<double> sign; // +1 upper bound, -1 lower bound
  for (int i = 0; i < m; ++i) {
    if (y_full(i) > std::max(1e-12, 1e-6 * ymax) && st.u(i) < kInf) {
      active.push_back(i);
      sign.push_back(1.0);
    } else if (y_full(i) < -std::max(1e-12, 1e-6 * ymax) && st.l(i) > -kInf) {
      active.push_back(i);
      sign.push_back(-1.0);
    }
  }
  const int na = static_cast<int>(active.size());
  const int dim = n + na;
  constexpr double kReg = 1e-8;

  std::vector<Eigen::Triplet<double>> trips;
  for (int k = 0; k < prob.hessian.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(prob.hessian, k); it; ++it) {
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
    }
  }
  for (int i = 0; i < n; ++i) trips.emplace_back(i, i, kReg);
  for (int j = 0; j < na; ++j) trips.emplace_back(n + j, n + j, -kReg);
  // A is stored column major; gather active rows through the transpose
  const Eigen::SparseMatrix<double> at = st.a.transpose();
  for (int j = 0; j < na; ++j) {
    const int row = active[static_cast<size_t>(j)];
    for (Eigen::SparseMatrix<double>::InnerIterator it(at, row); it; ++it) {
      trips.emplace_back(n + j, static_cast<int>(it.row()), it.value());
      trips.emplace_back(static_cast<int>(it.row()), n + j, it.value());
    }
  }
  Eigen::SparseMatrix<double> kkt(dim, dim);
  kkt.setFromTriplets(trips.begin(), trips.end());

  Eigen::VectorXd rhs(dim);
  rhs.head(n) = -prob.linear;
  for (int j = 0; j < na; ++j) {
    const int row = active[static_cast<size_t>(j)];
    rhs(n + j) = sign[static_cast<size_t>(j)] > 0 ? st.u(row) : st.l(row);
  }

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  ldlt.compute(kkt);
  if (ldlt.info() != Eigen::Success) return false;
  Eigen::VectorXd sol_vec = ldlt.solve(rhs);

  // refinement steps against the unregularized system
  for (int pass = 0; pass < 3; ++pass) {
    Eigen::VectorXd resid = rhs;
    resid.head(n) -= prob.hessian * sol_vec.head(n);
    for (int j = 0; j < na; ++j) {
      const int row = active[static_cast<size_t>(j)];
      resid.head(n) -= sol_vec(n + j) * Eigen::VectorXd(at.col(row));
      resid(n + j) -= at.col(row).dot(sol_vec.head(n));
    }
    sol_vec += ldlt.solve(resid);
  }

  Eigen::VectorXd x = sol_vec.head(n);
  Eigen::VectorXd y_pol = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < na; ++j) {
    y_pol(active[static_cast<size_t>(j)]) = sol_vec(n + j);
  }

  const Eigen::VectorXd ax = st.a * x;
  double prim = 0.0;
  for (int i = 0; i < m; ++i) {
    prim = std::max(prim, std::max(ax(i) - st.u(i), st.l(i) - ax(i)));
  }
  const double dual =
      inf_norm(prob.hessian * x + prob.linear + st.a.transpose() * y_pol);
  const double before = std::max(sol.primal_residual, sol.dual_residual);
  if (std::max(prim, dual) <= std::max(before, s.abs_tol)) {
    sol.z = x;
    sol.y = y_pol.head(prob.num_constraints());
    sol.primal_residual = std::max(prim, 0.0);
    sol.dual_residual = dual;
    sol.polished = true;
    return true;
  }
  return false;
}

} // namespace

QpSolution solve_qp(const QpProblem& prob, const QpSettings& s,
                    const Eigen::VectorXd* warm_z,
                    const Eigen::VectorXd* warm_y) {
  prob.validate();
  const int n = prob.num_vars();
  Stacked st = stack_constraints(prob);
  const int m = static_cast<int>(st.a.rows());

  Workspace w;
  w.p = prob.hessian;
  w.q = prob.linear;
  w.a = st.a;
  w.sigma = s.sigma;
  w.rho = s.step_rho;
  w.sc = ruiz_scale(w.p, w.q, w.a);
  w.l = w.sc.e.cwiseProduct(st.l);
  w.u = w.sc.e.cwiseProduct(st.u);

  {
    Eigen::SparseMatrix<double> reg(n, n);
    reg.setIdentity();
    const Eigen::SparseMatrix<double> kkt0 =
        w.p + w.sigma * reg + w.rho * Eigen::SparseMatrix<double>(w.a.transpose() * w.a);
    w.kkt.analyzePattern(kkt0);
  }
  w.factorize();

  Eigen::VectorXd xb = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd zb = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd yb = Eigen::VectorXd::Zero(m);
  if (warm_z && warm_z->size() == n) {
    xb = warm_z->cwiseQuotient(w.sc.d);
    zb = w.a * xb;
  }
  if (warm_y && warm_y->size() == prob.num_constraints()) {
    yb.head(warm_y->size()) =
        w.sc.c * warm_y->cwiseQuotient(w.sc.e.head(warm_y->size()));
  }

  QpSolution sol;
  sol.z = Eigen::VectorXd::Zero(n);
  sol.y = Eigen::VectorXd::Zero(prob.num_constraints());

  Eigen::VectorXd dy_accum = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd rhs(n), xt(n), zt(m), tmp_m(m), z_relax(m), z_next(m);
  for (int iter = 1; iter <= s.max_iters; ++iter) {
    tmp_m = w.rho * zb - yb;
    rhs = w.sigma * xb - w.q;
    rhs.noalias() += w.a.transpose() * tmp_m;
    xt = w.kkt.solve(rhs);
    zt.noalias() = w.a * xt;

    xb = s.relaxation_alpha * xt + (1.0 - s.relaxation_alpha) * xb;
    z_relax = s.relaxation_alpha * zt + (1.0 - s.relaxation_alpha) * zb;
    z_next = z_relax + yb / w.rho;
    for (int i = 0; i < m; ++i) z_next(i) = std::clamp(z_next(i), w.l(i), w.u(i));
    dy_accum = w.rho * (z_relax - z_next);
    yb += dy_accum;
    zb = z_next;
    sol.iterations = iter;

    if (iter % s.check_interval == 0 || iter == s.max_iters) {
      const UnscaledIterate it = unscale(w, prob, st, xb, zb, yb, s);
      if (it.prim_res <= it.eps_prim && it.dual_res <= it.eps_dual) {
        sol.z = it.x;
        sol.y = it.y.head(prob.num_constraints());
        sol.status = QpStatus::optimal;
        sol.primal_residual = it.prim_res;
        sol.dual_residual = it.dual_res;
        break;
      }
      const Eigen::VectorXd dy_unscaled =
          w.sc.e.cwiseProduct(dy_accum) / w.sc.c;
      if (primal_infeasibility_certificate(st, dy_unscaled)) {
        sol.status = QpStatus::primal_infeasible;
        sol.z = it.x;
        sol.y = it.y.head(prob.num_constraints());
        sol.primal_residual = it.prim_res;
        sol.dual_residual = it.dual_res;
        sol.objective = 0.5 * sol.z.dot(prob.hessian * sol.z) + prob.linear.dot(sol.z);
        return sol;
      }
      if (s.adaptive_rho) {
        const double pr = it.prim_res / std::max(it.prim_norm, 1e-12);
        const double dr = it.dual_res / std::max(it.dual_norm, 1e-12);
        const double ratio = std::sqrt(pr / std::max(dr, 1e-16));
        if (ratio > 5.0 || ratio < 0.2) {
          w.rho = std::clamp(w.rho * ratio, 1e-6, 1e6);
          w.factorize();
        }
      }
      if (iter == s.max_iters) {
        sol.z = it.x;
        sol.y = it.y.head(prob.num_constraints());
        sol.status = QpStatus::max_iters;
        sol.primal_residual = it.prim_res;
        sol.dual_residual = it.dual_res;
      }
    }
  }

  if (sol.status == QpStatus::optimal && s.polish) {
    polish(prob, st, sol, s);
  }
  sol.objective = 0.5 * sol.z.dot(prob.hessian * sol.z) + prob.linear.dot(sol.z);
  return sol;
}

KktResiduals kkt_residuals(const QpProblem& p, const Eigen::VectorXd& z,
                           const Eigen::VectorXd& y) {
  if (z.size() != p.num_vars() || y.size() != p.num_constraints()) {
    throw std::invalid_argument("kkt_residuals: dimension mismatch");
  }
  KktResiduals r;
  const Eigen::VectorXd gz = p.g * z;
  for (int i = 0; i < gz.size(); ++i) {
    const double over = gz(i) - p.h(i);
    r.primal = std::max(r.primal, over);
    double comp = std::abs(y(i) * over);
    if (p.g_lower) {
      const double under = (*p.g_lower)(i)-gz(i);
      r.primal = std::max(r.primal, under);
      if (y(i) < 0.0) comp = std::abs(y(i) * under);
    }
    r.complementarity = std::max(r.complementarity, comp);
  }
  if (p.lower_bound) {
    for (int i = 0; i < z.size(); ++i) {
      r.primal = std::max(r.primal, (*p.lower_bound)(i)-z(i));
    }
  }
  if (p.upper_bound) {
    for (int i = 0; i < z.size(); ++i) {
      r.primal = std::max(r.primal, z(i) - (*p.upper_bound)(i));
    }
  }
  r.primal = std::max(r.primal, 0.0);
  r.dual = inf_norm(p.hessian * z + p.linear + p.g.transpose() * y);
  return r;
}

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::max_iters: return "max_iters";
    case QpStatus::primal_infeasible: return "primal_infeasible";
  }
  return "unknown";
}

} // namespace scenmpc
