#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <optional>

namespace scenmpc {

/// Convex QP: minimize 0.5 z'Hz + f'z subject to Gz <= h, optional row
/// lower bounds (g_lower <= Gz) and optional elementwise box bounds on z.
struct QpProblem {
  Eigen::SparseMatrix<double> hessian; // n x n, symmetric PSD
  Eigen::VectorXd linear;              // n
  Eigen::SparseMatrix<double> g;       // m x n
  Eigen::VectorXd h;                   // m
  std::optional<Eigen::VectorXd> g_lower;     // m, -inf allowed
  std::optional<Eigen::VectorXd> lower_bound; // n, -inf allowed
  std::optional<Eigen::VectorXd> upper_bound; // n, +inf allowed

  static QpProblem from_dense(const Eigen::MatrixXd& hessian,
                              const Eigen::VectorXd& linear,
                              const Eigen::MatrixXd& g,
                              const Eigen::VectorXd& h);

  int num_vars() const { return static_cast<int>(linear.size()); }
  int num_constraints() const { return static_cast<int>(h.size()); }
  void validate() const;
};

struct QpSettings {
  double step_rho = 0.1;
  double sigma = 1e-6;
  double relaxation_alpha = 1.6;
  double abs_tol = 1e-6;
  double rel_tol = 1e-6;
  int max_iters = 20000;
  bool polish = true;
  bool adaptive_rho = true;
  int check_interval = 25;
};

enum class QpStatus { optimal, max_iters, primal_infeasible };

struct QpSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd y; // multipliers of Gz <= h (box rows excluded)
  QpStatus status = QpStatus::max_iters;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool polished = false;
};

QpSolution solve_qp(const QpProblem& p, const QpSettings& s,
                    const Eigen::VectorXd* warm_z = nullptr,
                    const Eigen::VectorXd* warm_y = nullptr);

struct KktResiduals {
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
};

KktResiduals kkt_residuals(const QpProblem& p, const Eigen::VectorXd& z,
                           const Eigen::VectorXd& y);

const char* to_string(QpStatus s);

} // namespace scenmpc
