#include "oracles.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace oracles {

namespace {

int scaling_exponent(const Eigen::MatrixXd& a, double h) {
  const double norm = (a * h).cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  double scale = norm;
  while (scale > 0.5 && s < 40) {
    scale *= 0.5;
    ++s;
  }
  return s;
}

Eigen::MatrixXd taylor_expm_raw(const Eigen::MatrixXd& a, double h, int terms) {
  const int n = static_cast<int>(a.rows());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
  for (int k = 1; k <= terms; ++k) {
    term = (term * a * h / static_cast<double>(k)).eval();
    acc += term;
  }
  return acc;
}

Eigen::MatrixXd taylor_expm_integral_raw(const Eigen::MatrixXd& a, double h,
                                         int terms) {
  // sum_k A^k h^{k+1} / (k+1)!
  const int n = static_cast<int>(a.rows());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd apow = Eigen::MatrixXd::Identity(n, n);
  double coef = h;
  acc += apow * coef;
  for (int k = 1; k <= terms; ++k) {
    apow = (apow * a).eval();
    coef *= h / static_cast<double>(k + 1);
    acc += apow * coef;
  }
  return acc;
}

} // namespace

Eigen::MatrixXd taylor_expm(const Eigen::MatrixXd& a, double h, int terms) {
  // scale until the series converges comfortably, then square back up
  const int s = scaling_exponent(a, h);
  Eigen::MatrixXd e = taylor_expm_raw(a, h / std::pow(2.0, s), terms);
  for (int i = 0; i < s; ++i) e = (e * e).eval();
  return e;
}

Eigen::MatrixXd taylor_expm_integral(const Eigen::MatrixXd& a, double h,
                                     int terms) {
  // interval doubling: int_0^{2t} = (I + expm(A t)) int_0^t
  const int s = scaling_exponent(a, h);
  const double h0 = h / std::pow(2.0, s);
  Eigen::MatrixXd e = taylor_expm_raw(a, h0, terms);
  Eigen::MatrixXd phi = taylor_expm_integral_raw(a, h0, terms);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  for (int i = 0; i < s; ++i) {
    phi = ((eye + e) * phi).eval();
    e = (e * e).eval();
  }
  return phi;
}

std::optional<int> zeros_inside_unit_circle(const Eigen::MatrixXd& m, int grid) {
  const int n = static_cast<int>(m.rows());
  const Eigen::MatrixXcd mc = m.cast<std::complex<double>>();
  const Eigen::MatrixXcd eye = Eigen::MatrixXcd::Identity(n, n);

  double winding = 0.0;
  double prev_arg = 0.0;
  double min_abs = std::numeric_limits<double>::max();
  double max_abs = 0.0;
  std::vector<double> args(static_cast<size_t>(grid + 1));
  for (int k = 0; k <= grid; ++k) {
    const double phi = 2.0 * std::numbers::pi * k / grid;
    const std::complex<double> z(std::cos(phi), std::sin(phi));
    const std::complex<double> det = (z * eye - mc).determinant();
    min_abs = std::min(min_abs, std::abs(det));
    max_abs = std::max(max_abs, std::abs(det));
    const double arg = std::arg(det);
    if (k > 0) {
      double d = arg - prev_arg;
      while (d > std::numbers::pi) d -= 2.0 * std::numbers::pi;
      while (d < -std::numbers::pi) d += 2.0 * std::numbers::pi;
      winding += d;
    }
    prev_arg = arg;
  }
  if (min_abs < 1e-9 * std::max(max_abs, 1.0)) {
    return std::nullopt; // an eigenvalue is (numerically) on the circle
  }
  return static_cast<int>(std::lround(winding / (2.0 * std::numbers::pi)));
}

namespace {

bool next_combination(std::vector<int>& idx, int m) {
  const int k = static_cast<int>(idx.size());
  for (int i = k - 1; i >= 0; --i) {
    if (idx[static_cast<size_t>(i)] < m - (k - i)) {
      ++idx[static_cast<size_t>(i)];
      for (int j = i + 1; j < k; ++j) {
        idx[static_cast<size_t>(j)] = idx[static_cast<size_t>(j - 1)] + 1;
      }
      return true;
    }
  }
  return false;
}

} // namespace

ActiveSetSolution exhaustive_active_set(const Eigen::MatrixXd& h_mat,
                                        const Eigen::VectorXd& f,
                                        const Eigen::MatrixXd& g,
                                        const Eigen::VectorXd& h) {
  const int n = static_cast<int>(f.size());
  const int m = static_cast<int>(h.size());
  constexpr double kFeasTol = 1e-8;
  ActiveSetSolution best;

  for (int k = 0; k <= std::min(n, m); ++k) {
    std::vector<int> idx(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = i;
    bool more = (k <= m);
    while (more) {
      // KKT system for equality-constrained subproblem on the chosen set
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
      kkt.topLeftCorner(n, n) = h_mat;
      Eigen::VectorXd rhs(n + k);
      rhs.head(n) = -f;
      for (int j = 0; j < k; ++j) {
        kkt.block(n + j, 0, 1, n) = g.row(idx[static_cast<size_t>(j)]);
        kkt.block(0, n + j, n, 1) = g.row(idx[static_cast<size_t>(j)]).transpose();
        rhs(n + j) = h(idx[static_cast<size_t>(j)]);
      }
      const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
      if (lu.isInvertible()) {
        const Eigen::VectorXd sol = lu.solve(rhs);
        const Eigen::VectorXd z = sol.head(n);
        const Eigen::VectorXd mult = sol.tail(k);
        const bool dual_ok = (k == 0) || (mult.minCoeff() >= -kFeasTol);
        const bool primal_ok =
            m == 0 || ((g * z - h).maxCoeff() <= kFeasTol);
        if (dual_ok && primal_ok) {
          best.z = z;
          best.objective = 0.5 * z.dot(h_mat * z) + f.dot(z);
          best.found = true;
          return best; // KKT point of a strictly convex QP is the optimum
        }
      }
      more = next_combination(idx, m) && k > 0;
      if (k == 0) break;
    }
  }
  return best;
}

} // namespace oracles
