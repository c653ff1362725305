#include "scenmpc/stability.hpp"

#include "scenmpc/rng.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace scenmpc {

void GainSearchConfig::validate() const {
  if (!(kv_grid_min <= kv_grid_max) || !(kv_grid_max <= 0.0)) {
    throw std::invalid_argument("GainSearchConfig: need kv_grid_min <= kv_grid_max <= 0");
  }
  if (grid_points < 1) {
    throw std::invalid_argument("GainSearchConfig: grid_points must be >= 1");
  }
  if (grid_points > 1 && !(kv_grid_min < kv_grid_max)) {
    throw std::invalid_argument("GainSearchConfig: degenerate grid needs grid_points == 1");
  }
  if (sample_count < 1) {
    throw std::invalid_argument("GainSearchConfig: sample_count must be >= 1");
  }
  if (!(margin > 0.0) || !(margin <= 1.0)) {
    throw std::invalid_argument("GainSearchConfig: margin must be in (0, 1]");
  }
}

Eigen::RowVectorXd feedback_row(double kv, int delay_steps) {
  if (delay_steps < 0) {
    throw std::invalid_argument("feedback_row: delay_steps must be nonnegative");
  }
  Eigen::RowVectorXd k = Eigen::RowVectorXd::Zero(3 + delay_steps);
  k(1) = -kv;
  return k;
}

namespace {

double spectral_radius_estimate(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  SplitMix64 rng(0x5eed5eedULL);
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x(i) = rng.uniform(-1.0, 1.0);
  x.normalize();

  constexpr int kIters = 200;
  std::vector<double> log_growth;
  log_growth.reserve(kIters);
  for (int it = 0; it < kIters; ++it) {
    Eigen::VectorXd y = m * x;
    const double ny = y.norm();
    if (ny < 1e-300) return 0.0;
    log_growth.push_back(std::log(ny));
    x = y / ny;
    // geometric mean over the tail averages out complex-pair oscillation
    if (it > 20) {
      const size_t half = log_growth.size() / 2;
      double recent = 0.0, older = 0.0;
      for (size_t i = half; i < log_growth.size(); ++i) recent += log_growth[i];
      recent /= static_cast<double>(log_growth.size() - half);
      for (size_t i = half / 2; i < half; ++i) older += log_growth[i];
      older /= static_cast<double>(half - half / 2);
      if (std::abs(recent - older) < 1e-9) break;
    }
  }
  const size_t half = log_growth.size() / 2;
  double acc = 0.0;
  for (size_t i = half; i < log_growth.size(); ++i) acc += log_growth[i];
  return std::exp(acc / static_cast<double>(log_growth.size() - half));
}

} // namespace

SchurResult is_schur(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("is_schur: matrix must be square");
  }
  const int n = static_cast<int>(m.rows());
  if (n == 0 || n > 64) {
    throw std::invalid_argument("is_schur: dimension must be in [1, 64]");
  }

  SchurResult res;
  res.spectral_radius = spectral_radius_estimate(m);

  // (I - M' (x) M') vec(P) = vec(I)
  const Eigen::MatrixXd mt = m.transpose();
  Eigen::MatrixXd sys = Eigen::MatrixXd::Identity(n * n, n * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      sys.block(i * n, j * n, n, n) -= mt(i, j) * mt;
    }
  }
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(eye.data(), n * n);

  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);
  const Eigen::VectorXd vec_p = lu.solve(rhs);
  if (!vec_p.allFinite()) {
    return res; // singular system: some eigenvalue pair sits on the unit circle
  }
  const double resid = (sys * vec_p - rhs).lpNorm<Eigen::Infinity>();
  if (resid > 1e-8 * (1.0 + vec_p.lpNorm<Eigen::Infinity>())) {
    return res;
  }

  Eigen::MatrixXd p = Eigen::Map<const Eigen::MatrixXd>(vec_p.data(), n, n);
  p = 0.5 * (p + p.transpose()).eval();
  const Eigen::LLT<Eigen::MatrixXd> llt(p);
  res.schur = (llt.info() == Eigen::Success);
  return res;
}

Eigen::MatrixXd closed_loop_matrix(const DelayedPlantModel& m, double kv) {
  return m.a + m.b * feedback_row(kv, m.delay_steps());
}

Eigen::MatrixXd stability_matrix(const DelayedPlantModel& m, double kv) {
  const Eigen::MatrixXd cl = closed_loop_matrix(m, kv);
  const int n = m.dim();
  Eigen::MatrixXd red(n - 1, n - 1);
  int ri = 0;
  for (int i = 0; i < n; ++i) {
    if (i == 2) continue;
    int rj = 0;
    for (int j = 0; j < n; ++j) {
      if (j == 2) continue;
      red(ri, rj) = cl(i, j);
      ++rj;
    }
    ++ri;
  }
  return red;
}

namespace {

struct ThetaCheck {
  bool schur = false;
  double radius = 0.0;
};

ThetaCheck check_theta(double kv, double kd, double tau, const VehicleParams& p,
                       double t_s, double margin) {
  const DelayedPlantModel model = build_delayed_model(p, kd, tau, t_s);
  const Eigen::MatrixXd cl = stability_matrix(model, kv);
  // requiring rho < margin is the same as Schur stability of cl / margin
  const SchurResult r = is_schur(margin == 1.0 ? cl : (cl / margin).eval());
  ThetaCheck c;
  c.schur = r.schur;
  c.radius = r.spectral_radius * (margin == 1.0 ? 1.0 : margin);
  return c;
}

} // namespace

CertifyResult certify_gain(double kv, const DriverUncertaintyBounds& bounds,
                           const VehicleParams& p, double t_s,
                           const GainSearchConfig& cfg) {
  cfg.validate();
  bounds.validate();

  CertifyResult out;
  StabilityCertificate& cert = out.certificate;
  cert.kv = kv;

  std::vector<std::pair<double, double>> thetas;
  thetas.reserve(static_cast<size_t>(cfg.sample_count) + 5);
  // worst corner first: maximum gain with maximum delay
  thetas.emplace_back(bounds.kd_max, bounds.tau_max);
  thetas.emplace_back(bounds.kd_min, bounds.tau_min);
  thetas.emplace_back(bounds.kd_min, bounds.tau_max);
  thetas.emplace_back(bounds.kd_max, bounds.tau_min);
  SplitMix64 rng(cfg.rng_seed);
  for (int i = 0; i < cfg.sample_count; ++i) {
    thetas.emplace_back(rng.uniform(bounds.kd_min, bounds.kd_max),
                        rng.uniform(bounds.tau_min, bounds.tau_max));
  }

  for (const auto& [kd, tau] : thetas) {
    const ThetaCheck c = check_theta(kv, kd, tau, p, t_s, cfg.margin);
    ++cert.samples_checked;
    if (c.radius > cert.worst_spectral_radius) {
      cert.worst_spectral_radius = c.radius;
      cert.worst_kd = kd;
      cert.worst_tau = tau;
    }
    if (!c.schur) {
      out.failing_kd = kd;
      out.failing_tau = tau;
      return out;
    }
  }
  out.certified = true;
  return out;
}

std::vector<RadiusSample> sample_spectral_radii(
    double kv, const DriverUncertaintyBounds& bounds, const VehicleParams& p,
    double t_s, int count, unsigned long long seed) {
  bounds.validate();
  std::vector<RadiusSample> out(static_cast<size_t>(count));
  SplitMix64 rng(seed);
  for (int i = 0; i < count; ++i) {
    RadiusSample& s = out[static_cast<size_t>(i)];
    s.kd = rng.uniform(bounds.kd_min, bounds.kd_max);
    s.tau = rng.uniform(bounds.tau_min, bounds.tau_max);
  }
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    RadiusSample& s = out[static_cast<size_t>(i)];
    const DelayedPlantModel model = build_delayed_model(p, s.kd, s.tau, t_s);
    const SchurResult r = is_schur(stability_matrix(model, kv));
    s.spectral_radius = r.spectral_radius;
    s.schur = r.schur;
  }
  return out;
}

StepResponse advice_step_settling(const DelayedPlantModel& m, double kv,
                                  bool with_feedback, double band,
                                  double t_max) {
  // reduced system without the path integrator
  const int n = m.dim() - 1;
  Eigen::MatrixXd a(n, n);
  Eigen::VectorXd b(n);
  {
    const Eigen::MatrixXd full =
        with_feedback ? closed_loop_matrix(m, kv) : m.a;
    int ri = 0;
    for (int i = 0; i < m.dim(); ++i) {
      if (i == 2) continue;
      int rj = 0;
      for (int j = 0; j < m.dim(); ++j) {
        if (j == 2) continue;
        a(ri, rj) = full(i, j);
        ++rj;
      }
      b(ri) = m.b(i);
      ++ri;
    }
  }

  StepResponse res;
  res.settling_time = std::numeric_limits<double>::infinity();
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - a);
  const Eigen::VectorXd x_inf = lu.solve(b);
  if (!x_inf.allFinite()) return res;
  res.v_final = x_inf(1);
  if (std::abs(res.v_final) < 1e-12) return res;

  const int steps = static_cast<int>(std::ceil(t_max / m.sample_time));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  int last_outside = 0; // v(0) = 0 is outside the band
  for (int k = 1; k <= steps; ++k) {
    x = (a * x + b).eval();
    if (!x.allFinite() || std::abs(x(1)) > 1e6) return res; // diverged
    if (std::abs(x(1) - res.v_final) > band * std::abs(res.v_final)) {
      last_outside = k;
    }
  }
  if (last_outside == steps) return res; // still outside at the end
  res.settling_time = (last_outside + 1) * m.sample_time;
  return res;
}

std::optional<GainInterval> search_gain(const DriverUncertaintyBounds& bounds,
                                        const VehicleParams& p, double t_s,
                                        const GainSearchConfig& cfg) {
  cfg.validate();
  const int pts = cfg.grid_points;
  std::vector<double> grid(static_cast<size_t>(pts));
  for (int i = 0; i < pts; ++i) {
    grid[static_cast<size_t>(i)] =
        pts == 1 ? cfg.kv_grid_min
                 : cfg.kv_grid_min +
                       (cfg.kv_grid_max - cfg.kv_grid_min) * i / (pts - 1);
  }

  std::vector<char> ok(static_cast<size_t>(pts), 0);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < pts; ++i) {
    GainSearchConfig local = cfg;
    local.rng_seed = mix64(cfg.rng_seed ^ mix64(static_cast<std::uint64_t>(i)));
    ok[static_cast<size_t>(i)] =
        certify_gain(grid[static_cast<size_t>(i)], bounds, p, t_s, local).certified
            ? 1
            : 0;
  }

  int best_start = -1, best_len = 0, run_start = -1, run_len = 0;
  for (int i = 0; i < pts; ++i) {
    if (ok[static_cast<size_t>(i)]) {
      if (run_len == 0) run_start = i;
      ++run_len;
      if (run_len > best_len) {
        best_len = run_len;
        best_start = run_start;
      }
    } else {
      run_len = 0;
    }
  }
  if (best_len == 0) return std::nullopt;

  GainInterval iv;
  iv.kv_lo = grid[static_cast<size_t>(best_start)];
  iv.kv_hi = grid[static_cast<size_t>(best_start + best_len - 1)];
  iv.kv_recommended = 0.5 * (iv.kv_lo + iv.kv_hi);
  return iv;
}

} // namespace scenmpc
