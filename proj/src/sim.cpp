#include "ivdur/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "ivdur/errors.hpp"
#include "ivdur/inference.hpp"
#include "ivdur/parallel.hpp"
#include "ivdur/random.hpp"

namespace ivdur {

void DgpConfig::validate() const {
  if (n < 1) throw Error("sample size must be >= 1");
  if (!(bernoulli_p_w >= 0.0 && bernoulli_p_w <= 1.0)) throw Error("P(W=1) must lie in [0, 1]");
  if (!(lambda0 > 0.0 && lambda1 > 0.0)) throw Error("hazards must be positive");
  if (!(censor_scale >= 0.0 && censor_floor >= 0.0)) throw Error("censoring parameters must be nonnegative");
}

SimulatedSample dgp_generate(const DgpConfig& config) {
  config.validate();
  std::vector<ObservationRecord> rows(config.n);
  std::vector<LatentRecord> latent(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    CounterRng rng(config.seed, i);
    const bool w = rng.bernoulli(config.bernoulli_p_w);
    const double u = rng.exponential();
    const double eps = rng.normal();
    const double e = rng.exponential();
    const bool z = w && (config.intercept + eps + config.coef_w + config.coef_u * u >= 0.0);
    const std::size_t zi = z ? 1 : 0;
    const double t = config.true_phi(zi, u);
    const double c = std::max(config.censor_scale * e, config.censor_floor);
    rows[i] = {std::min(t, c), zi, w ? std::size_t{1} : std::size_t{0}, t <= c ? 1 : 0};
    latent[i] = {u, eps, t, c};
  }
  return {Dataset(std::move(rows), {"0", "1"}, {"0", "1"}), std::move(latent)};
}

std::pair<std::vector<double>, std::vector<double>> gauss_laguerre(std::size_t n) {
  if (n < 1) throw Error("quadrature needs at least one node");
  // Golub-Welsch on the Jacobi matrix of the monic Laguerre recurrence.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    J(k, k) = 2.0 * static_cast<double>(i) + 1.0;
    if (i + 1 < n) J(k, k + 1) = J(k + 1, k) = static_cast<double>(i + 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  std::vector<double> x(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    x[i] = es.eigenvalues()[k];
    const double v = es.eigenvectors()(0, k);
    w[i] = v * v;
  }
  return {x, w};
}

AnalyticFixture counterexample_fixture() {
  // S(t, z | w) = P(Z=z | W=w) P(U >= phi_z^{-1}(t) | Z=z, W=w)
  static constexpr double coef[2][2] = {{0.5, 0.125}, {0.5, 0.875}};
  static constexpr double rate[2] = {1.0, 2.0};
  auto value = [](double t, std::size_t z, std::size_t w) {
    return coef[z][w] * std::exp(-rate[z] * std::max(t, 0.0));
  };
  auto derivative = [](double t, std::size_t z, std::size_t w) {
    return t < 0.0 ? 0.0 : -rate[z] * coef[z][w] * std::exp(-rate[z] * t);
  };
  auto phi = [](std::size_t z, double u) { return u / rate[z]; };
  return AnalyticFixture(2, 2, value, derivative, 5.0, phi, 1.0);
}

AnalyticFixture dgp_analytic_fixture(const DgpConfig& config) {
  config.validate();
  const auto rule = gauss_laguerre(64);
  const auto nodes = std::make_shared<const std::pair<std::vector<double>, std::vector<double>>>(rule);
  const DgpConfig cfg = config;

  // P(Z = z | U = u, W = w)
  auto g = [cfg](double u, std::size_t z, std::size_t w) {
    if (w == 0) return z == 0 ? 1.0 : 0.0;
    const double s = cfg.intercept + cfg.coef_w + cfg.coef_u * u;  // Z = 1 iff eps >= -s
    const double p1 = 0.5 * std::erfc(-s / std::numbers::sqrt2);
    return z == 1 ? p1 : 0.5 * std::erfc(s / std::numbers::sqrt2);
  };

  auto value = [cfg, g, nodes](double t, std::size_t z, std::size_t w) {
    const double a = cfg.lambda(z) * std::max(t, 0.0);
    if (w == 0) return z == 0 ? std::exp(-a) : 0.0;
    // int_a^inf e^{-u} g(u) du = e^{-a} int_0^inf e^{-v} g(a + v) dv
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes->first.size(); ++i) sum += nodes->second[i] * g(a + nodes->first[i], z, w);
    return std::exp(-a) * sum;
  };
  auto derivative = [cfg, g](double t, std::size_t z, std::size_t w) {
    if (t < 0.0) return 0.0;
    const double lz = cfg.lambda(z);
    return -lz * std::exp(-lz * t) * g(lz * t, z, w);
  };
  auto phi = [cfg](std::size_t z, double u) { return cfg.true_phi(z, u); };
  return AnalyticFixture(2, 2, value, derivative, cfg.censor_floor, phi, cfg.censor_floor);
}

AnalyticFixture exponential_fixture(std::vector<std::vector<double>> p, std::vector<std::vector<double>> rate,
                                    double horizon, std::optional<double> c0) {
  const std::size_t L = p.size();
  if (L == 0 || rate.size() != L) throw Error("fixture tables must have one row per treatment level");
  const std::size_t K = p[0].size();
  for (std::size_t z = 0; z < L; ++z)
    if (p[z].size() != K || rate[z].size() != K) throw Error("fixture tables must be rectangular");
  auto value = [p, rate](double t, std::size_t z, std::size_t w) {
    return p[z][w] * std::exp(-rate[z][w] * std::max(t, 0.0));
  };
  auto derivative = [p, rate](double t, std::size_t z, std::size_t w) {
    return t < 0.0 ? 0.0 : -rate[z][w] * p[z][w] * std::exp(-rate[z][w] * t);
  };
  return AnalyticFixture(L, K, value, derivative, horizon, {}, c0);
}

AnalyticFixture triangular_fixture() {
  AnalyticFixture base = exponential_fixture({{1.0, 0.4}, {0.0, 0.6}}, {{0.1, 0.1}, {0.2, 0.2}}, 10.0, 10.0);
  auto value = [base](double t, std::size_t z, std::size_t w) { return base.value(t, z, w); };
  auto derivative = [base](double t, std::size_t z, std::size_t w) { return base.derivative(t, z, w); };
  auto phi = [](std::size_t z, double u) { return z == 0 ? 10.0 * u : 5.0 * u; };
  return AnalyticFixture(2, 2, value, derivative, 10.0, phi, 10.0);
}

void StudyConfig::validate() const {
  dgp.validate();
  if (replications < 1) throw Error("replications must be >= 1");
  if (u_grid.empty()) throw Error("empty estimation grid");
  if (bootstrap_B < 0 || bootstrap_B == 1) throw Error("bootstrap B must be 0 or >= 2");
  if (!(accuracy_lo <= accuracy_hi)) throw Error("accuracy range is empty");
  solver.validate();
  breakpoint.validate();
}

namespace {

struct ReplicationResult {
  std::vector<double> phi0, phi1, naive0, naive1, residual;
  std::vector<SolverStatus> status;
  std::optional<double> breakpoint;
  double censored = 0.0;
  std::array<std::vector<double>, kCoverageFunctionals> lower, upper;
};

ReplicationResult run_one(const StudyConfig& config, std::size_t r) {
  DgpConfig dgp = config.dgp;
  dgp.seed = stream_key(config.dgp.seed, r);
  const SimulatedSample sample = dgp_generate(dgp);

  PipelineConfig pipeline;
  pipeline.tbar = config.tbar.value_or(dgp.censor_floor);
  pipeline.smoother = config.smoother;
  pipeline.u_grid = config.u_grid;
  pipeline.solver = config.solver;
  pipeline.solver.threads = 1;

  ReplicationResult out;
  out.censored = sample.data.censored_fraction();
  const PhiEstimate est = run_pipeline(sample.data, pipeline);
  const std::size_t M = est.size();
  out.phi0.resize(M);
  out.phi1.resize(M);
  out.status = est.status;
  for (std::size_t m = 0; m < M; ++m) {
    out.phi0[m] = est.phi(0, m);
    out.phi1[m] = est.phi(1, m);
  }
  out.residual = est.residual_norm;
  out.naive0 = nelson_aalen_invert(sample.data, 0, config.u_grid);
  out.naive1 = nelson_aalen_invert(sample.data, 1, config.u_grid);
  out.breakpoint = detect_breakpoint(est, config.breakpoint).u0_hat;

  if (config.bootstrap_B > 0) {
    PipelineConfig at_points = pipeline;
    at_points.u_grid = config.coverage_u;
    const std::vector<Functional> fs{Functional::phi(0), Functional::phi(1), Functional::qte(0, 1)};
    const BootstrapResult boot = bootstrap(sample.data, at_points, fs, config.bootstrap_B,
                                           stream_key(dgp.seed, 0xb0075742ULL), 1);
    const std::size_t P = config.coverage_u.size();
    for (std::size_t f = 0; f < kCoverageFunctionals; ++f) {
      out.lower[f].resize(P);
      out.upper[f].resize(P);
      for (std::size_t p = 0; p < P; ++p) {
        out.lower[f][p] = boot.entries[f * P + p].lower;
        out.upper[f][p] = boot.entries[f * P + p].upper;
      }
    }
  }
  return out;
}

double mean_abs_error(const std::vector<double>& u, const std::vector<double>& est,
                      const std::vector<double>& truth, double lo, double hi) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t m = 0; m < u.size(); ++m) {
    if (u[m] < lo - 1e-12 || u[m] > hi + 1e-12) continue;
    sum += std::abs(est[m] - truth[m]);
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

ReplicationSummary run_replication_study(const StudyConfig& config) {
  config.validate();
  const std::size_t R = config.replications;
  std::vector<ReplicationResult> results(R);
  parallel_for(R, config.threads, [&](std::size_t r) { results[r] = run_one(config, r); });

  ReplicationSummary s;
  s.replications = R;
  s.u_grid = config.u_grid;
  const std::size_t M = s.u_grid.size();
  for (double u : s.u_grid) {
    s.truth_phi0.push_back(config.dgp.true_phi(0, u));
    s.truth_phi1.push_back(config.dgp.true_phi(1, u));
    s.truth_qte.push_back(config.dgp.true_phi(1, u) - config.dgp.true_phi(0, u));
  }
  s.mean_phi0.assign(M, 0.0);
  s.mean_phi1.assign(M, 0.0);
  s.mean_naive0.assign(M, 0.0);
  s.mean_naive1.assign(M, 0.0);
  s.mean_residual_norm.assign(M, 0.0);
  s.boundary_count.assign(M, 0);
  s.failed_count.assign(M, 0);

  const auto Rd = static_cast<double>(R);
  const std::size_t P = config.coverage_u.size();
  s.coverage_u = config.coverage_u;
  s.bootstrap_run = config.bootstrap_B > 0;
  for (std::size_t f = 0; f < kCoverageFunctionals; ++f) {
    s.coverage[f].assign(P, 0.0);
    s.covered[f].assign(P, 0);
    s.mean_lower[f].assign(P, 0.0);
    s.mean_upper[f].assign(P, 0.0);
  }

  std::size_t detected = 0;
  for (const auto& res : results) {
    for (std::size_t m = 0; m < M; ++m) {
      s.mean_phi0[m] += res.phi0[m] / Rd;
      s.mean_phi1[m] += res.phi1[m] / Rd;
      s.mean_naive0[m] += res.naive0[m] / Rd;
      s.mean_naive1[m] += res.naive1[m] / Rd;
      s.mean_residual_norm[m] += res.residual[m] / Rd;
      if (res.status[m] == SolverStatus::boundary) ++s.boundary_count[m];
      else if (res.status[m] != SolverStatus::converged) ++s.failed_count[m];
    }
    s.mean_censored_fraction += res.censored / Rd;
    s.breakpoints.push_back(res.breakpoint);
    if (!res.breakpoint) ++s.breakpoint_none;
    else if (*res.breakpoint >= config.detect_lo - 1e-12 && *res.breakpoint <= config.detect_hi + 1e-12) ++detected;

    if (s.bootstrap_run) {
      for (std::size_t p = 0; p < P; ++p) {
        const double u = config.coverage_u[p];
        const std::array<double, kCoverageFunctionals> truth{
            config.dgp.true_phi(0, u), config.dgp.true_phi(1, u),
            config.dgp.true_phi(1, u) - config.dgp.true_phi(0, u)};
        for (std::size_t f = 0; f < kCoverageFunctionals; ++f) {
          const double lo = res.lower[f][p], hi = res.upper[f][p];
          if (lo <= truth[f] && truth[f] <= hi) ++s.covered[f][p];
          s.mean_lower[f][p] += lo / Rd;
          s.mean_upper[f][p] += hi / Rd;
        }
      }
    }
  }
  for (std::size_t f = 0; f < kCoverageFunctionals; ++f)
    for (std::size_t p = 0; p < P; ++p) s.coverage[f][p] = static_cast<double>(s.covered[f][p]) / Rd;
  for (std::size_t m = 0; m < M; ++m) s.mean_qte.push_back(s.mean_phi1[m] - s.mean_phi0[m]);
  s.detection_rate = static_cast<double>(detected) / Rd;
  s.mae_phi0 = mean_abs_error(s.u_grid, s.mean_phi0, s.truth_phi0, config.accuracy_lo, config.accuracy_hi);
  s.mae_phi1 = mean_abs_error(s.u_grid, s.mean_phi1, s.truth_phi1, config.accuracy_lo, config.accuracy_hi);
  s.mae_naive0 = mean_abs_error(s.u_grid, s.mean_naive0, s.truth_phi0, config.accuracy_lo, config.accuracy_hi);
  s.mae_naive1 = mean_abs_error(s.u_grid, s.mean_naive1, s.truth_phi1, config.accuracy_lo, config.accuracy_hi);
  return s;
}

}  // namespace ivdur
