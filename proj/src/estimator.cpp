#include "ivdur/estimator.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "ivdur/errors.hpp"
#include "ivdur/parallel.hpp"

namespace ivdur {

void SolverConfig::validate() const {
  if (multistart_grid_points_per_dim < 2) throw Error("multistart lattice needs at least 2 points per axis");
  if (max_iterations < 1) throw Error("max_iterations must be positive");
  if (!(gradient_tolerance > 0.0) || !(step_tolerance > 0.0)) throw Error("solver tolerances must be positive");
}

const char* to_string(SolverStatus s) noexcept {
  switch (s) {
    case SolverStatus::converged: return "converged";
    case SolverStatus::boundary: return "boundary";
    case SolverStatus::multistart_disagreement: return "multistart-disagreement";
    case SolverStatus::max_iterations: return "max-iterations";
  }
  return "unknown";
}

SolverStatus solver_status_from_string(const std::string& s) {
  for (auto st : {SolverStatus::converged, SolverStatus::boundary, SolverStatus::multistart_disagreement,
                  SolverStatus::max_iterations})
    if (s == to_string(st)) return st;
  throw Error("unknown solver status '" + s + "'");
}

ResidualContext::ResidualContext(const SubSurvival& m, double u_, Eigen::MatrixXd v)
    : model(m), u(u_), weight(std::move(v)) {
  const auto K = static_cast<Eigen::Index>(m.num_instruments());
  if (weight.size() == 0) weight = Eigen::MatrixXd::Identity(K, K);
  if (weight.rows() != K || weight.cols() != K) throw Error("weight matrix must be K x K");
}

Eigen::VectorXd residual(const ResidualContext& ctx, const Eigen::VectorXd& theta) {
  const std::size_t L = ctx.model.num_treatments(), K = ctx.model.num_instruments();
  const double target = std::exp(-ctx.u);
  Eigen::VectorXd r(static_cast<Eigen::Index>(K));
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (std::size_t l = 0; l < L; ++l) s += ctx.model.value(theta[static_cast<Eigen::Index>(l)], l, k);
    r[static_cast<Eigen::Index>(k)] = s - target;
  }
  return r;
}

Eigen::MatrixXd jacobian(const ResidualContext& ctx, const Eigen::VectorXd& theta) {
  const std::size_t L = ctx.model.num_treatments(), K = ctx.model.num_instruments();
  Eigen::MatrixXd J(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(L));
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t l = 0; l < L; ++l)
      J(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) =
          ctx.model.derivative(theta[static_cast<Eigen::Index>(l)], l, k);
  return J;
}

double objective(const ResidualContext& ctx, const Eigen::VectorXd& theta) {
  const Eigen::VectorXd r = residual(ctx, theta);
  return r.dot(ctx.weight * r);
}

namespace {

Eigen::VectorXd clamp_box(Eigen::VectorXd x, double hi) {
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], 0.0, hi);
  return x;
}

}  // namespace

PointSolution local_solve(const ResidualContext& ctx, const SolverConfig& config, Eigen::VectorXd start) {
  const double hi = ctx.model.horizon();
  const Eigen::Index L = start.size();
  Eigen::VectorXd theta = clamp_box(std::move(start), hi);
  Eigen::VectorXd r = residual(ctx, theta);
  double f = r.dot(ctx.weight * r);
  assert(std::isfinite(f));
  double lambda = 1e-3;

  PointSolution out;
  bool done = false;
  int it = 0;
  for (; it < config.max_iterations && !done; ++it) {
    if (f <= 1e-30) {
      done = true;
      break;
    }
    const Eigen::MatrixXd J = jacobian(ctx, theta);
    const Eigen::MatrixXd VJ = ctx.weight * J;
    const Eigen::VectorXd g = VJ.transpose() * r;

    // Coordinates pinned at a bound with the gradient pushing outward stay fixed.
    std::vector<Eigen::Index> free;
    double pg = 0.0;
    for (Eigen::Index i = 0; i < L; ++i) {
      const bool pinned = (theta[i] <= 0.0 && g[i] > 0.0) || (theta[i] >= hi && g[i] < 0.0);
      if (!pinned) {
        free.push_back(i);
        pg = std::max(pg, std::abs(g[i]));
      }
    }
    if (pg <= config.gradient_tolerance) {
      done = true;
      break;
    }

    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd H(nf, nf);
    Eigen::VectorXd gf(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      gf[a] = g[free[a]];
      for (Eigen::Index b = 0; b < nf; ++b) H(a, b) = J.col(free[a]).dot(VJ.col(free[b]));
    }
    const double diag_scale = std::max(H.diagonal().maxCoeff(), 1e-300);

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd A = H;
      for (Eigen::Index a = 0; a < nf; ++a) A(a, a) += lambda * std::max(H(a, a), 1e-12 * diag_scale);
      const Eigen::VectorXd d = A.ldlt().solve(-gf);
      Eigen::VectorXd trial = theta;
      for (Eigen::Index a = 0; a < nf; ++a) trial[free[a]] += d[a];
      trial = clamp_box(std::move(trial), hi);
      const Eigen::VectorXd r_trial = residual(ctx, trial);
      const double f_trial = r_trial.dot(ctx.weight * r_trial);
      if (std::isfinite(f_trial) && f_trial < f) {
        const double step = (trial - theta).lpNorm<Eigen::Infinity>();
        theta = std::move(trial);
        r = r_trial;
        f = f_trial;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (step <= config.step_tolerance * (1.0 + theta.lpNorm<Eigen::Infinity>())) done = true;
      } else {
        lambda *= 4.0;
        if (lambda > 1e16) {
          // No descent direction left at working precision.
          done = true;
          break;
        }
      }
    }
  }

  out.theta = theta;
  out.residual_norm = f;
  out.iterations = it;
  if (!done) {
    out.status = SolverStatus::max_iterations;
  } else {
    const double tol = config.step_tolerance * std::max(1.0, hi);
    bool at_bound = false;
    for (Eigen::Index i = 0; i < L; ++i) at_bound |= (theta[i] <= tol || theta[i] >= hi - tol);
    out.status = at_bound ? SolverStatus::boundary : SolverStatus::converged;
  }
  return out;
}

PointSolution solve_at_u(const ResidualContext& ctx, const SolverConfig& config) {
  const std::size_t L = ctx.model.num_treatments();
  const int m = config.multistart_grid_points_per_dim;
  const double hi = ctx.model.horizon();

  std::size_t starts = 1;
  for (std::size_t l = 0; l < L; ++l) starts *= static_cast<std::size_t>(m);

  std::vector<PointSolution> runs;
  runs.reserve(starts);
  Eigen::VectorXd x(static_cast<Eigen::Index>(L));
  for (std::size_t s = 0; s < starts; ++s) {
    std::size_t rem = s;
    for (std::size_t l = 0; l < L; ++l) {
      const auto i = rem % static_cast<std::size_t>(m);
      rem /= static_cast<std::size_t>(m);
      x[static_cast<Eigen::Index>(l)] = (static_cast<double>(i) + 0.5) / m * hi;
    }
    runs.push_back(local_solve(ctx, config, x));
  }

  std::size_t best = 0;
  for (std::size_t s = 1; s < runs.size(); ++s)
    if (runs[s].residual_norm < runs[best].residual_norm) best = s;

  PointSolution out = runs[best];
  if (out.status == SolverStatus::max_iterations) return out;
  for (const auto& run : runs) {
    if (run.status == SolverStatus::max_iterations) continue;
    if (run.residual_norm <= out.residual_norm + 1e-10 &&
        (run.theta - out.theta).lpNorm<Eigen::Infinity>() > 1e-3 * hi) {
      out.status = SolverStatus::multistart_disagreement;
      break;
    }
  }
  return out;
}

std::size_t PhiEstimate::count(SolverStatus s) const {
  return static_cast<std::size_t>(std::count(status.begin(), status.end(), s));
}

PhiEstimate estimate_phi(const SubSurvival& model, std::span<const double> u_grid, const SolverConfig& config,
                         const WeightSchedule* weights) {
  config.validate();
  for (std::size_t m = 0; m < u_grid.size(); ++m) {
    if (!(u_grid[m] > 0.0)) throw Error("u grid points must be positive");
    if (m > 0 && !(u_grid[m] > u_grid[m - 1])) throw Error("u grid must be strictly increasing");
  }

  if (config.weighting == Weighting::two_step && weights == nullptr) {
    SolverConfig first = config;
    first.weighting = Weighting::identity;
    const PhiEstimate first_pass = estimate_phi(model, u_grid, first);
    const WeightSchedule schedule = two_step_weighting(model, first_pass);
    return estimate_phi(model, u_grid, config, &schedule);
  }

  const std::size_t M = u_grid.size(), L = model.num_treatments();
  PhiEstimate est;
  est.u_grid.assign(u_grid.begin(), u_grid.end());
  est.theta.resize(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(L));
  est.residual_norm.assign(M, 0.0);
  est.status.assign(M, SolverStatus::converged);
  est.tbar = model.horizon();
  est.weighting = config.weighting;
  if (weights && !weights->matrices.empty()) {
    if (weights->matrices.size() != M) throw Error("weight schedule does not match the grid");
    est.weight_fallback = weights->fallback;
  }

  parallel_for(M, config.threads, [&](std::size_t m) {
    Eigen::MatrixXd V;
    if (weights && !weights->matrices.empty()) V = weights->matrices[m];
    const ResidualContext ctx(model, u_grid[m], V);
    const PointSolution sol = solve_at_u(ctx, config);
    est.theta.row(static_cast<Eigen::Index>(m)) = sol.theta.transpose();
    est.residual_norm[m] = sol.residual_norm;
    est.status[m] = sol.status;
  });
  return est;
}

WeightSchedule two_step_weighting(const SubSurvival& model, const PhiEstimate& first_pass, double floor) {
  const auto K = static_cast<Eigen::Index>(model.num_instruments());
  const auto L = static_cast<Eigen::Index>(model.num_treatments());
  const std::size_t M = first_pass.size();
  WeightSchedule out;
  out.matrices.assign(M, Eigen::MatrixXd::Identity(K, K));
  out.fallback.assign(M, false);
  if (K != L) {
    // Only the exactly identified case has Sigma^{-1}; see README.
    out.overidentified = K > L;
    if (K < L) out.fallback.assign(M, true);
    return out;
  }
  for (std::size_t m = 0; m < M; ++m) {
    const ResidualContext ctx(model, first_pass.u_grid[m]);
    const Eigen::VectorXd theta = first_pass.theta.row(static_cast<Eigen::Index>(m)).transpose();
    const Eigen::MatrixXd sigma = jacobian(ctx, theta);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(sigma);
    const auto& sv = svd.singularValues();
    if (!(sv[0] > 0.0) || sv[sv.size() - 1] <= 1e-12 * sv[0]) {
      out.fallback[m] = true;
      continue;
    }
    const Eigen::MatrixXd inv = sigma.inverse();
    Eigen::MatrixXd V = inv.transpose() * inv;
    V = 0.5 * (V + V.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(V);
    Eigen::VectorXd ev = eig.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = std::max(ev[i], floor);
    out.matrices[m] = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  }
  return out;
}

std::vector<double> make_grid(double start, double step, double stop) {
  if (!(step > 0.0) || !(stop >= start)) throw Error("grid needs step > 0 and stop >= start");
  const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> grid(count);
  // Rounded so that e.g. 0.01 + 9 * 0.01 is stored as the literal 0.1.
  for (std::size_t m = 0; m < count; ++m)
    grid[m] = std::round((start + static_cast<double>(m) * step) * 1e12) / 1e12;
  return grid;
}

}  // namespace ivdur
