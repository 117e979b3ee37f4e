#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ivdur/survival.hpp"

namespace ivdur {

enum class Weighting { identity, two_step };

struct SolverConfig {
  int multistart_grid_points_per_dim = 8;
  int max_iterations = 200;
  double gradient_tolerance = 1e-12;
  double step_tolerance = 1e-10;
  Weighting weighting = Weighting::identity;
  unsigned threads = 1;  // 0: hardware parallelism

  void validate() const;
};

enum class SolverStatus { converged, boundary, multistart_disagreement, max_iterations };

const char* to_string(SolverStatus s) noexcept;
SolverStatus solver_status_from_string(const std::string& s);

// Objective at one u: || A(theta, S)(u) ||^2_V with V = weight (K x K, SPD).
struct ResidualContext {
  const SubSurvival& model;
  double u;
  Eigen::MatrixXd weight;

  ResidualContext(const SubSurvival& m, double u_, Eigen::MatrixXd v = {});
};

// (sum_l S(theta_l, z_l | w_k) - exp(-u))_k
Eigen::VectorXd residual(const ResidualContext& ctx, const Eigen::VectorXd& theta);

// Entry (k, l) = dS/dt(theta_l, z_l | w_k) = -f(theta_l, z_l | w_k).
Eigen::MatrixXd jacobian(const ResidualContext& ctx, const Eigen::VectorXd& theta);

double objective(const ResidualContext& ctx, const Eigen::VectorXd& theta);

struct PointSolution {
  Eigen::VectorXd theta;
  double residual_norm = 0.0;  // squared V-norm of the residual
  SolverStatus status = SolverStatus::converged;
  int iterations = 0;          // of the winning start
};

// One projected Gauss-Newton / Levenberg run from `start` on [0, horizon]^L.
PointSolution local_solve(const ResidualContext& ctx, const SolverConfig& config, Eigen::VectorXd start);

// Minimises the objective over [0, T-bar]^L from every node of a uniform
// multistart lattice and keeps the best local solution.
PointSolution solve_at_u(const ResidualContext& ctx, const SolverConfig& config);

// Per-grid-point weight matrices. An empty `matrices` means identity.
struct WeightSchedule {
  std::vector<Eigen::MatrixXd> matrices;
  std::vector<bool> fallback;  // identity substituted at this point
  bool overidentified = false; // K > L: identity everywhere
};

struct PhiEstimate {
  std::vector<double> u_grid;
  Eigen::MatrixXd theta;  // rows: grid points, columns: treatment levels
  std::vector<double> residual_norm;
  std::vector<SolverStatus> status;
  double tbar = 0.0;
  Weighting weighting = Weighting::identity;
  std::vector<bool> weight_fallback;  // two-step only

  std::size_t size() const noexcept { return u_grid.size(); }
  std::size_t num_treatments() const noexcept { return static_cast<std::size_t>(theta.cols()); }
  double phi(std::size_t z, std::size_t m) const { return theta(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(z)); }
  std::size_t count(SolverStatus s) const;
};

// Pointwise estimation on an increasing grid of positive u values. With
// two-step weighting and no schedule supplied, runs an identity first pass.
PhiEstimate estimate_phi(const SubSurvival& model, std::span<const double> u_grid, const SolverConfig& config,
                         const WeightSchedule* weights = nullptr);

// V(u) = (Sigma Sigma^T)^{-1} with Sigma = Gamma(phi-hat(u), S-hat), symmetrised
// and eigenvalue-floored at `floor`; identity when K > L or Sigma is singular.
WeightSchedule two_step_weighting(const SubSurvival& model, const PhiEstimate& first_pass, double floor = 1e-8);

// A u-grid given as start:step:stop.
std::vector<double> make_grid(double start, double step, double stop);

}  // namespace ivdur
