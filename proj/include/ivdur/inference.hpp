#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivdur/dataset.hpp"
#include "ivdur/estimator.hpp"
#include "ivdur/survival.hpp"

namespace ivdur {

// A scalar function of phi that the bootstrap can report on.
struct Functional {
  enum class Kind { phi, qte, ate, survival, hazard };
  Kind kind = Kind::phi;
  std::size_t z0 = 0;  // phi/survival/hazard level, or the baseline level
  std::size_t z1 = 0;  // treated level for qte/ate
  double t = 0.0;      // survival/hazard argument

  static Functional phi(std::size_t z) { return {Kind::phi, z, z, 0.0}; }
  static Functional qte(std::size_t z0, std::size_t z1) { return {Kind::qte, z0, z1, 0.0}; }
  static Functional ate(std::size_t z0, std::size_t z1) { return {Kind::ate, z0, z1, 0.0}; }
  static Functional survival(std::size_t z, double t) { return {Kind::survival, z, z, t}; }
  static Functional hazard(std::size_t z, double t) { return {Kind::hazard, z, z, t}; }

  // Indexed by the u grid (phi, qte) rather than a single number.
  bool on_grid() const noexcept { return kind == Kind::phi || kind == Kind::qte; }
  std::string label() const;
  void validate(std::size_t num_treatments) const;
};

struct GridValue {
  double value = 0.0;
  std::size_t index = 0;
  bool off_grid = false;  // u was not a grid point; nearest point used
};

// Nearest grid point to u, flagging a miss larger than 1e-9.
std::size_t nearest_grid_index(const PhiEstimate& estimate, double u, bool* off_grid = nullptr);

// phi(z1, u) - phi(z0, u)
GridValue qte(const PhiEstimate& estimate, std::size_t z0, std::size_t z1, double u);

enum class TailPolicy { zero, hold_last };

struct AteResult {
  double value = 0.0;
  double tail_mass = 0.0;  // exp(-u_max): probability mass beyond the grid
};

// Integral of (phi(z1,u) - phi(z0,u)) e^{-u} du by the trapezoid rule on
// {0} + grid (phi(z, 0) = 0), plus the declared tail. Throws TailDominates
// when exp(-u_max) > 0.5.
AteResult ate(const PhiEstimate& estimate, std::size_t z0, std::size_t z1, TailPolicy tail = TailPolicy::zero);

// Pool-adjacent-violators fit of a nondecreasing sequence (equal weights).
std::vector<double> pava(std::span<const double> values);

// Monotonised phi-hat(z, .) on the estimation grid.
std::vector<double> monotonize(const PhiEstimate& estimate, std::size_t z);

struct SurvivalValue {
  double value = 1.0;
  bool upper_bound = false;  // t beyond phi(z, u_max): true value <= `value`
};

// P(phi(z, U) >= t) = exp(-phi_z^{-1}(t)), inverse of the monotonised
// piecewise-linear interpolant through (0, 0) and the grid.
SurvivalValue counterfactual_survival(const PhiEstimate& estimate, std::size_t z, double t);

struct HazardValue {
  double value = 0.0;
  bool infinite = false;     // t sits on a flat segment of phi
  bool out_of_range = false; // t beyond phi(z, u_max); value is NaN
};

// Reciprocal slope of the monotonised interpolant at t (right segment).
HazardValue counterfactual_hazard(const PhiEstimate& estimate, std::size_t z, double t);

// Everything needed to rerun the estimator on a resample.
struct PipelineConfig {
  double tbar = 0.0;  // fixed across resamples
  SmootherOptions smoother;
  std::vector<double> u_grid;
  SolverConfig solver;
};

// Fit + pointwise estimation.
PhiEstimate run_pipeline(const Dataset& data, const PipelineConfig& config);

struct BootstrapEntry {
  std::string functional;
  std::optional<double> u;
  double point = 0.0;
  double lower = 0.0;  // 2.5th percentile
  double upper = 0.0;  // 97.5th percentile
  bool asymmetric = false;  // point outside [lower, upper]
};

struct UniformBand {
  std::string functional;
  double half_width = 0.0;  // 95th percentile of sup_u |f_b(u) - f(u)|
};

struct BootstrapResult {
  int B = 0;
  std::uint64_t seed = 0;
  std::size_t redraws = 0;
  std::vector<BootstrapEntry> entries;
  std::vector<UniformBand> bands;
};

// Percentile bootstrap over whole observation rows. Resamples that leave a
// cell empty that is populated in `data`, or that cannot be fitted, are
// redrawn; more than 10 * B redraws throws BootstrapDegeneracy.
BootstrapResult bootstrap(const Dataset& data, const PipelineConfig& config, std::span<const Functional> functionals,
                          int B, std::uint64_t seed, unsigned threads = 1);

}  // namespace ivdur
