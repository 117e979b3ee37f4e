#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ivdur/dataset.hpp"

namespace ivdur {

// A sub-survival surface S(t, z | w) = P(T >= t, Z = z | W = w) together with
// its t-derivative. Implemented by fitted models and by analytic fixtures.
class SubSurvival {
 public:
  virtual ~SubSurvival() = default;

  virtual std::size_t num_treatments() const = 0;   // L
  virtual std::size_t num_instruments() const = 0;  // K

  virtual double value(double t, std::size_t z, std::size_t w) const = 0;
  virtual double derivative(double t, std::size_t z, std::size_t w) const = 0;

  // Upper bound T-bar of the region on which the surface is trusted.
  virtual double horizon() const = 0;
};

// Right-continuous product-limit step function. Equal to 1 before the first
// jump; values_[i] is the level on [jump_times_[i], jump_times_[i+1]).
class StepSurvival {
 public:
  StepSurvival() = default;
  StepSurvival(std::vector<double> jump_times, std::vector<double> values);

  double operator()(double t) const;

  const std::vector<double>& jump_times() const noexcept { return jump_times_; }
  const std::vector<double>& values() const noexcept { return values_; }
  bool empty() const noexcept { return jump_times_.empty(); }

 private:
  std::vector<double> jump_times_;
  std::vector<double> values_;
};

// Product-limit estimator over (duration, event) pairs; tied event times
// contribute one factor (1 - d/Y).
StepSurvival product_limit(std::span<const double> y, std::span<const int> delta);

// Kaplan-Meier estimate for the (z, w) cell. Throws EmptyCell.
StepSurvival km_estimate(const Dataset& data, std::size_t z, std::size_t w);

// 1.06 * min(sd, IQR / 1.349) * n^(-1/5). Throws DegenerateSample when there
// are fewer than two distinct values.
double bandwidth_rule_of_thumb(std::span<const double> durations, double constant = 1.06);

enum class SmootherMethod { kernel, local_polynomial };

// Smoothed survival t -> S~(t) and its derivative.
//
// Kernel method: Epanechnikov convolution of the step function, extended by
// one on t < 0. With jump sizes d_j at times y_j the convolution telescopes to
//     S~(t) = 1 - sum_j d_j * Kbar((t - y_j) / h),
// Kbar being the kernel CDF on [-1, 1], and the derivative is exact.
//
// Local-polynomial method: weighted degree-one fit of the step values at the
// jump times, Epanechnikov weights centred at t; intercept and slope are the
// value and derivative, values clipped to [0, 1].
class SmoothSurvival {
 public:
  SmoothSurvival() = default;

  double value(double t) const { return evaluate(t).first; }
  double derivative(double t) const { return evaluate(t).second; }
  std::pair<double, double> evaluate(double t) const;

  double bandwidth() const noexcept { return bandwidth_; }
  SmootherMethod method() const noexcept { return method_; }

  // Local-polynomial only: some t in [0, horizon] had fewer than two jump
  // times inside the window, so the window was widened there.
  bool boundary_warning() const noexcept { return boundary_warning_; }

 private:
  friend SmoothSurvival kernel_smooth(const StepSurvival& km, double bandwidth);
  friend SmoothSurvival localpoly_smooth(const StepSurvival& km, double bandwidth, double horizon);

  std::pair<double, double> kernel_at(double t) const;
  std::pair<double, double> kernel_direct(double t, std::size_t lo, std::size_t hi) const;
  std::pair<double, double> localpoly_at(double t) const;

  SmootherMethod method_ = SmootherMethod::kernel;
  double bandwidth_ = 1.0;
  bool boundary_warning_ = false;
  std::vector<double> times_;   // jump times
  std::vector<double> levels_;  // step value after each jump
  std::vector<double> drops_;   // jump sizes (positive)
  // Kernel method: prefix sums of drops_ * (times_ / h)^m, m = 0..3.
  std::vector<long double> moments_[4];
  bool use_moments_ = false;
};

// Throws InvalidBandwidth for a nonpositive bandwidth.
SmoothSurvival kernel_smooth(const StepSurvival& km, double bandwidth);
SmoothSurvival localpoly_smooth(const StepSurvival& km, double bandwidth, double horizon);

struct SmootherOptions {
  SmootherMethod method = SmootherMethod::kernel;
  std::optional<double> bandwidth;  // per-cell rule of thumb when empty
  double rule_constant = 1.06;
};

struct SurvivalCell {
  std::size_t count = 0;
  double p_hat = 0.0;  // P(Z = z | W = w)
  StepSurvival km;
  SmoothSurvival smooth;
};

// Fitted S-hat(t, z | w) = S~(t | z, w) * p_hat(z, w); identically zero on
// empty cells.
class SurvivalModel final : public SubSurvival {
 public:
  SurvivalModel(std::size_t L, std::size_t K, double tbar, std::vector<SurvivalCell> cells);

  std::size_t num_treatments() const override { return L_; }
  std::size_t num_instruments() const override { return K_; }
  double value(double t, std::size_t z, std::size_t w) const override;
  double derivative(double t, std::size_t z, std::size_t w) const override;
  double horizon() const override { return tbar_; }

  const SurvivalCell& cell(std::size_t z, std::size_t w) const { return cells_.at(z * K_ + w); }

 private:
  std::size_t L_, K_;
  double tbar_;
  std::vector<SurvivalCell> cells_;
};

// Throws EmptyInstrumentLevel, and DegenerateSample when a nonempty cell
// cannot support the bandwidth rule.
SurvivalModel fit_survival_model(const Dataset& data, double tbar, const SmootherOptions& options = {});

// c0 when supplied and finite, else the minimum over nonempty cells of the
// empirical alpha-quantile of Y.
double choose_tbar(const Dataset& data, double alpha = 0.95, std::optional<double> c0 = std::nullopt);

// Naive comparator: invert the Nelson-Aalen cumulative hazard of T given
// Z = z (pooled over w). +infinity where the hazard never reaches u.
std::vector<double> nelson_aalen_invert(const Dataset& data, std::size_t z, std::span<const double> u_grid);

}  // namespace ivdur
