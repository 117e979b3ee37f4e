#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ivdur/estimator.hpp"
#include "ivdur/survival.hpp"

namespace ivdur {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct Interval {
  double lower = 0.0;
  double upper = kInfinity;
  bool closed_lower = true;
  bool closed_upper = false;

  bool unbounded() const noexcept { return upper == kInfinity; }
  bool contains(double x) const noexcept;
  bool contains(const Interval& other) const noexcept;
};

struct Box {
  std::vector<Interval> sides;

  bool contains(std::span<const double> theta) const;
  bool contains(const Box& other) const;
};

struct BoxUnion {
  std::size_t dimension = 0;
  double u = 0.0;
  double c0 = 0.0;
  std::vector<Box> boxes;

  bool empty() const noexcept { return boxes.empty(); }
  bool contains(std::span<const double> theta) const;
  bool contains(const Eigen::VectorXd& theta) const {
    return contains(std::span<const double>(theta.data(), static_cast<std::size_t>(theta.size())));
  }
};

// R_k(theta) = sum_l S(min(theta_l, c0), l | k) - exp(-u).
Eigen::VectorXd censored_residual(const SubSurvival& s, double u, double c0, const Eigen::VectorXd& theta);

// The defining predicate of the outer set: max theta >= c0 and min_k R_k >= 0.
bool outer_predicate(const SubSurvival& s, double u, double c0, const Eigen::VectorXd& theta);

struct OuterSetOptions {
  // Per-axis lattice size for the staircase used when two or more coordinates
  // are below c0 at once (L >= 3).
  std::size_t staircase_points = 16;
};

// Outer set as a union of boxes. Exact up to bisection tolerance for L <= 2;
// for L >= 3 the slices with several free coordinates are inner staircases.
BoxUnion outer_set(const SubSurvival& s, double u, double c0, const OuterSetOptions& options = {});

// Outer sets over a u-grid, computed in parallel.
std::vector<BoxUnion> outer_set_grid(const SubSurvival& s, std::span<const double> u_grid, double c0,
                                     unsigned threads = 1, const OuterSetOptions& options = {});

// Triangular design with L = K = 2, where treatment 1 is never taken under
// instrument 0 (S(0, 1 | 0) == 0).
BoxUnion triangular_outer_set(const SubSurvival& s, double u, double c0);

enum class OuterShape { empty, quadrant, two_strips, right_strip, upper_strip };

const char* to_string(OuterShape shape) noexcept;

// Which of the two-dimensional shapes a BoxUnion has; probes membership at
// the axis points (c0, 0), (0, c0) and (c0, c0).
OuterShape classify_shape(const BoxUnion& set);

// Largest x in [lo, hi] with pred(x), assuming pred is true at lo and
// monotone. Returns hi when pred(hi) holds.
template <class Pred>
double monotone_sup(Pred&& pred, double lo, double hi, double tol) {
  if (pred(hi)) return hi;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (pred(mid)) lo = mid;
    else hi = mid;
  }
  return lo;
}

struct BreakpointOptions {
  double kappa = 10.0;
  double baseline_fraction = 0.5;
  double boundary_fraction = 0.05;
  double min_baseline = 1e-10;  // floor for an exactly-zero baseline

  void validate() const;
};

struct BreakpointReport {
  std::vector<double> u_grid;
  std::vector<double> residual_norm;
  std::optional<double> u0_hat;
  std::optional<std::size_t> index;
  double baseline = 0.0;
  double threshold = 0.0;
  BreakpointOptions options;
};

BreakpointReport detect_breakpoint(std::span<const double> u_grid, std::span<const double> residual_norm,
                                   const BreakpointOptions& options = {});

inline BreakpointReport detect_breakpoint(const PhiEstimate& estimate, const BreakpointOptions& options = {}) {
  return detect_breakpoint(estimate.u_grid, estimate.residual_norm, options);
}

}  // namespace ivdur
