#include "ivdur/partial_id.hpp"

#include <algorithm>
#include <cmath>

#include "ivdur/errors.hpp"
#include "ivdur/parallel.hpp"
#include "ivdur/stats.hpp"

namespace ivdur {

bool Interval::contains(double x) const noexcept {
  if (x < lower || (x == lower && !closed_lower)) return false;
  if (unbounded()) return true;
  return x < upper || (x == upper && closed_upper);
}

bool Interval::contains(const Interval& o) const noexcept {
  const bool lower_ok = lower < o.lower || (lower == o.lower && (closed_lower || !o.closed_lower));
  bool upper_ok;
  if (unbounded()) upper_ok = true;
  else if (o.unbounded()) upper_ok = false;
  else upper_ok = upper > o.upper || (upper == o.upper && (closed_upper || !o.closed_upper));
  return lower_ok && upper_ok;
}

bool Box::contains(std::span<const double> theta) const {
  if (theta.size() != sides.size()) throw Error("box dimension mismatch");
  for (std::size_t i = 0; i < sides.size(); ++i)
    if (!sides[i].contains(theta[i])) return false;
  return true;
}

bool Box::contains(const Box& other) const {
  for (std::size_t i = 0; i < sides.size(); ++i)
    if (!sides[i].contains(other.sides[i])) return false;
  return true;
}

bool BoxUnion::contains(std::span<const double> theta) const {
  return std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) { return b.contains(theta); });
}

Eigen::VectorXd censored_residual(const SubSurvival& s, double u, double c0, const Eigen::VectorXd& theta) {
  if (!(c0 > 0.0)) throw Error("c0 must be positive");
  const auto L = s.num_treatments(), K = s.num_instruments();
  if (static_cast<std::size_t>(theta.size()) != L) throw Error("theta has the wrong dimension");
  Eigen::VectorXd r(static_cast<Eigen::Index>(K));
  const double target = std::exp(-u);
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0.0;
    for (std::size_t l = 0; l < L; ++l) sum += s.value(std::min(theta[static_cast<Eigen::Index>(l)], c0), l, k);
    r[static_cast<Eigen::Index>(k)] = sum - target;
  }
  return r;
}

bool outer_predicate(const SubSurvival& s, double u, double c0, const Eigen::VectorXd& theta) {
  return theta.maxCoeff() >= c0 && censored_residual(s, u, c0, theta).minCoeff() >= 0.0;
}

namespace {

Interval closed(double lo, double hi) { return {lo, hi, true, true}; }
Interval saturated(double c0) { return {c0, kInfinity, true, false}; }

void dedupe(std::vector<Box>& boxes) {
  std::vector<Box> kept;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    bool covered = false;
    for (std::size_t j = 0; j < boxes.size() && !covered; ++j) {
      if (i == j || !boxes[j].contains(boxes[i])) continue;
      // Equal boxes: keep the first occurrence.
      covered = !boxes[i].contains(boxes[j]) || j < i;
    }
    if (!covered) kept.push_back(boxes[i]);
  }
  boxes = std::move(kept);
}

bool same(const Interval& a, const Interval& b) {
  return a.lower == b.lower && a.upper == b.upper && a.closed_lower == b.closed_lower &&
         a.closed_upper == b.closed_upper;
}

// A free slice [0, c0) next to a saturated side [c0, inf) with all other
// sides equal joins into [0, inf). Adds every such join until none is new.
void join_at_c0(std::vector<Box>& boxes, double c0) {
  for (bool grew = true; grew;) {
    grew = false;
    const std::size_t n = boxes.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto& a = boxes[i].sides;
        const auto& b = boxes[j].sides;
        std::size_t diff = a.size(), count = 0;
        for (std::size_t d = 0; d < a.size(); ++d) {
          if (!same(a[d], b[d])) {
            diff = d;
            ++count;
          }
        }
        if (count != 1) continue;
        if (!(a[diff].lower == 0.0 && a[diff].upper == c0 && !a[diff].closed_upper)) continue;
        if (!same(b[diff], saturated(c0))) continue;
        Box joined = boxes[i];
        joined.sides[diff] = {0.0, kInfinity, true, false};
        const bool known = std::any_of(boxes.begin(), boxes.end(), [&](const Box& x) { return x.contains(joined); });
        if (!known) {
          boxes.push_back(std::move(joined));
          grew = true;
        }
      }
    }
  }
}

struct SliceSolver {
  const SubSurvival& s;
  double u, c0, tol;
  std::size_t lattice;

  bool holds(const Eigen::VectorXd& theta) const {
    return censored_residual(s, u, c0, theta).minCoeff() >= 0.0;
  }

  // Sub-boxes over free[k..] with earlier coordinates already placed in
  // `point`; each prefix interval is [0, point_j].
  void staircase(const std::vector<std::size_t>& free, std::size_t k, Eigen::VectorXd& point,
                 std::vector<Interval>& prefix, std::vector<std::vector<Interval>>& out) const {
    const auto idx = static_cast<Eigen::Index>(free[k]);
    point[idx] = 0.0;
    if (!holds(point)) return;
    if (k + 1 == free.size()) {
      const double sup = monotone_sup(
          [&](double x) {
            point[idx] = x;
            return holds(point);
          },
          0.0, c0, tol);
      point[idx] = 0.0;
      prefix.push_back(sup >= c0 ? Interval{0.0, c0, true, false} : closed(0.0, sup));
      out.push_back(prefix);
      prefix.pop_back();
      return;
    }
    for (std::size_t i = 0; i < lattice; ++i) {
      const double g = c0 * static_cast<double>(i) / static_cast<double>(lattice);
      point[idx] = g;
      Eigen::VectorXd probe = point;
      for (std::size_t j = k + 1; j < free.size(); ++j) probe[static_cast<Eigen::Index>(free[j])] = 0.0;
      if (!holds(probe)) break;
      prefix.push_back(closed(0.0, g));
      staircase(free, k + 1, point, prefix, out);
      prefix.pop_back();
    }
    point[idx] = 0.0;
  }
};

}  // namespace

BoxUnion outer_set(const SubSurvival& s, double u, double c0, const OuterSetOptions& options) {
  if (!(c0 > 0.0)) throw Error("c0 must be positive");
  const std::size_t L = s.num_treatments();
  if (L == 0) throw Error("outer set needs at least one treatment level");
  if (L > 20) throw Error("outer set enumeration is limited to 20 treatment levels");
  if (options.staircase_points < 1) throw Error("staircase_points must be >= 1");

  BoxUnion result;
  result.dimension = L;
  result.u = u;
  result.c0 = c0;
  const SliceSolver solver{s, u, c0, 1e-10 * c0, options.staircase_points};

  for (std::uint32_t mask = 1; mask < (1u << L); ++mask) {
    Eigen::VectorXd point = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L));
    std::vector<std::size_t> free;
    for (std::size_t l = 0; l < L; ++l) {
      if (mask & (1u << l)) point[static_cast<Eigen::Index>(l)] = c0;
      else free.push_back(l);
    }
    auto assemble = [&](const std::vector<Interval>& free_sides) {
      Box box;
      box.sides.resize(L);
      std::size_t f = 0;
      for (std::size_t l = 0; l < L; ++l) box.sides[l] = (mask & (1u << l)) ? saturated(c0) : free_sides[f++];
      result.boxes.push_back(std::move(box));
    };
    if (free.empty()) {
      if (solver.holds(point)) assemble({});
      continue;
    }
    std::vector<Interval> prefix;
    std::vector<std::vector<Interval>> slices;
    solver.staircase(free, 0, point, prefix, slices);
    for (const auto& sl : slices) assemble(sl);
  }
  join_at_c0(result.boxes, c0);
  dedupe(result.boxes);
  return result;
}

std::vector<BoxUnion> outer_set_grid(const SubSurvival& s, std::span<const double> u_grid, double c0,
                                     unsigned threads, const OuterSetOptions& options) {
  std::vector<BoxUnion> out(u_grid.size());
  parallel_for(u_grid.size(), threads, [&](std::size_t m) { out[m] = outer_set(s, u_grid[m], c0, options); });
  return out;
}

BoxUnion triangular_outer_set(const SubSurvival& s, double u, double c0) {
  if (!(c0 > 0.0)) throw Error("c0 must be positive");
  if (s.num_treatments() != 2 || s.num_instruments() != 2)
    throw TriangularPrecondition("triangular design needs two treatment and two instrument levels");
  if (s.value(0.0, 1, 0) != 0.0)
    throw TriangularPrecondition("treatment level 1 is observed under instrument level 0");

  BoxUnion result;
  result.dimension = 2;
  result.u = u;
  result.c0 = c0;
  const double target = std::exp(-u);
  const double tol = 1e-10 * c0;
  auto first = [&](double x) { return s.value(x, 0, 0); };
  auto second = [&](double x) { return s.value(std::min(x, c0), 1, 1); };

  if (first(0.0) < target) return result;

  if (first(c0) < target) {
    // The first equation pins theta_1 below c0.
    const double t1 = monotone_sup([&](double x) { return first(x) >= target; }, 0.0, c0, tol);
    // Second equation, written as the censored residual of instrument 1.
    auto holds = [&](double x) { return s.value(t1, 0, 1) + second(x) - target >= 0.0; };
    if (holds(c0)) {
      result.boxes.push_back({{closed(t1, t1), saturated(c0)}});
    } else if (holds(0.0)) {
      const double t2 = monotone_sup(holds, 0.0, c0, tol);
      result.boxes.push_back({{closed(t1, t1), closed(t2, t2)}});
    }
    return result;
  }

  auto holds = [&](double x) { return s.value(c0, 0, 1) + second(x) - target >= 0.0; };
  if (!holds(0.0)) return result;
  if (holds(c0)) {
    result.boxes.push_back({{saturated(c0), Interval{0.0, kInfinity, true, false}}});
  } else {
    result.boxes.push_back({{saturated(c0), closed(0.0, monotone_sup(holds, 0.0, c0, tol))}});
  }
  return result;
}

const char* to_string(OuterShape shape) noexcept {
  switch (shape) {
    case OuterShape::empty: return "empty";
    case OuterShape::quadrant: return "quadrant";
    case OuterShape::two_strips: return "two-strips";
    case OuterShape::right_strip: return "right-strip";
    case OuterShape::upper_strip: return "upper-strip";
  }
  return "unknown";
}

OuterShape classify_shape(const BoxUnion& set) {
  if (set.dimension != 2) throw Error("shape classification is defined for two treatment levels");
  const double c = set.c0;
  const bool right = set.contains(std::vector<double>{c, 0.0});
  const bool up = set.contains(std::vector<double>{0.0, c});
  const bool corner = set.contains(std::vector<double>{c, c});
  if (corner) return OuterShape::quadrant;
  if (right && up) return OuterShape::two_strips;
  if (right) return OuterShape::right_strip;
  if (up) return OuterShape::upper_strip;
  return OuterShape::empty;
}

void BreakpointOptions::validate() const {
  if (!(kappa > 1.0)) throw Error("kappa must exceed 1");
  if (!(baseline_fraction > 0.0 && baseline_fraction < 1.0)) throw Error("baseline fraction must lie in (0, 1)");
  if (!(boundary_fraction >= 0.0 && boundary_fraction < baseline_fraction))
    throw Error("boundary fraction must lie in [0, baseline fraction)");
  if (!(min_baseline >= 0.0)) throw Error("baseline floor must be nonnegative");
}

BreakpointReport detect_breakpoint(std::span<const double> u_grid, std::span<const double> residual_norm,
                                   const BreakpointOptions& options) {
  options.validate();
  if (u_grid.size() != residual_norm.size()) throw Error("grid and residual norms differ in length");
  if (u_grid.empty()) throw Error("breakpoint detection needs a nonempty grid");
  BreakpointReport report;
  report.u_grid.assign(u_grid.begin(), u_grid.end());
  report.residual_norm.assign(residual_norm.begin(), residual_norm.end());
  report.options = options;

  const std::size_t M = u_grid.size();
  const auto lo = static_cast<std::size_t>(std::ceil(options.boundary_fraction * static_cast<double>(M)));
  auto hi = static_cast<std::size_t>(std::floor(options.baseline_fraction * static_cast<double>(M)));
  hi = std::min(M, std::max(hi, lo + 1));
  std::vector<double> base(residual_norm.begin() + static_cast<std::ptrdiff_t>(std::min(lo, M - 1)),
                           residual_norm.begin() + static_cast<std::ptrdiff_t>(hi));
  report.baseline = std::max(median(base), options.min_baseline);
  report.threshold = options.kappa * report.baseline;

  std::size_t i = M;
  while (i > 0 && residual_norm[i - 1] >= report.threshold) --i;
  if (i < M) {
    report.index = i;
    report.u0_hat = u_grid[i];
  }
  return report;
}

}  // namespace ivdur
