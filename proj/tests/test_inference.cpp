#include <doctest.h>

#include <cmath>
#include <random>

#include "ivdur/errors.hpp"
#include "ivdur/inference.hpp"
#include "ivdur/sim.hpp"

using namespace ivdur;

namespace {

// phi_0 = a0 u, phi_1 = a1 u on the given grid.
PhiEstimate linear_estimate(const std::vector<double>& grid, double a0 = 10.0, double a1 = 5.0) {
  PhiEstimate est;
  est.u_grid = grid;
  est.theta.resize(static_cast<Eigen::Index>(grid.size()), 2);
  for (std::size_t m = 0; m < grid.size(); ++m) {
    est.theta(static_cast<Eigen::Index>(m), 0) = a0 * grid[m];
    est.theta(static_cast<Eigen::Index>(m), 1) = a1 * grid[m];
  }
  est.residual_norm.assign(grid.size(), 0.0);
  est.status.assign(grid.size(), SolverStatus::converged);
  return est;
}

PipelineConfig default_pipeline(std::vector<double> grid) {
  PipelineConfig p;
  p.tbar = 10.0;
  p.u_grid = std::move(grid);
  return p;
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("qte") {
  const auto est = linear_estimate(make_grid(0.01, 0.01, 1.0));
  CHECK(qte(est, 0, 0, 0.5).value == 0.0);
  for (double u : {0.1, 0.37, 0.9}) {
    CHECK(qte(est, 0, 1, u).value == -qte(est, 1, 0, u).value);
    CHECK(qte(est, 0, 1, u).value == doctest::Approx(-5.0 * u));
    CHECK_FALSE(qte(est, 0, 1, u).off_grid);
  }
  const auto off = qte(est, 0, 1, 0.3049);
  CHECK(off.off_grid);
  CHECK(est.u_grid[off.index] == 0.3);
}

TEST_CASE("ate") {
  const auto full = linear_estimate(make_grid(0.001, 0.001, 25.0));
  CHECK(ate(full, 0, 1).value == doctest::Approx(-5.0).epsilon(1e-5));
  CHECK(ate(full, 1, 1).value == 0.0);

  const auto cut = linear_estimate(make_grid(0.01, 0.01, 0.9));
  const auto r = ate(cut, 0, 1);
  // int_0^0.9 -5u e^{-u} du = -5 (1 - 1.9 e^{-0.9})
  CHECK(r.value == doctest::Approx(-5.0 * (1.0 - 1.9 * std::exp(-0.9))).epsilon(1e-4));
  CHECK(r.tail_mass == doctest::Approx(std::exp(-0.9)).epsilon(1e-15));
  const auto held = ate(cut, 0, 1, TailPolicy::hold_last);
  CHECK(held.value == doctest::Approx(r.value - 4.5 * std::exp(-0.9)));

  CHECK_THROWS_AS(ate(linear_estimate(make_grid(0.1, 0.1, 0.6)), 0, 1), TailDominates);

  // Linear in phi.
  const auto scaled = linear_estimate(make_grid(0.01, 0.01, 0.9), 30.0, 15.0);
  CHECK(ate(scaled, 0, 1).value == doctest::Approx(3.0 * r.value).epsilon(1e-12));
}

TEST_CASE("pava") {
  const std::vector<double> v{1.0, 3.0, 2.0};
  CHECK(pava(v) == std::vector<double>{1.0, 2.5, 2.5});
  const std::vector<double> mono{0.0, 1.0, 1.0, 4.0};
  CHECK(pava(mono) == mono);

  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> x(1 + gen() % 40);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i) + nd(gen);
    const auto once = pava(x);
    for (std::size_t i = 1; i < once.size(); ++i) REQUIRE(once[i] >= once[i - 1]);
    CHECK(pava(once) == once);
    double a = 0.0, b = 0.0;
    for (double t : x) a += t;
    for (double t : once) b += t;
    CHECK(a == doctest::Approx(b));
  }
}

TEST_CASE("counterfactual survival") {
  const auto est = linear_estimate(make_grid(0.01, 0.01, 1.2));
  CHECK(counterfactual_survival(est, 0, 0.0).value == 1.0);
  CHECK(counterfactual_survival(est, 0, 5.0).value == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  double prev = 1.0;
  for (double t = 0.0; t <= 12.0; t += 0.013) {
    const double s = counterfactual_survival(est, 1, t).value;
    CHECK(s <= prev);
    prev = s;
  }
  const auto beyond = counterfactual_survival(est, 0, 50.0);
  CHECK(beyond.upper_bound);
  CHECK(beyond.value == doctest::Approx(std::exp(-1.2)));

  // survival(phi(u)) = e^{-u} at knots, also for a non-monotone estimate.
  auto wobbly = est;
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  for (Eigen::Index m = 0; m < wobbly.theta.rows(); ++m) wobbly.theta(m, 0) += jitter(gen);
  const auto mono = monotonize(wobbly, 0);
  for (std::size_t m = 0; m < mono.size(); ++m) {
    const bool strict = (m == 0 || mono[m] > mono[m - 1]) && (m + 1 == mono.size() || mono[m + 1] > mono[m]);
    if (!strict || mono[m] <= 0.0) continue;
    CHECK(std::abs(counterfactual_survival(wobbly, 0, mono[m]).value - std::exp(-est.u_grid[m])) <= 1e-12);
  }
}

TEST_CASE("counterfactual hazard") {
  const auto est = linear_estimate(make_grid(0.01, 0.01, 1.2));
  for (double t : {0.5, 3.3, 7.0}) CHECK(counterfactual_hazard(est, 0, t).value == doctest::Approx(0.1));
  for (double t : {0.5, 3.3}) CHECK(counterfactual_hazard(est, 1, t).value == doctest::Approx(0.2));
  CHECK(counterfactual_hazard(est, 0, 100.0).out_of_range);

  PhiEstimate flat = linear_estimate({0.1, 0.2, 0.3, 0.4});
  flat.theta(1, 0) = 2.0;
  flat.theta(2, 0) = 2.0;  // plateau at t = 2
  const auto h = counterfactual_hazard(flat, 0, 2.0);
  CHECK(h.infinite);
  // piecewise-linear phi gives piecewise-constant hazard
  CHECK(counterfactual_hazard(flat, 0, 0.5).value == doctest::Approx(0.1 / 1.0));
  CHECK(counterfactual_hazard(flat, 0, 1.5).value == doctest::Approx(0.1 / 1.0));
  CHECK(counterfactual_hazard(flat, 0, 3.0).value == doctest::Approx(0.1 / 2.0));
}

TEST_CASE("bootstrap on identical rows has zero width") {
  std::vector<ObservationRecord> rows(50, {2.0, 0, 0, 1});
  const Dataset d(rows, {"a"}, {"x"});
  auto cfg = default_pipeline({0.2, 0.5});
  cfg.tbar = 5.0;
  cfg.smoother.bandwidth = 1.0;
  const std::vector<Functional> fs{Functional::phi(0)};
  const auto res = bootstrap(d, cfg, fs, 20, 7);
  for (const auto& e : res.entries) {
    CHECK(e.lower == e.point);
    CHECK(e.upper == e.point);
  }
  CHECK(res.redraws == 0);
  CHECK(res.bands[0].half_width == 0.0);
}

TEST_CASE("bootstrap determinism and brackets") {
  DgpConfig dgp;
  dgp.n = 10000;
  dgp.seed = 31;
  const auto data = dgp_generate(dgp).data;
  const auto cfg = default_pipeline({0.1, 0.3, 0.5, 0.7, 0.9});
  const std::vector<Functional> fs{Functional::phi(0), Functional::phi(1), Functional::qte(0, 1),
                                   Functional::survival(0, 5.0), Functional::hazard(1, 2.0)};
  const auto a = bootstrap(data, cfg, fs, 40, 99, 1);
  const auto b = bootstrap(data, cfg, fs, 40, 99, 3);
  REQUIRE(a.entries.size() == b.entries.size());
  std::size_t bracketed = 0;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].lower == b.entries[i].lower);
    CHECK(a.entries[i].upper == b.entries[i].upper);
    CHECK(a.entries[i].point == b.entries[i].point);
    const auto& e = a.entries[i];
    const bool in = e.lower <= e.point && e.point <= e.upper;
    CHECK(e.asymmetric == !in);
    bracketed += in;
  }
  CHECK(static_cast<double>(bracketed) >= 0.9 * static_cast<double>(a.entries.size()));
  REQUIRE(a.bands.size() == 3);
  CHECK(a.bands[0].functional == "phi(z=0)");
  CHECK(a.bands[0].half_width > 0.0);
}

TEST_CASE("bootstrap redraws resamples that lose a cell") {
  // A single (z=1, w=0) row: most resamples of size 12 keep it, some lose it.
  std::vector<ObservationRecord> rows;
  for (int i = 0; i < 11; ++i) rows.push_back({1.0 + 0.3 * i, 0, static_cast<std::size_t>(i % 2), 1});
  rows.push_back({2.0, 1, 0, 1});
  const Dataset d(rows, {"0", "1"}, {"0", "1"});
  auto cfg = default_pipeline({0.3});
  cfg.tbar = 5.0;
  cfg.smoother.bandwidth = 0.5;
  const std::vector<Functional> fs{Functional::phi(0)};
  const auto res = bootstrap(d, cfg, fs, 30, 4);
  CHECK(res.redraws > 0);
  CHECK_THROWS_AS(bootstrap(d, cfg, fs, 1, 4), Error);
}

TEST_CASE("functional validation and labels") {
  CHECK_THROWS_AS(Functional::qte(0, 3).validate(2), Error);
  CHECK(Functional::qte(0, 1).label() == "qte(z0=0,z1=1)");
  CHECK(Functional::phi(1).on_grid());
  CHECK_FALSE(Functional::ate(0, 1).on_grid());
}

}  // TEST_SUITE
