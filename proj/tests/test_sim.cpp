#include <doctest.h>

#include <cmath>

#include "ivdur/estimator.hpp"
#include "ivdur/random.hpp"
#include "ivdur/errors.hpp"
#include "ivdur/sim.hpp"
#include "oracles.hpp"

using namespace ivdur;

TEST_SUITE("sim") {

TEST_CASE("generated rows follow the design") {
  DgpConfig cfg;
  cfg.n = 20000;
  cfg.seed = 4;
  const auto s = dgp_generate(cfg);
  REQUIRE(s.latent.size() == cfg.n);
  const auto& rows = s.data.records();
  for (std::size_t i = 0; i < cfg.n; ++i) {
    if (rows[i].w == 0) REQUIRE(rows[i].z == 0);
    REQUIRE(s.latent[i].t == cfg.true_phi(rows[i].z, s.latent[i].u));
    REQUIRE(s.latent[i].c >= 10.0);
    REQUIRE(rows[i].y == std::min(s.latent[i].t, s.latent[i].c));
    REQUIRE(rows[i].delta == (s.latent[i].t <= s.latent[i].c ? 1 : 0));
  }
  const auto again = dgp_generate(cfg);
  for (std::size_t i = 0; i < cfg.n; ++i) REQUIRE(again.data.records()[i].y == rows[i].y);
}

TEST_CASE("row draws do not depend on the sample size") {
  DgpConfig a;
  a.n = 100;
  DgpConfig b = a;
  b.n = 1000;
  const auto sa = dgp_generate(a), sb = dgp_generate(b);
  for (std::size_t i = 0; i < 100; ++i) CHECK(sa.latent[i].u == sb.latent[i].u);
}

TEST_CASE("treatment probability and censoring fraction at n = 10^6") {
  DgpConfig cfg;
  cfg.n = 1000000;
  cfg.seed = 2024;
  const auto s = dgp_generate(cfg);
  std::size_t w1 = 0, z1 = 0;
  for (const auto& r : s.data.records()) {
    w1 += r.w == 1;
    z1 += r.w == 1 && r.z == 1;
  }
  const double p = static_cast<double>(z1) / static_cast<double>(w1);
  CHECK(oracle::dgp_p_treated() == doctest::Approx(0.762298).epsilon(1e-6));
  CHECK(std::abs(p - oracle::dgp_p_treated()) < 0.003);
  CHECK(std::abs(s.data.censored_fraction() - oracle::dgp_censored_fraction()) < 0.003);
}

TEST_CASE("counterexample fixture") {
  const auto fx = counterexample_fixture();
  // S(0, z | w) sums to one over z.
  for (std::size_t w = 0; w < 2; ++w) CHECK(fx.value(0.0, 0, w) + fx.value(0.0, 1, w) == doctest::Approx(1.0));
  // U is unit exponential given either instrument value.
  for (double u : {0.0, 0.5, 2.0})
    for (std::size_t w = 0; w < 2; ++w)
      CHECK(fx.value(fx.true_phi(0, u), 0, w) + fx.value(fx.true_phi(1, u), 1, w) ==
            doctest::Approx(std::exp(-u)).epsilon(1e-15));
  for (double u : {0.1, 0.5, 1.0, 1.3}) {
    Eigen::VectorXd th(2);
    th << u, u / 2.0;
    CHECK(residual(ResidualContext(fx, u), th).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK(fx.c0() == 1.0);
}

TEST_CASE("analytic simulation fixture") {
  const auto fx = dgp_analytic_fixture();
  CHECK(std::abs(fx.value(0.0, 1, 1) - 0.76) < 0.003);
  CHECK(fx.value(0.0, 1, 1) == doctest::Approx(oracle::dgp_p_treated()).epsilon(1e-9));
  for (std::size_t w = 0; w < 2; ++w) CHECK(std::abs(fx.value(0.0, 0, w) + fx.value(0.0, 1, w) - 1.0) <= 1e-10);
  for (double t : {0.0, 1.0, 4.0, 9.0}) CHECK(fx.value(t, 1, 0) == 0.0);

  // derivative against finite differences
  for (double t : {0.5, 3.0, 8.0})
    for (std::size_t z = 0; z < 2; ++z) {
      const double fd = (fx.value(t + 1e-5, z, 1) - fx.value(t - 1e-5, z, 1)) / 2e-5;
      CHECK(fx.derivative(t, z, 1) == doctest::Approx(fd).epsilon(1e-6));
    }

  // Monte Carlo: 10^7 latent draws, 20 checkpoints, 3 standard errors.
  const std::size_t n = 10000000;
  const std::vector<double> ts{0.5, 1.5, 3.0, 5.0, 7.0, 9.0, 12.0, 16.0, 20.0, 30.0};
  std::vector<std::size_t> hits0(ts.size(), 0), hits1(ts.size(), 0);
  std::size_t w1 = 0;
  DgpConfig cfg;
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(77, i);
    rng.uniform();  // W draw: condition on W = 1 below
    const double u = rng.exponential();
    const double eps = rng.normal();
    ++w1;
    const bool z = cfg.intercept + eps + cfg.coef_w + cfg.coef_u * u >= 0.0;
    const double t = cfg.true_phi(z ? 1 : 0, u);
    for (std::size_t k = 0; k < ts.size(); ++k) {
      if (t < ts[k]) break;
      ++(z ? hits1 : hits0)[k];
    }
  }
  for (std::size_t k = 0; k < ts.size(); ++k) {
    for (std::size_t z = 0; z < 2; ++z) {
      const double p = static_cast<double>((z ? hits1 : hits0)[k]) / static_cast<double>(w1);
      const double se = std::sqrt(std::max(p * (1.0 - p), 1e-12) / static_cast<double>(w1));
      CHECK(std::abs(fx.value(ts[k], z, 1) - p) <= 3.0 * se);
    }
  }
}

TEST_CASE("exponential and triangular fixtures") {
  const auto fx = triangular_fixture();
  CHECK(fx.value(0.0, 1, 0) == 0.0);
  CHECK(fx.value(0.0, 0, 1) + fx.value(0.0, 1, 1) == doctest::Approx(1.0));
  CHECK(fx.true_phi(0, 0.5) == 5.0);
  CHECK_THROWS_AS(exponential_fixture({{1.0}}, {{1.0}, {2.0}}, 1.0), Error);
}

TEST_CASE("gauss-laguerre rule") {
  const auto [x, w] = gauss_laguerre(64);
  double m0 = 0.0, m3 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    m0 += w[i];
    m3 += w[i] * x[i] * x[i] * x[i];
  }
  CHECK(m0 == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(m3 == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("replication study: truth, determinism, threads") {
  StudyConfig sc;
  sc.dgp.n = 2000;
  sc.dgp.seed = 8;
  sc.replications = 4;
  sc.u_grid = make_grid(0.05, 0.05, 1.2);
  sc.coverage_u = {0.3, 0.6};
  sc.bootstrap_B = 10;
  const auto a = run_replication_study(sc);
  sc.threads = 3;
  const auto b = run_replication_study(sc);
  for (std::size_t m = 0; m < a.u_grid.size(); ++m) {
    CHECK(a.truth_phi0[m] == doctest::Approx(10.0 * a.u_grid[m]).epsilon(1e-15));
    CHECK(a.truth_phi1[m] == doctest::Approx(5.0 * a.u_grid[m]).epsilon(1e-15));
    CHECK(a.truth_qte[m] == doctest::Approx(-5.0 * a.u_grid[m]).epsilon(1e-15));
  }
  CHECK(a.mean_phi0 == b.mean_phi0);
  CHECK(a.mean_phi1 == b.mean_phi1);
  CHECK(a.coverage == b.coverage);
  CHECK(a.breakpoints == b.breakpoints);
  CHECK(a.mae_phi0 == b.mae_phi0);
  for (const auto& c : a.coverage)
    for (double v : c) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  CHECK(a.mae_phi0 < 1.0);
}

}  // TEST_SUITE
