#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ivdur/errors.hpp"
#include "ivdur/sim.hpp"
#include "ivdur/survival.hpp"
#include "oracles.hpp"

using namespace ivdur;

namespace {

Dataset one_cell(std::vector<double> y, std::vector<int> delta) {
  std::vector<ObservationRecord> rows;
  for (std::size_t i = 0; i < y.size(); ++i) rows.push_back({y[i], 0, 0, delta[i]});
  return Dataset(rows, {"a"}, {"x"});
}

}  // namespace

TEST_SUITE("survival") {

TEST_CASE("km on small hand-computed cells") {
  const auto km = km_estimate(one_cell({1, 2, 3}, {1, 1, 1}), 0, 0);
  CHECK(km(2.5) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(km(0.0) == 1.0);

  const auto censored = km_estimate(one_cell({1, 2, 3, 4}, {1, 0, 1, 1}), 0, 0);
  CHECK(censored(3.0) == doctest::Approx(0.375).epsilon(1e-15));
  CHECK(censored(0.0) == 1.0);
  // Held at the last level beyond the largest time.
  CHECK(censored(100.0) == 0.0);
}

TEST_CASE("km ties are grouped") {
  const auto km = km_estimate(one_cell({2, 2, 2, 5}, {1, 1, 0, 1}), 0, 0);
  REQUIRE(km.jump_times().size() == 2);
  CHECK(km(2.0) == doctest::Approx(0.5));  // 1 - 2/4
  CHECK(km(5.0) == 0.0);
}

TEST_CASE("km equals the empirical survival without censoring") {
  std::mt19937_64 gen(11);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 1 + gen() % 200;
    auto rows = oracle::random_cell(gen, n, 0.5, 0.0, rep % 3 + 1);
    std::vector<double> y;
    for (auto& r : rows) y.push_back(r.y);
    const auto km = km_estimate(Dataset(rows, {"a"}, {"x"}), 0, 0);
    std::vector<double> probes = y;
    for (double v : y) probes.push_back(v + 0.0005);
    probes.push_back(0.0);
    for (double t : probes) REQUIRE(km(t) == oracle::empirical_survival(y, t));
  }
}

TEST_CASE("km is a nonincreasing step function in [0, 1]") {
  std::mt19937_64 gen(5);
  for (int rep = 0; rep < 20; ++rep) {
    auto rows = oracle::random_cell(gen, 150, 1.0, 0.7, 2);
    const auto km = km_estimate(Dataset(rows, {"a"}, {"x"}), 0, 0);
    const auto& v = km.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(v[i] >= 0.0);
      CHECK(v[i] <= 1.0);
      if (i > 0) CHECK(v[i] <= v[i - 1]);
      if (i > 0) CHECK(km.jump_times()[i] > km.jump_times()[i - 1]);
      // right-continuous: the level is taken at the jump itself
      CHECK(km(km.jump_times()[i]) == v[i]);
    }
  }
}

TEST_CASE("empty cell is reported") {
  std::vector<ObservationRecord> rows{{1.0, 0, 0, 1}, {2.0, 0, 1, 1}};
  Dataset d(rows, {"a", "b"}, {"x", "y"});
  CHECK_THROWS_AS(km_estimate(d, 1, 0), EmptyCell);
}

TEST_CASE("bandwidth rule of thumb") {
  std::vector<double> equal(10, 3.0);
  CHECK_THROWS_AS(bandwidth_rule_of_thumb(equal), DegenerateSample);

  // Exp(1) sample with fixed seed against the formula evaluated here.
  std::mt19937_64 gen(100);
  std::exponential_distribution<double> e(1.0);
  std::vector<double> x(100);
  for (auto& v : x) v = e(gen);
  std::vector<double> s = x;
  std::sort(s.begin(), s.end());
  double mean = 0.0;
  for (double v : s) mean += v / 100.0;
  double ss = 0.0;
  for (double v : s) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / 99.0);
  auto q = [&](double p) {
    const double h = 99.0 * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    return s[lo] + (h - std::floor(h)) * (s[std::min<std::size_t>(lo + 1, 99)] - s[lo]);
  };
  const double iqr = q(0.75) - q(0.25);
  const double expected = 1.06 * std::min(sd, iqr / 1.349) * std::pow(100.0, -0.2);
  CHECK(bandwidth_rule_of_thumb(x) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("bandwidth shrinks at the n^-1/5 rate") {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd;
  std::vector<double> small(1000), large(32000);
  for (auto& v : small) v = nd(gen);
  for (auto& v : large) v = nd(gen);
  const double ratio = bandwidth_rule_of_thumb(small) / bandwidth_rule_of_thumb(large);
  CHECK(ratio == doctest::Approx(std::pow(32.0, 0.2)).epsilon(0.05));
}

TEST_CASE("kernel smoother matches quadrature of the convolution") {
  std::mt19937_64 gen(21);
  for (int rep = 0; rep < 10; ++rep) {
    auto rows = oracle::random_cell(gen, 20 + gen() % 180, 0.3, 0.1, 2);
    const auto km = km_estimate(Dataset(rows, {"a"}, {"x"}), 0, 0);
    const double h = 0.2 + 0.3 * rep;
    const auto sm = kernel_smooth(km, h);
    const double top = km.jump_times().back() + 2 * h;
    double worst = 0.0;
    for (int i = 0; i <= 1000; ++i) {
      const double t = top * i / 1000.0;
      worst = std::max(worst, std::abs(sm.value(t) - oracle::kernel_convolution(km, t, h)));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("kernel smoother derivative matches finite differences") {
  std::mt19937_64 gen(22);
  for (int rep = 0; rep < 10; ++rep) {
    auto rows = oracle::random_cell(gen, 200, 0.3, 0.1, 3);
    const auto km = km_estimate(Dataset(rows, {"a"}, {"x"}), 0, 0);
    const double h = 1.0 + 0.2 * rep;
    const auto sm = kernel_smooth(km, h);
    const double top = km.jump_times().back();
    for (int i = 1; i <= 100; ++i) {
      const double t = top * i / 101.0;
      const double fd = (sm.value(t + 1e-5) - sm.value(t - 1e-5)) / 2e-5;
      REQUIRE(std::abs(fd - sm.derivative(t)) < 1e-4);
    }
  }
}

TEST_CASE("kernel smoother edge cases") {
  const auto km = km_estimate(one_cell({10.0}, {0}), 0, 0);  // flat at one
  const auto sm = kernel_smooth(km, 0.5);
  for (double t : {0.5, 1.0, 5.0, 9.0}) CHECK(sm.value(t) == 1.0);
  CHECK_THROWS_AS(kernel_smooth(km, 0.0), InvalidBandwidth);
  CHECK_THROWS_AS(kernel_smooth(km, -1.0), InvalidBandwidth);
}

TEST_CASE("smoothed survival is nonincreasing with nonpositive slope") {
  std::mt19937_64 gen(23);
  for (auto method : {SmootherMethod::kernel, SmootherMethod::local_polynomial}) {
    auto rows = oracle::random_cell(gen, 300, 0.2, 0.05, 2);
    const auto km = km_estimate(Dataset(rows, {"a"}, {"x"}), 0, 0);
    const double horizon = km.jump_times().back();
    const auto sm = method == SmootherMethod::kernel ? kernel_smooth(km, 1.0) : localpoly_smooth(km, 1.0, horizon);
    double prev = 2.0;
    for (int i = 0; i <= 2000; ++i) {
      const double t = horizon * i / 2000.0;
      const auto [v, d] = sm.evaluate(t);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      if (method == SmootherMethod::kernel) {
        CHECK(v <= prev + 1e-10);
        CHECK(d <= 1e-10);
      }
      prev = v;
    }
  }
}

TEST_CASE("local polynomial reproduces a line and is unbiased at zero") {
  // Dense jumps approximating S(t) = 1 - t/10.
  std::vector<double> y;
  std::vector<int> d;
  for (int i = 1; i <= 1000; ++i) {
    y.push_back(i * 0.01);
    d.push_back(1);
  }
  const auto km = km_estimate(one_cell(y, d), 0, 0);
  const double h = 0.5;
  const auto lp = localpoly_smooth(km, h, 10.0);
  const auto ks = kernel_smooth(km, h);
  double worst = 0.0;
  for (double t = h; t <= 10.0 - h; t += 0.01) worst = std::max(worst, std::abs(lp.value(t) - km(t)));
  CHECK(worst < 1e-2);
  CHECK(std::abs(lp.value(0.0) - km(0.0)) < std::abs(ks.value(0.0) - km(0.0)));
}

TEST_CASE("local polynomial flags sparse windows") {
  const auto km = km_estimate(one_cell({1.0, 5.0, 9.0}, {1, 1, 1}), 0, 0);
  CHECK(localpoly_smooth(km, 0.5, 10.0).boundary_warning());
}

TEST_CASE("fitted model: probabilities, empty cells, determinism") {
  DgpConfig cfg;
  cfg.n = 10000;
  cfg.seed = 9;
  const auto sample = dgp_generate(cfg);
  const auto model = fit_survival_model(sample.data, 10.0);
  for (std::size_t w = 0; w < 2; ++w) {
    double sum = 0.0;
    for (std::size_t z = 0; z < 2; ++z) sum += model.cell(z, w).p_hat;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  CHECK(model.cell(1, 1).p_hat == doctest::Approx(0.76).epsilon(0.02 / 0.76));
  for (double t : {0.0, 1.0, 7.5}) {
    CHECK(model.value(t, 1, 0) == 0.0);
    CHECK(model.derivative(t, 1, 0) == 0.0);
  }
  const auto again = fit_survival_model(sample.data, 10.0);
  for (double t = 0.0; t <= 10.0; t += 0.37)
    for (std::size_t z = 0; z < 2; ++z)
      for (std::size_t w = 0; w < 2; ++w) REQUIRE(model.value(t, z, w) == again.value(t, z, w));
}

TEST_CASE("fitted model factorizes under independence") {
  // Z independent of W, no censoring.
  std::mt19937_64 gen(3);
  std::exponential_distribution<double> e(0.5);
  std::vector<ObservationRecord> rows;
  for (int i = 0; i < 20000; ++i) rows.push_back({e(gen), static_cast<std::size_t>(i % 4 == 0), static_cast<std::size_t>(i % 2), 1});
  const Dataset d(rows, {"0", "1"}, {"0", "1"});
  const auto model = fit_survival_model(d, 5.0);
  for (double t : {0.5, 1.0, 2.0, 4.0})
    for (std::size_t z = 0; z < 2; ++z)
      for (std::size_t w = 0; w < 2; ++w)
        CHECK(model.value(t, z, w) == doctest::Approx(model.cell(z, w).p_hat * std::exp(-0.5 * t)).epsilon(0.05));
}

TEST_CASE("fit errors") {
  std::vector<ObservationRecord> rows{{1.0, 0, 0, 1}, {2.0, 0, 0, 1}};
  CHECK_THROWS_AS(fit_survival_model(Dataset(rows, {"a"}, {"x", "y"}), 5.0), EmptyInstrumentLevel);
  std::vector<ObservationRecord> same{{1.0, 0, 0, 1}, {1.0, 0, 0, 1}};
  CHECK_THROWS_AS(fit_survival_model(Dataset(same, {"a"}, {"x"}), 5.0), DegenerateSample);
}

TEST_CASE("choose tbar") {
  std::vector<ObservationRecord> rows;
  for (int i = 1; i <= 100; ++i) rows.push_back({static_cast<double>(i), 0, 0, 1});
  CHECK(choose_tbar(Dataset(rows, {"a"}, {"x"})) == 95.0);
  CHECK(choose_tbar(Dataset(rows, {"a"}, {"x"}), 0.95, 10.0) == 10.0);

  std::vector<ObservationRecord> two;
  for (int i = 1; i <= 10; ++i) {
    two.push_back({0.7 * i, 0, 0, 1});
    two.push_back({0.9 * i, 1, 0, 1});
  }
  // inverse-ECDF cell quantiles at alpha = 0.9: 0.7 * 9 and 0.9 * 9
  CHECK(choose_tbar(Dataset(two, {"a", "b"}, {"x"}), 0.9) == doctest::Approx(6.3).epsilon(1e-14));
}

TEST_CASE("naive Nelson-Aalen inversion") {
  // Exogenous design: T | Z=0 ~ Exp(1/10), no censoring.
  std::mt19937_64 gen(17);
  std::exponential_distribution<double> e(0.1);
  std::vector<ObservationRecord> rows;
  for (int i = 0; i < 50000; ++i) rows.push_back({e(gen), 0, static_cast<std::size_t>(i % 2), 1});
  const Dataset d(rows, {"0"}, {"0", "1"});
  const std::vector<double> grid{0.0, 0.1, 0.5, 0.9};
  const auto naive = nelson_aalen_invert(d, 0, grid);
  CHECK(naive[0] == 0.0);
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(std::abs(naive[i] - 10.0 * grid[i]) < 0.3);
  const std::vector<double> far{50.0};
  CHECK(std::isinf(nelson_aalen_invert(d, 0, far)[0]));

  // Endogenous design: visibly biased for z = 0.
  DgpConfig cfg;
  cfg.n = 20000;
  const auto sample = dgp_generate(cfg);
  const std::vector<double> mid{0.5};
  CHECK(std::abs(nelson_aalen_invert(sample.data, 0, mid)[0] - 5.0) > 0.5);
}

}  // TEST_SUITE
