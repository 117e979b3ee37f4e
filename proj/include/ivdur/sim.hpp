#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ivdur/dataset.hpp"
#include "ivdur/estimator.hpp"
#include "ivdur/partial_id.hpp"
#include "ivdur/survival.hpp"

namespace ivdur {

// Binary instrument, binary treatment, unit-exponential rank U, selection
//   Z = 1{intercept + eps + coef_w W + coef_u U >= 0} 1{W = 1},
// T = U / lambda_Z and censoring C = max(censor_scale E, censor_floor).
struct DgpConfig {
  std::size_t n = 10000;
  std::uint64_t seed = 1;
  double bernoulli_p_w = 0.7;
  double intercept = -0.7;
  double coef_w = 1.0;
  double coef_u = 0.5;
  double lambda0 = 0.1;
  double lambda1 = 0.2;
  double censor_scale = 15.0;
  double censor_floor = 10.0;

  void validate() const;
  double lambda(std::size_t z) const { return z == 0 ? lambda0 : lambda1; }
  // phi_z(u) = u / lambda_z
  double true_phi(std::size_t z, double u) const { return u / lambda(z); }
};

// Per-row latent draws. Kept apart from the Dataset handed to estimators.
struct LatentRecord {
  double u = 0.0;
  double eps = 0.0;
  double t = 0.0;
  double c = 0.0;
};

struct SimulatedSample {
  Dataset data;
  std::vector<LatentRecord> latent;
};

// Row i draws from its own substream (seed, i), in the order W, U, eps, E.
SimulatedSample dgp_generate(const DgpConfig& config);

// Sub-survival surface given in closed form.
class AnalyticFixture final : public SubSurvival {
 public:
  using Curve = std::function<double(double t, std::size_t z, std::size_t w)>;
  using Phi = std::function<double(std::size_t z, double u)>;

  AnalyticFixture(std::size_t L, std::size_t K, Curve value, Curve derivative, double horizon,
                  Phi true_phi = {}, std::optional<double> c0 = std::nullopt)
      : L_(L), K_(K), value_(std::move(value)), derivative_(std::move(derivative)), horizon_(horizon),
        true_phi_(std::move(true_phi)), c0_(c0) {}

  std::size_t num_treatments() const override { return L_; }
  std::size_t num_instruments() const override { return K_; }
  double value(double t, std::size_t z, std::size_t w) const override { return value_(t, z, w); }
  double derivative(double t, std::size_t z, std::size_t w) const override { return derivative_(t, z, w); }
  double horizon() const override { return horizon_; }

  bool has_true_phi() const noexcept { return static_cast<bool>(true_phi_); }
  double true_phi(std::size_t z, double u) const { return true_phi_(z, u); }
  std::optional<double> c0() const noexcept { return c0_; }

 private:
  std::size_t L_, K_;
  Curve value_, derivative_;
  double horizon_;
  Phi true_phi_;
  std::optional<double> c0_;
};

// Binary design with S(t, z | w) = p[z][w] exp(-rate_z t), p = {{1/2, 1/8},
// {1/2, 7/8}}, rates 1 and 2, so phi_0(u) = u and phi_1(u) = u/2. c0 = 1.
AnalyticFixture counterexample_fixture();

// Exact sub-survival of the simulation design (no censoring). The integral
// over eps is closed form; the integral over U uses 64-node Gauss-Laguerre.
// c0 = censor_floor.
AnalyticFixture dgp_analytic_fixture(const DgpConfig& config = {});

// S(t, z | w) = p[z][w] exp(-rate[z][w] t). A zero rate gives a flat curve.
AnalyticFixture exponential_fixture(std::vector<std::vector<double>> p, std::vector<std::vector<double>> rate,
                                    double horizon, std::optional<double> c0 = std::nullopt);

// Triangular design: treatment 1 is never taken under instrument 0.
// S(t,0|0) = e^{-t/10}, S(t,0|1) = 0.4 e^{-t/10}, S(t,1|1) = 0.6 e^{-t/5},
// horizon and c0 = 10. phi_0(u) = 10u, phi_1(u) = 5u, u0 = 1.
AnalyticFixture triangular_fixture();

// Nodes and weights of the n-point Gauss-Laguerre rule (weight e^{-x}).
std::pair<std::vector<double>, std::vector<double>> gauss_laguerre(std::size_t n);

struct StudyConfig {
  DgpConfig dgp;
  std::size_t replications = 100;
  std::vector<double> u_grid = make_grid(0.01, 0.01, 1.2);
  double accuracy_lo = 0.05;
  double accuracy_hi = 0.9;
  std::vector<double> coverage_u{0.1, 0.3, 0.5, 0.7, 0.9};
  int bootstrap_B = 200;  // 0 skips the bootstrap
  std::optional<double> tbar;  // defaults to censor_floor
  SmootherOptions smoother;
  SolverConfig solver;
  BreakpointOptions breakpoint;
  double detect_lo = 0.85;
  double detect_hi = 1.1;
  unsigned threads = 1;

  void validate() const;
};

inline constexpr std::size_t kCoverageFunctionals = 3;  // phi0, phi1, qte
inline constexpr std::array<const char*, kCoverageFunctionals> kCoverageNames{"phi0", "phi1", "qte"};

struct ReplicationSummary {
  std::size_t replications = 0;
  std::vector<double> u_grid;
  std::vector<double> truth_phi0, truth_phi1, truth_qte;
  std::vector<double> mean_phi0, mean_phi1, mean_qte;
  std::vector<double> mean_naive0, mean_naive1;
  std::vector<double> mean_residual_norm;
  // Per grid point, summed over replications.
  std::vector<std::size_t> boundary_count;
  std::vector<std::size_t> failed_count;  // max-iterations or multistart disagreement

  double mae_phi0 = 0.0, mae_phi1 = 0.0;
  double mae_naive0 = 0.0, mae_naive1 = 0.0;
  double mean_censored_fraction = 0.0;

  std::vector<double> coverage_u;
  // [functional][point]: coverage rate and mean CI endpoints
  std::array<std::vector<double>, kCoverageFunctionals> coverage, mean_lower, mean_upper;
  std::array<std::vector<std::size_t>, kCoverageFunctionals> covered;
  bool bootstrap_run = false;

  std::vector<std::optional<double>> breakpoints;  // per replication
  double detection_rate = 0.0;
  std::size_t breakpoint_none = 0;
};

ReplicationSummary run_replication_study(const StudyConfig& config);

}  // namespace ivdur
