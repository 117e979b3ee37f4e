#include "ivdur/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ivdur/errors.hpp"
#include "ivdur/parallel.hpp"
#include "ivdur/random.hpp"
#include "ivdur/stats.hpp"

namespace ivdur {

std::string Functional::label() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::phi: os << "phi(z=" << z0 << ")"; break;
    case Kind::qte: os << "qte(z0=" << z0 << ",z1=" << z1 << ")"; break;
    case Kind::ate: os << "ate(z0=" << z0 << ",z1=" << z1 << ")"; break;
    case Kind::survival: os << "survival(z=" << z0 << ",t=" << t << ")"; break;
    case Kind::hazard: os << "hazard(z=" << z0 << ",t=" << t << ")"; break;
  }
  return os.str();
}

void Functional::validate(std::size_t num_treatments) const {
  if (z0 >= num_treatments || z1 >= num_treatments) throw Error("functional " + label() + " references an unknown level");
}

std::size_t nearest_grid_index(const PhiEstimate& estimate, double u, bool* off_grid) {
  const auto& g = estimate.u_grid;
  if (g.empty()) throw Error("empty estimation grid");
  const auto it = std::lower_bound(g.begin(), g.end(), u);
  std::size_t i = static_cast<std::size_t>(it - g.begin());
  if (i == g.size()) i = g.size() - 1;
  if (i > 0 && std::abs(g[i - 1] - u) <= std::abs(g[i] - u)) --i;
  if (off_grid) *off_grid = std::abs(g[i] - u) > 1e-9;
  return i;
}

GridValue qte(const PhiEstimate& estimate, std::size_t z0, std::size_t z1, double u) {
  GridValue out;
  out.index = nearest_grid_index(estimate, u, &out.off_grid);
  out.value = estimate.phi(z1, out.index) - estimate.phi(z0, out.index);
  return out;
}

AteResult ate(const PhiEstimate& estimate, std::size_t z0, std::size_t z1, TailPolicy tail) {
  const auto& g = estimate.u_grid;
  if (g.empty()) throw Error("empty estimation grid");
  AteResult out;
  out.tail_mass = std::exp(-g.back());
  if (out.tail_mass > 0.5)
    throw TailDominates("grid ends at u=" + std::to_string(g.back()) + ", leaving tail mass " +
                        std::to_string(out.tail_mass));
  double prev_u = 0.0, prev_f = 0.0;
  double sum = 0.0;
  for (std::size_t m = 0; m < g.size(); ++m) {
    const double f = (estimate.phi(z1, m) - estimate.phi(z0, m)) * std::exp(-g[m]);
    sum += 0.5 * (f + prev_f) * (g[m] - prev_u);
    prev_u = g[m];
    prev_f = f;
  }
  if (tail == TailPolicy::hold_last)
    sum += (estimate.phi(z1, g.size() - 1) - estimate.phi(z0, g.size() - 1)) * out.tail_mass;
  out.value = sum;
  return out;
}

std::vector<double> pava(std::span<const double> values) {
  // Blocks of (mean, size); merge backwards while the order is violated.
  std::vector<double> mean;
  std::vector<std::size_t> size;
  for (double v : values) {
    mean.push_back(v);
    size.push_back(1);
    while (mean.size() > 1 && mean[mean.size() - 2] > mean.back()) {
      const std::size_t n1 = size[size.size() - 2], n2 = size.back();
      const double merged = (mean[mean.size() - 2] * n1 + mean.back() * n2) / static_cast<double>(n1 + n2);
      mean.pop_back();
      size.pop_back();
      mean.back() = merged;
      size.back() = n1 + n2;
    }
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (std::size_t b = 0; b < mean.size(); ++b) out.insert(out.end(), size[b], mean[b]);
  return out;
}

std::vector<double> monotonize(const PhiEstimate& estimate, std::size_t z) {
  std::vector<double> raw(estimate.size());
  for (std::size_t m = 0; m < raw.size(); ++m) raw[m] = estimate.phi(z, m);
  return pava(raw);
}

namespace {

// Knots (0, 0), (u_m, phi~_m).
struct Interpolant {
  std::vector<double> u, phi;
};

Interpolant monotone_interpolant(const PhiEstimate& estimate, std::size_t z) {
  Interpolant ip;
  const auto mono = monotonize(estimate, z);
  ip.u.reserve(mono.size() + 1);
  ip.phi.reserve(mono.size() + 1);
  ip.u.push_back(0.0);
  ip.phi.push_back(0.0);
  for (std::size_t m = 0; m < mono.size(); ++m) {
    ip.u.push_back(estimate.u_grid[m]);
    ip.phi.push_back(std::max(mono[m], 0.0));
  }
  return ip;
}

}  // namespace

SurvivalValue counterfactual_survival(const PhiEstimate& estimate, std::size_t z, double t) {
  if (t <= 0.0) return {1.0, false};
  const Interpolant ip = monotone_interpolant(estimate, z);
  const auto it = std::lower_bound(ip.phi.begin(), ip.phi.end(), t);
  if (it == ip.phi.end()) return {std::exp(-ip.u.back()), true};
  const auto j = static_cast<std::size_t>(it - ip.phi.begin());
  // phi[j-1] < t <= phi[j], j >= 1 because phi[0] = 0 < t.
  const double frac = (t - ip.phi[j - 1]) / (ip.phi[j] - ip.phi[j - 1]);
  const double u = ip.u[j - 1] + frac * (ip.u[j] - ip.u[j - 1]);
  return {std::exp(-u), false};
}

HazardValue counterfactual_hazard(const PhiEstimate& estimate, std::size_t z, double t) {
  const Interpolant ip = monotone_interpolant(estimate, z);
  const std::size_t n = ip.phi.size();
  HazardValue out;
  const auto lo = static_cast<std::size_t>(std::lower_bound(ip.phi.begin(), ip.phi.end(), t) - ip.phi.begin());
  if (lo + 1 < n && ip.phi[lo] == t && ip.phi[lo + 1] == t) {
    out.value = std::numeric_limits<double>::infinity();
    out.infinite = true;
    return out;
  }
  const auto j = static_cast<std::size_t>(std::upper_bound(ip.phi.begin(), ip.phi.end(), t) - ip.phi.begin());
  if (j == n || j == 0) {
    out.value = std::numeric_limits<double>::quiet_NaN();
    out.out_of_range = true;
    return out;
  }
  out.value = (ip.u[j] - ip.u[j - 1]) / (ip.phi[j] - ip.phi[j - 1]);
  return out;
}

PhiEstimate run_pipeline(const Dataset& data, const PipelineConfig& config) {
  const SurvivalModel model = fit_survival_model(data, config.tbar, config.smoother);
  return estimate_phi(model, config.u_grid, config.solver);
}

namespace {

std::vector<double> evaluate_functional(const Functional& f, const PhiEstimate& est) {
  switch (f.kind) {
    case Functional::Kind::phi: {
      std::vector<double> v(est.size());
      for (std::size_t m = 0; m < v.size(); ++m) v[m] = est.phi(f.z0, m);
      return v;
    }
    case Functional::Kind::qte: {
      std::vector<double> v(est.size());
      for (std::size_t m = 0; m < v.size(); ++m) v[m] = est.phi(f.z1, m) - est.phi(f.z0, m);
      return v;
    }
    case Functional::Kind::ate: return {ate(est, f.z0, f.z1).value};
    case Functional::Kind::survival: return {counterfactual_survival(est, f.z0, f.t).value};
    case Functional::Kind::hazard: return {counterfactual_hazard(est, f.z0, f.t).value};
  }
  return {};
}

Dataset resample(const Dataset& data, CounterRng& rng) {
  const auto& rows = data.records();
  std::vector<ObservationRecord> out(rows.size());
  for (auto& r : out) r = rows[rng.index(rows.size())];
  return Dataset(std::move(out), data.z_levels(), data.w_levels());
}

}  // namespace

BootstrapResult bootstrap(const Dataset& data, const PipelineConfig& config, std::span<const Functional> functionals,
                          int B, std::uint64_t seed, unsigned threads) {
  if (B < 2) throw Error("bootstrap needs B >= 2");
  for (const auto& f : functionals) f.validate(data.num_treatments());

  PipelineConfig inner = config;
  inner.solver.threads = 1;
  const PhiEstimate point = run_pipeline(data, inner);
  std::vector<std::vector<double>> point_values;
  for (const auto& f : functionals) point_values.push_back(evaluate_functional(f, point));

  const auto required = [&] {
    std::vector<bool> req(data.num_treatments() * data.num_instruments());
    for (std::size_t z = 0; z < data.num_treatments(); ++z)
      for (std::size_t w = 0; w < data.num_instruments(); ++w)
        req[z * data.num_instruments() + w] = data.cell_count(z, w) > 0;
    return req;
  }();

  const auto nB = static_cast<std::size_t>(B);
  const std::size_t cap = 10 * nB;
  // draws[b][functional] -> values over the functional's index
  std::vector<std::vector<std::vector<double>>> draws(nB);
  std::vector<std::size_t> redraws(nB, 0);

  parallel_for(nB, threads, [&](std::size_t b) {
    CounterRng rng(seed, b);
    while (true) {
      Dataset sample = resample(data, rng);
      bool ok = true;
      for (std::size_t z = 0; z < data.num_treatments() && ok; ++z)
        for (std::size_t w = 0; w < data.num_instruments() && ok; ++w)
          ok = !required[z * data.num_instruments() + w] || sample.cell_count(z, w) > 0;
      if (ok) {
        try {
          const PhiEstimate est = run_pipeline(sample, inner);
          for (const auto& f : functionals) draws[b].push_back(evaluate_functional(f, est));
          return;
        } catch (const DegenerateSample&) {
        } catch (const EmptyInstrumentLevel&) {
        } catch (const InvalidBandwidth&) {
        }
      }
      if (++redraws[b] > cap) return;
    }
  });

  BootstrapResult out;
  out.B = B;
  out.seed = seed;
  for (std::size_t r : redraws) out.redraws += r;
  if (out.redraws > cap)
    throw BootstrapDegeneracy("bootstrap needed " + std::to_string(out.redraws) + " redraws for B=" +
                              std::to_string(B));

  for (std::size_t fi = 0; fi < functionals.size(); ++fi) {
    const Functional& f = functionals[fi];
    const auto& pv = point_values[fi];
    std::vector<double> sup_dev(nB, 0.0);
    for (std::size_t m = 0; m < pv.size(); ++m) {
      std::vector<double> column(nB);
      for (std::size_t b = 0; b < nB; ++b) {
        column[b] = draws[b][fi][m];
        sup_dev[b] = std::max(sup_dev[b], std::abs(column[b] - pv[m]));
      }
      std::sort(column.begin(), column.end());
      BootstrapEntry e;
      e.functional = f.label();
      if (f.on_grid()) e.u = point.u_grid[m];
      e.point = pv[m];
      e.lower = quantile_sorted(column, 0.025);
      e.upper = quantile_sorted(column, 0.975);
      e.asymmetric = !(e.lower <= e.point && e.point <= e.upper);
      out.entries.push_back(std::move(e));
    }
    if (f.on_grid()) {
      std::sort(sup_dev.begin(), sup_dev.end());
      out.bands.push_back({f.label(), quantile_sorted(sup_dev, 0.95)});
    }
  }
  return out;
}

}  // namespace ivdur
