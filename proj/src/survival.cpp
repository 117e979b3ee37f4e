#include "ivdur/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ivdur/errors.hpp"
#include "ivdur/stats.hpp"

namespace ivdur {

namespace {

// Epanechnikov kernel and its CDF on [-1, 1].
inline double epan(double x) { return std::abs(x) >= 1.0 ? 0.0 : 0.75 * (1.0 - x * x); }
inline double epan_cdf(double x) {
  if (x <= -1.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return 0.5 + 0.75 * x - 0.25 * x * x * x;
}

// Windows with at most this many jumps are summed directly.
constexpr std::size_t kDirectWindow = 32;
// Largest |y / h| for which the moment recurrence keeps ~1e-12 accuracy in
// extended precision.
constexpr double kMomentRange = 1000.0;

}  // namespace

// ---------------------------------------------------------------- StepSurvival

StepSurvival::StepSurvival(std::vector<double> jump_times, std::vector<double> values)
    : jump_times_(std::move(jump_times)), values_(std::move(values)) {
  if (jump_times_.size() != values_.size()) throw Error("StepSurvival: size mismatch");
}

double StepSurvival::operator()(double t) const {
  const auto it = std::upper_bound(jump_times_.begin(), jump_times_.end(), t);
  if (it == jump_times_.begin()) return 1.0;
  return values_[static_cast<std::size_t>(it - jump_times_.begin()) - 1];
}

StepSurvival product_limit(std::span<const double> y, std::span<const int> delta) {
  const std::size_t n = y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y[a] < y[b]; });

  std::vector<double> times, values;
  double s = 1.0;
  std::size_t at_risk = n;
  bool censored_before = false;
  for (std::size_t i = 0; i < n;) {
    const double t = y[order[i]];
    std::size_t events = 0, leaving = 0;
    for (; i < n && y[order[i]] == t; ++i, ++leaving) events += (delta[order[i]] == 1);
    if (events > 0) {
      // Before any censoring the product telescopes to (at risk - d) / n.
      if (!censored_before) s = static_cast<double>(at_risk - events) / static_cast<double>(n);
      else s *= 1.0 - static_cast<double>(events) / static_cast<double>(at_risk);
      times.push_back(t);
      values.push_back(s);
    }
    censored_before = censored_before || events < leaving;
    at_risk -= leaving;
  }
  return StepSurvival(std::move(times), std::move(values));
}

StepSurvival km_estimate(const Dataset& data, std::size_t z, std::size_t w) {
  std::vector<double> y;
  std::vector<int> delta;
  for (const auto& r : data.records()) {
    if (r.z == z && r.w == w) {
      y.push_back(r.y);
      delta.push_back(r.delta);
    }
  }
  if (y.empty()) throw EmptyCell(z, w);
  return product_limit(y, delta);
}

double bandwidth_rule_of_thumb(std::span<const double> durations, double constant) {
  std::vector<double> x(durations.begin(), durations.end());
  std::sort(x.begin(), x.end());
  std::size_t n_distinct = x.empty() ? 0 : 1;
  for (std::size_t i = 1; i < x.size(); ++i) n_distinct += (x[i] != x[i - 1]);
  if (n_distinct < 2) throw DegenerateSample("bandwidth rule needs at least two distinct durations");

  const auto n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = quantile_sorted(x, 0.75) - quantile_sorted(x, 0.25);
  const double sigma = iqr > 0.0 ? std::min(sd, iqr / 1.349) : sd;
  return constant * sigma * std::pow(n, -0.2);
}

// -------------------------------------------------------------- SmoothSurvival

SmoothSurvival kernel_smooth(const StepSurvival& km, double bandwidth) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    throw InvalidBandwidth("bandwidth must be positive, got " + std::to_string(bandwidth));
  SmoothSurvival s;
  s.method_ = SmootherMethod::kernel;
  s.bandwidth_ = bandwidth;
  s.times_ = km.jump_times();
  s.levels_ = km.values();
  s.drops_.resize(s.times_.size());
  double prev = 1.0;
  for (std::size_t j = 0; j < s.times_.size(); ++j) {
    s.drops_[j] = prev - s.levels_[j];
    prev = s.levels_[j];
  }

  const double max_scaled = s.times_.empty() ? 0.0 : s.times_.back() / bandwidth;
  s.use_moments_ = s.times_.size() > kDirectWindow && max_scaled <= kMomentRange;
  if (s.use_moments_) {
    const std::size_t n = s.times_.size();
    for (auto& m : s.moments_) m.assign(n + 1, 0.0L);
    for (std::size_t j = 0; j < n; ++j) {
      const long double eta = static_cast<long double>(s.times_[j]) / bandwidth;
      long double term = s.drops_[j];
      for (int m = 0; m < 4; ++m) {
        s.moments_[m][j + 1] = s.moments_[m][j] + term;
        term *= eta;
      }
    }
  }
  return s;
}

std::pair<double, double> SmoothSurvival::kernel_direct(double t, std::size_t lo, std::size_t hi) const {
  const double base = lo == 0 ? 1.0 : levels_[lo - 1];
  double cdf_sum = 0.0, pdf_sum = 0.0;
  for (std::size_t j = lo; j < hi; ++j) {
    const double x = (t - times_[j]) / bandwidth_;
    cdf_sum += drops_[j] * epan_cdf(x);
    pdf_sum += drops_[j] * epan(x);
  }
  return {base - cdf_sum, -pdf_sum / bandwidth_};
}

std::pair<double, double> SmoothSurvival::kernel_at(double t) const {
  const double h = bandwidth_;
  const auto lo = static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), t - h) - times_.begin());
  const auto hi = static_cast<std::size_t>(std::lower_bound(times_.begin(), times_.end(), t + h) - times_.begin());
  if (hi <= lo) return {lo == 0 ? 1.0 : levels_[lo - 1], 0.0};
  if (!use_moments_ || hi - lo <= kDirectWindow) return kernel_direct(t, lo, hi);

  // sum_j d_j (tau - eta_j)^m expanded in the window moments.
  const long double tau = static_cast<long double>(t) / h;
  long double M[4];
  for (int m = 0; m < 4; ++m) M[m] = moments_[m][hi] - moments_[m][lo];
  const long double tau2 = tau * tau;
  const long double cdf_sum = (0.5L + 0.75L * tau - 0.25L * tau2 * tau) * M[0] + (-0.75L + 0.75L * tau2) * M[1] -
                              0.75L * tau * M[2] + 0.25L * M[3];
  const long double pdf_sum = 0.75L * ((1.0L - tau2) * M[0] + 2.0L * tau * M[1] - M[2]);
  const double base = lo == 0 ? 1.0 : levels_[lo - 1];
  const double value = std::clamp(static_cast<double>(base - cdf_sum), 0.0, 1.0);
  const double slope = std::min(0.0, static_cast<double>(-pdf_sum / h));
  return {value, slope};
}

namespace {

struct LinearFit {
  double intercept;
  double slope;
  bool ok;
};

LinearFit weighted_line(const std::vector<double>& times, const std::vector<double>& levels, std::size_t lo,
                        std::size_t hi, double t, double h) {
  double w0 = 0, w1 = 0, w2 = 0, t0 = 0, t1 = 0;
  for (std::size_t j = lo; j < hi; ++j) {
    const double d = times[j] - t;
    const double w = epan(d / h);
    w0 += w;
    w1 += w * d;
    w2 += w * d * d;
    t0 += w * levels[j];
    t1 += w * d * levels[j];
  }
  const double det = w0 * w2 - w1 * w1;
  if (!(w0 > 0.0) || !(det > 1e-14 * w0 * w2)) return {w0 > 0.0 ? t0 / w0 : 0.0, 0.0, false};
  return {(w2 * t0 - w1 * t1) / det, (w0 * t1 - w1 * t0) / det, true};
}

}  // namespace

std::pair<double, double> SmoothSurvival::localpoly_at(double t) const {
  const std::size_t n = times_.size();
  if (n < 2) {
    const double level = (n == 1 && t >= times_[0]) ? levels_[0] : 1.0;
    return {level, 0.0};
  }
  double h = bandwidth_;
  auto lo = static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), t - h) - times_.begin());
  auto hi = static_cast<std::size_t>(std::lower_bound(times_.begin(), times_.end(), t + h) - times_.begin());
  if (hi < lo + 2) {
    // Widen to the two nearest jump times.
    auto right = static_cast<std::size_t>(std::lower_bound(times_.begin(), times_.end(), t) - times_.begin());
    std::size_t left = right;  // candidates are [left - 1] and [right]
    double second = 0.0;
    for (int taken = 0; taken < 2; ++taken) {
      const double dl = left > 0 ? t - times_[left - 1] : std::numeric_limits<double>::infinity();
      const double dr = right < n ? times_[right] - t : std::numeric_limits<double>::infinity();
      if (dl <= dr) {
        second = dl;
        --left;
      } else {
        second = dr;
        ++right;
      }
    }
    h = 1.5 * second;
    lo = static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), t - h) - times_.begin());
    hi = static_cast<std::size_t>(std::lower_bound(times_.begin(), times_.end(), t + h) - times_.begin());
  }
  const LinearFit fit = weighted_line(times_, levels_, lo, hi, t, h);
  return {std::clamp(fit.intercept, 0.0, 1.0), std::min(0.0, fit.slope)};
}

SmoothSurvival localpoly_smooth(const StepSurvival& km, double bandwidth, double horizon) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    throw InvalidBandwidth("bandwidth must be positive, got " + std::to_string(bandwidth));
  SmoothSurvival s;
  s.method_ = SmootherMethod::local_polynomial;
  s.bandwidth_ = bandwidth;
  s.times_ = km.jump_times();
  s.levels_ = km.values();
  s.drops_.resize(s.times_.size());
  double prev = 1.0;
  for (std::size_t j = 0; j < s.times_.size(); ++j) {
    s.drops_[j] = prev - s.levels_[j];
    prev = s.levels_[j];
  }

  // The open-window count only changes at y_j -/+ h; probe every breakpoint
  // and the midpoints between them.
  const auto& y = s.times_;
  std::vector<double> probes{0.0, horizon};
  for (double v : y) {
    for (double c : {v - bandwidth, v + bandwidth})
      if (c >= 0.0 && c <= horizon) probes.push_back(c);
  }
  std::sort(probes.begin(), probes.end());
  const std::size_t np = probes.size();
  for (std::size_t i = 0; i + 1 < np; ++i) probes.push_back(0.5 * (probes[i] + probes[i + 1]));
  for (double t : probes) {
    const auto lo = std::upper_bound(y.begin(), y.end(), t - bandwidth);
    const auto hi = std::lower_bound(y.begin(), y.end(), t + bandwidth);
    if (hi - lo < 2) {
      s.boundary_warning_ = true;
      break;
    }
  }
  return s;
}

std::pair<double, double> SmoothSurvival::evaluate(double t) const {
  return method_ == SmootherMethod::kernel ? kernel_at(t) : localpoly_at(t);
}

// --------------------------------------------------------------- SurvivalModel

SurvivalModel::SurvivalModel(std::size_t L, std::size_t K, double tbar, std::vector<SurvivalCell> cells)
    : L_(L), K_(K), tbar_(tbar), cells_(std::move(cells)) {
  if (cells_.size() != L_ * K_) throw Error("SurvivalModel: cell table has wrong size");
}

double SurvivalModel::value(double t, std::size_t z, std::size_t w) const {
  const auto& c = cells_[z * K_ + w];
  if (c.count == 0) return 0.0;
  return c.p_hat * c.smooth.value(t);
}

double SurvivalModel::derivative(double t, std::size_t z, std::size_t w) const {
  const auto& c = cells_[z * K_ + w];
  if (c.count == 0) return 0.0;
  return c.p_hat * c.smooth.derivative(t);
}

SurvivalModel fit_survival_model(const Dataset& data, double tbar, const SmootherOptions& options) {
  const std::size_t L = data.num_treatments(), K = data.num_instruments();
  for (std::size_t w = 0; w < K; ++w)
    if (data.instrument_count(w) == 0) throw EmptyInstrumentLevel(w);

  std::vector<std::vector<double>> y(L * K), uncensored(L * K);
  std::vector<std::vector<int>> delta(L * K);
  for (const auto& r : data.records()) {
    const std::size_t c = r.z * K + r.w;
    y[c].push_back(r.y);
    delta[c].push_back(r.delta);
    if (r.delta == 1) uncensored[c].push_back(r.y);
  }

  std::vector<SurvivalCell> cells(L * K);
  for (std::size_t z = 0; z < L; ++z) {
    for (std::size_t w = 0; w < K; ++w) {
      const std::size_t c = z * K + w;
      auto& cell = cells[c];
      cell.count = y[c].size();
      if (cell.count == 0) continue;
      cell.p_hat = static_cast<double>(cell.count) / static_cast<double>(data.instrument_count(w));
      cell.km = product_limit(y[c], delta[c]);
      double h = 0.0;
      if (options.bandwidth) {
        h = *options.bandwidth;
      } else {
        try {
          h = bandwidth_rule_of_thumb(uncensored[c], options.rule_constant);
        } catch (const DegenerateSample& e) {
          throw DegenerateSample("cell (z=" + std::to_string(z) + ", w=" + std::to_string(w) + "): " + e.what());
        }
      }
      cell.smooth = options.method == SmootherMethod::kernel ? kernel_smooth(cell.km, h)
                                                             : localpoly_smooth(cell.km, h, tbar);
    }
  }
  return SurvivalModel(L, K, tbar, std::move(cells));
}

double choose_tbar(const Dataset& data, double alpha, std::optional<double> c0) {
  if (c0 && std::isfinite(*c0)) return *c0;
  const std::size_t K = data.num_instruments();
  std::vector<std::vector<double>> y(data.num_treatments() * K);
  for (const auto& r : data.records()) y[r.z * K + r.w].push_back(r.y);
  double best = std::numeric_limits<double>::infinity();
  for (auto& cell : y) {
    if (cell.empty()) continue;
    std::sort(cell.begin(), cell.end());
    best = std::min(best, inverse_ecdf_sorted(cell, alpha));
  }
  return best;
}

std::vector<double> nelson_aalen_invert(const Dataset& data, std::size_t z, std::span<const double> u_grid) {
  std::vector<std::pair<double, int>> obs;
  for (const auto& r : data.records())
    if (r.z == z) obs.emplace_back(r.y, r.delta);
  if (obs.empty()) throw EmptyCell(z, 0);
  std::sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<double> times, cumhaz;
  double lambda = 0.0;
  std::size_t at_risk = obs.size();
  for (std::size_t i = 0; i < obs.size();) {
    const double t = obs[i].first;
    std::size_t events = 0, leaving = 0;
    for (; i < obs.size() && obs[i].first == t; ++i, ++leaving) events += (obs[i].second == 1);
    if (events > 0) {
      lambda += static_cast<double>(events) / static_cast<double>(at_risk);
      times.push_back(t);
      cumhaz.push_back(lambda);
    }
    at_risk -= leaving;
  }

  std::vector<double> out;
  out.reserve(u_grid.size());
  for (double u : u_grid) {
    if (u <= 0.0) {
      out.push_back(0.0);
      continue;
    }
    const auto it = std::lower_bound(cumhaz.begin(), cumhaz.end(), u);
    out.push_back(it == cumhaz.end() ? std::numeric_limits<double>::infinity()
                                     : times[static_cast<std::size_t>(it - cumhaz.begin())]);
  }
  return out;
}

}  // namespace ivdur
