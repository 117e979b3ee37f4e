#include "ivdur/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ivdur/errors.hpp"
#include "ivdur/estimator.hpp"
#include "ivdur/inference.hpp"
#include "ivdur/io.hpp"
#include "ivdur/parallel.hpp"
#include "ivdur/partial_id.hpp"
#include "ivdur/sim.hpp"
#include "ivdur/survival.hpp"

namespace ivdur {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Options {
  std::string command;
  std::vector<std::string> argv;

  std::string input;
  std::optional<std::size_t> simulate;
  std::optional<double> tbar;
  double tbar_quantile = 0.95;
  std::optional<double> c0;
  std::string grid = "0.01:0.01:1.2";
  std::string smoother = "kernel";
  std::optional<double> bandwidth;
  double rule_constant = 1.06;
  std::string weighting = "identity";
  int multistart = 8;
  int bootstrap_B = 200;
  std::uint64_t seed = 1;
  double kappa = 10.0;
  double baseline_fraction = 0.5;
  unsigned threads = 0;
  std::string out = "out";

  std::string fixture;
  std::string method = "outer";
  std::vector<double> u_values;
  std::size_t replications = 100;
};

std::vector<double> parse_grid(const std::string& spec) {
  double v[3];
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    const auto colon = spec.find(':', pos);
    if ((i < 2) == (colon == std::string::npos)) throw UsageError("grid must be start:step:stop, got '" + spec + "'");
    const std::string part = spec.substr(pos, colon == std::string::npos ? std::string::npos : colon - pos);
    try {
      std::size_t used = 0;
      v[i] = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw UsageError("grid component '" + part + "' is not a number");
    }
    pos = colon + 1;
  }
  if (!(v[0] > 0.0)) throw UsageError("grid start must be positive");
  if (!(v[1] > 0.0)) throw UsageError("grid step must be positive");
  if (!(v[2] >= v[0])) throw UsageError("grid stop must not precede its start");
  return make_grid(v[0], v[1], v[2]);
}

SmootherOptions smoother_options(const Options& o) {
  SmootherOptions s;
  s.method = o.smoother == "localpoly" ? SmootherMethod::local_polynomial : SmootherMethod::kernel;
  s.bandwidth = o.bandwidth;
  s.rule_constant = o.rule_constant;
  return s;
}

SolverConfig solver_config(const Options& o) {
  SolverConfig s;
  s.multistart_grid_points_per_dim = o.multistart;
  s.weighting = o.weighting == "two-step" ? Weighting::two_step : Weighting::identity;
  s.threads = resolve_threads(o.threads);
  s.validate();
  return s;
}

DgpConfig dgp_config(const Options& o) {
  DgpConfig d;
  d.n = o.simulate.value_or(10000);
  d.seed = o.seed;
  return d;
}

struct LoadedData {
  Dataset data;
  std::optional<double> c0;  // known censoring floor of simulated data
  std::string source;
};

LoadedData load_data(const Options& o) {
  if (!o.input.empty() && o.simulate) throw UsageError("--input and --simulate are mutually exclusive");
  if (!o.input.empty()) return {read_dataset_csv(o.input), o.c0, o.input};
  if (o.simulate) {
    const DgpConfig d = dgp_config(o);
    return {dgp_generate(d).data, o.c0 ? o.c0 : std::optional<double>(d.censor_floor), "simulate"};
  }
  throw UsageError("one of --input or --simulate is required");
}

json config_echo(const Options& o) {
  json j;
  j["input"] = o.input.empty() ? json(nullptr) : json(o.input);
  j["simulate"] = o.simulate ? json(*o.simulate) : json(nullptr);
  j["tbar"] = o.tbar ? json(*o.tbar) : json(nullptr);
  j["tbar_quantile"] = o.tbar_quantile;
  j["c0"] = o.c0 ? json(*o.c0) : json(nullptr);
  j["grid"] = o.grid;
  j["smoother"] = o.smoother;
  j["bandwidth"] = o.bandwidth ? json(*o.bandwidth) : json(nullptr);
  j["rule_constant"] = o.rule_constant;
  j["weighting"] = o.weighting;
  j["multistart"] = o.multistart;
  j["bootstrap_B"] = o.bootstrap_B;
  j["seed"] = o.seed;
  j["kappa"] = o.kappa;
  j["baseline_fraction"] = o.baseline_fraction;
  j["threads"] = o.threads;
  j["out"] = o.out;
  return j;
}

json run_header(const Options& o) {
  json j;
  j["command"] = o.command;
  j["argv"] = o.argv;
  j["version"] = kVersion;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  j["config"] = config_echo(o);
  return j;
}

json dataset_json(const Dataset& data) {
  json j;
  j["n"] = data.size();
  j["z_levels"] = data.z_levels();
  j["w_levels"] = data.w_levels();
  j["censored_fraction"] = data.censored_fraction();
  json cells = json::array();
  for (std::size_t z = 0; z < data.num_treatments(); ++z)
    for (std::size_t w = 0; w < data.num_instruments(); ++w)
      cells.push_back({{"z", data.z_levels()[z]}, {"w", data.w_levels()[w]}, {"count", data.cell_count(z, w)}});
  j["cells"] = cells;
  return j;
}

json model_json(const SurvivalModel& model, const Dataset& data) {
  json cells = json::array();
  for (std::size_t z = 0; z < model.num_treatments(); ++z)
    for (std::size_t w = 0; w < model.num_instruments(); ++w) {
      const auto& c = model.cell(z, w);
      json cj{{"z", data.z_levels()[z]}, {"w", data.w_levels()[w]}, {"p_hat", c.p_hat}};
      if (c.count > 0) {
        cj["bandwidth"] = c.smooth.bandwidth();
        cj["boundary_warning"] = c.smooth.boundary_warning();
      }
      cells.push_back(cj);
    }
  return cells;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct EstimateRun {
  LoadedData loaded;
  double tbar = 0.0;
  PipelineConfig pipeline;
  PhiEstimate estimate;
  json run;
  std::chrono::steady_clock::time_point start;
};

EstimateRun do_estimate(const Options& o, std::ostream& out) {
  EstimateRun r;
  r.start = std::chrono::steady_clock::now();
  r.loaded = load_data(o);
  const Dataset& data = r.loaded.data;
  if (o.tbar) {
    if (!(*o.tbar > 0.0)) throw UsageError("--tbar must be positive");
    r.tbar = *o.tbar;
  } else {
    if (!(o.tbar_quantile > 0.0 && o.tbar_quantile < 1.0)) throw UsageError("--tbar-quantile must lie in (0, 1)");
    r.tbar = choose_tbar(data, o.tbar_quantile, r.loaded.c0);
  }
  r.pipeline.tbar = r.tbar;
  r.pipeline.smoother = smoother_options(o);
  r.pipeline.u_grid = parse_grid(o.grid);
  r.pipeline.solver = solver_config(o);

  const SurvivalModel model = fit_survival_model(data, r.tbar, r.pipeline.smoother);
  r.estimate = estimate_phi(model, r.pipeline.u_grid, r.pipeline.solver);

  fs::create_directories(o.out);
  write_phi_csv(fs::path(o.out) / "phi.csv", r.estimate);
  write_residual_csv(fs::path(o.out) / "residual.csv", r.estimate);

  BreakpointOptions bp;
  bp.kappa = o.kappa;
  bp.baseline_fraction = o.baseline_fraction;
  const BreakpointReport report = detect_breakpoint(r.estimate, bp);

  r.run = run_header(o);
  r.run["dataset"] = dataset_json(data);
  r.run["tbar"] = r.tbar;
  r.run["model"] = model_json(model, data);
  json status;
  for (auto s : {SolverStatus::converged, SolverStatus::boundary, SolverStatus::multistart_disagreement,
                 SolverStatus::max_iterations})
    status[to_string(s)] = r.estimate.count(s);
  r.run["status_counts"] = status;
  r.run["breakpoint"] = breakpoint_to_json(report);
  out << "estimated phi at " << r.estimate.size() << " grid points (tbar " << format_number(r.tbar) << ")";
  if (report.u0_hat) out << "; breakpoint near u=" << format_number(*report.u0_hat);
  out << '\n';
  return r;
}

int finish(EstimateRun& r, const Options& o, std::ostream& err) {
  r.run["timings"] = {{"total_seconds", seconds_since(r.start)}};
  write_json(fs::path(o.out) / "run.json", r.run);
  const std::size_t failed = r.estimate.count(SolverStatus::max_iterations);
  if (static_cast<double>(failed) > 0.1 * static_cast<double>(r.estimate.size())) {
    err << "solver did not converge at " << failed << " of " << r.estimate.size() << " grid points\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_estimate(const Options& o, std::ostream& out, std::ostream& err) {
  EstimateRun r = do_estimate(o, out);
  return finish(r, o, err);
}

int cmd_bootstrap(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.bootstrap_B < 2) throw UsageError("--bootstrap-B must be at least 2");
  EstimateRun r = do_estimate(o, out);
  const Dataset& data = r.loaded.data;
  std::vector<Functional> fs_list;
  for (std::size_t z = 0; z < data.num_treatments(); ++z) fs_list.push_back(Functional::phi(z));
  for (std::size_t z = 1; z < data.num_treatments(); ++z) fs_list.push_back(Functional::qte(0, z));
  if (std::exp(-r.pipeline.u_grid.back()) <= 0.5)
    for (std::size_t z = 1; z < data.num_treatments(); ++z) fs_list.push_back(Functional::ate(0, z));

  PipelineConfig inner = r.pipeline;
  inner.solver.threads = 1;
  const auto t0 = std::chrono::steady_clock::now();
  const BootstrapResult boot = bootstrap(data, inner, fs_list, o.bootstrap_B, o.seed, resolve_threads(o.threads));
  write_ci_csv(fs::path(o.out) / "ci.csv", boot);
  r.run["bootstrap"] = bootstrap_to_json(boot);
  r.run["timings"]["bootstrap_seconds"] = seconds_since(t0);
  out << "bootstrap: B=" << boot.B << ", " << boot.redraws << " redraws\n";
  return finish(r, o, err);
}

int cmd_outer_set(const Options& o, std::ostream& out, std::ostream&) {
  if (!o.c0) throw UsageError("outer-set requires --c0");
  if (!(*o.c0 > 0.0)) throw UsageError("--c0 must be positive");
  const double c0 = *o.c0;
  const auto t0 = std::chrono::steady_clock::now();

  std::unique_ptr<SubSurvival> owned;
  std::optional<Dataset> data;
  if (!o.fixture.empty()) {
    if (o.fixture == "counterexample") owned = std::make_unique<AnalyticFixture>(counterexample_fixture());
    else if (o.fixture == "triangular") owned = std::make_unique<AnalyticFixture>(triangular_fixture());
    else if (o.fixture == "dgp") owned = std::make_unique<AnalyticFixture>(dgp_analytic_fixture());
    else throw UsageError("unknown fixture '" + o.fixture + "' (counterexample, triangular, dgp)");
  } else {
    LoadedData loaded = load_data(o);
    const double tbar = o.tbar ? *o.tbar : std::max(c0, choose_tbar(loaded.data, o.tbar_quantile, loaded.c0));
    owned = std::make_unique<SurvivalModel>(fit_survival_model(loaded.data, tbar, smoother_options(o)));
    data = std::move(loaded.data);
  }

  const std::vector<double> us = o.u_values.empty() ? parse_grid(o.grid) : o.u_values;
  std::vector<BoxUnion> sets;
  if (o.method == "triangular") {
    sets.resize(us.size());
    parallel_for(us.size(), resolve_threads(o.threads),
                 [&](std::size_t m) { sets[m] = triangular_outer_set(*owned, us[m], c0); });
  } else if (o.method == "outer") {
    sets = outer_set_grid(*owned, us, c0, resolve_threads(o.threads));
  } else {
    throw UsageError("unknown method '" + o.method + "' (outer, triangular)");
  }

  fs::create_directories(o.out);
  json sets_json = json::array();
  for (const auto& s : sets) {
    json sj = box_union_to_json(s);
    if (s.dimension == 2) sj["shape"] = to_string(classify_shape(s));
    sets_json.push_back(sj);
  }
  write_json(fs::path(o.out) / "outer_set.json", {{"method", o.method}, {"sets", sets_json}});
  write_box_corners_csv(fs::path(o.out) / "outer_set_corners.csv", sets);

  json run = run_header(o);
  run["fixture"] = o.fixture.empty() ? json(nullptr) : json(o.fixture);
  run["method"] = o.method;
  if (data) run["dataset"] = dataset_json(*data);
  run["timings"] = {{"total_seconds", seconds_since(t0)}};
  write_json(fs::path(o.out) / "run.json", run);
  std::size_t nonempty = 0;
  for (const auto& s : sets) nonempty += !s.empty();
  out << "outer set at " << sets.size() << " u values, " << nonempty << " nonempty\n";
  return kExitOk;
}

int cmd_simulate(const Options& o, std::ostream& out, std::ostream&) {
  const auto t0 = std::chrono::steady_clock::now();
  StudyConfig sc;
  sc.dgp = dgp_config(o);
  sc.replications = o.replications;
  sc.u_grid = parse_grid(o.grid);
  sc.bootstrap_B = o.bootstrap_B;
  sc.tbar = o.tbar ? o.tbar : o.c0;
  sc.smoother = smoother_options(o);
  sc.solver = solver_config(o);
  sc.solver.threads = 1;
  sc.breakpoint.kappa = o.kappa;
  sc.breakpoint.baseline_fraction = o.baseline_fraction;
  sc.threads = resolve_threads(o.threads);
  const ReplicationSummary summary = run_replication_study(sc);

  json extra;
  extra["n"] = sc.dgp.n;
  extra["seed"] = sc.dgp.seed;
  extra["bootstrap_B"] = sc.bootstrap_B;
  write_study_outputs(o.out, summary, extra);
  json run = run_header(o);
  run["timings"] = {{"total_seconds", seconds_since(t0)}};
  write_json(fs::path(o.out) / "run.json", run);
  out << "simulation: " << summary.replications << " replications, mean abs error phi0 "
      << format_number(summary.mae_phi0) << ", phi1 " << format_number(summary.mae_phi1) << '\n';
  return kExitOk;
}

int cmd_generate(const Options& o, std::ostream& out, std::ostream&) {
  const DgpConfig d = dgp_config(o);
  const SimulatedSample sample = dgp_generate(d);
  fs::create_directories(o.out);
  write_dataset_csv(fs::path(o.out) / "data.csv", sample.data);
  out << "wrote " << sample.data.size() << " rows to " << (fs::path(o.out) / "data.csv").string() << '\n';
  return kExitOk;
}

void add_common(CLI::App& app, Options& o) {
  app.add_option("--input", o.input, "CSV with columns y,z,w,delta");
  app.add_option("--simulate", o.simulate, "Generate n rows from the simulation design instead of reading input");
  app.add_option("--tbar", o.tbar, "Upper evaluation bound for the survival estimates");
  app.add_option("--tbar-quantile", o.tbar_quantile, "Per-cell quantile used for tbar when neither --tbar nor --c0 is given");
  app.add_option("--c0", o.c0, "Known lower bound of the censoring support");
  app.add_option("--grid", o.grid, "u grid as start:step:stop");
  app.add_option("--smoother", o.smoother)->check(CLI::IsMember({"kernel", "localpoly"}));
  app.add_option("--bandwidth", o.bandwidth, "Fixed bandwidth (default: per-cell rule of thumb)");
  app.add_option("--rule-constant", o.rule_constant, "Constant of the bandwidth rule of thumb");
  app.add_option("--weighting", o.weighting)->check(CLI::IsMember({"identity", "two-step"}));
  app.add_option("--multistart", o.multistart, "Start points per dimension");
  app.add_option("--bootstrap-B", o.bootstrap_B, "Bootstrap resamples");
  app.add_option("--seed", o.seed, "Seed for simulated data and bootstrap resampling");
  app.add_option("--kappa", o.kappa, "Breakpoint threshold multiple");
  app.add_option("--baseline-fraction", o.baseline_fraction, "Share of the grid used for the breakpoint baseline");
  app.add_option("--threads", o.threads, "Worker threads (0: all available)");
  app.add_option("--out", o.out, "Output directory");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  for (int i = 1; i < argc; ++i) o.argv.emplace_back(argv[i]);

  CLI::App app{"Instrumental-variable estimation of counterfactual duration quantiles", "ivdur"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "TOML/INI file of option values; command-line flags take precedence");
  app.require_subcommand(1);
  add_common(app, o);

  auto* est = app.add_subcommand("estimate", "Estimate phi on a u grid");
  auto* boot = app.add_subcommand("bootstrap", "Estimate and bootstrap percentile intervals");
  auto* outer = app.add_subcommand("outer-set", "Outer identification set on a fixture or fitted model");
  outer->add_option("--fixture", o.fixture, "counterexample, triangular or dgp");
  outer->add_option("--method", o.method, "outer or triangular");
  outer->add_option("--u", o.u_values, "u values (overrides --grid)");
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study of the simulation design");
  simulate->add_option("--replications", o.replications);
  auto* generate = app.add_subcommand("generate", "Write one simulated dataset as CSV");
  for (auto* sub : {est, boot, outer, simulate, generate}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitDataError;
  }
  o.command = app.get_subcommands().front()->get_name();

  try {
    if (o.command == "estimate") return cmd_estimate(o, out, err);
    if (o.command == "bootstrap") return cmd_bootstrap(o, out, err);
    if (o.command == "outer-set") return cmd_outer_set(o, out, err);
    if (o.command == "simulate") return cmd_simulate(o, out, err);
    return cmd_generate(o, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const EmptyCell& e) {
    err << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const EmptyInstrumentLevel& e) {
    err << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const DegenerateSample& e) {
    err << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace ivdur
