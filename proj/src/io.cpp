#include "ivdur/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "ivdur/errors.hpp"

namespace ivdur {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::size_t intern(std::vector<std::string>& catalog, std::map<std::string, std::size_t, std::less<>>& index,
                   std::string_view label) {
  const auto it = index.find(label);
  if (it != index.end()) return it->second;
  catalog.emplace_back(label);
  index.emplace(std::string(label), catalog.size() - 1);
  return catalog.size() - 1;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

std::string theta_header(std::size_t L) {
  std::string h;
  for (std::size_t l = 1; l <= L; ++l) h += ",theta_" + std::to_string(l);
  return h;
}

}  // namespace

Dataset parse_dataset_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string_view> fields;

  // Header: first nonblank line.
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw DataError(0, "input has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::map<std::string, std::size_t, std::less<>> column;
  const auto header = split(line);
  for (std::size_t i = 0; i < header.size(); ++i) column.emplace(std::string(header[i]), i);
  std::size_t col[4];
  const char* names[4] = {"y", "z", "w", "delta"};
  for (int c = 0; c < 4; ++c) {
    const auto it = column.find(names[c]);
    if (it == column.end()) throw DataError(lineno, std::string("header lacks a '") + names[c] + "' column");
    col[c] = it->second;
  }

  std::vector<ObservationRecord> rows;
  std::vector<std::string> z_levels, w_levels;
  std::map<std::string, std::size_t, std::less<>> z_index, w_index;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    fields = split(line);
    if (fields.size() != header.size())
      throw DataError(lineno, "expected " + std::to_string(header.size()) + " fields, found " +
                                  std::to_string(fields.size()));
    ObservationRecord r;
    const auto ys = fields[col[0]];
    const auto [yp, yec] = std::from_chars(ys.data(), ys.data() + ys.size(), r.y);
    if (yec != std::errc() || yp != ys.data() + ys.size())
      throw DataError(lineno, "y is not a number: '" + std::string(ys) + "'");
    if (!std::isfinite(r.y)) throw DataError(lineno, "y must be finite");
    if (r.y < 0.0) throw DataError(lineno, "y must be nonnegative");
    const auto ds = fields[col[3]];
    if (ds == "0") r.delta = 0;
    else if (ds == "1") r.delta = 1;
    else throw DataError(lineno, "delta must be 0 or 1, found '" + std::string(ds) + "'");
    if (fields[col[1]].empty()) throw DataError(lineno, "empty z label");
    if (fields[col[2]].empty()) throw DataError(lineno, "empty w label");
    r.z = intern(z_levels, z_index, fields[col[1]]);
    r.w = intern(w_levels, w_index, fields[col[2]]);
    rows.push_back(r);
  }
  if (rows.empty()) throw DataError(lineno, "input has no data rows");
  return Dataset(std::move(rows), std::move(z_levels), std::move(w_levels));
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(0, "cannot open " + path.string());
  return parse_dataset_csv(in);
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  auto out = open_out(path);
  out << "y,z,w,delta\n";
  for (const auto& r : data.records())
    out << format_number(r.y) << ',' << data.z_levels()[r.z] << ',' << data.w_levels()[r.w] << ',' << r.delta
        << '\n';
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

nlohmann::json json_number(double x) {
  if (std::isfinite(x)) return x;
  return format_number(x);
}

double number_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw Error("expected a number in JSON, found " + j.dump());
}

void write_phi_csv(const std::filesystem::path& path, const PhiEstimate& est) {
  auto out = open_out(path);
  out << "u" << theta_header(est.num_treatments()) << ",residual_norm,status\n";
  for (std::size_t m = 0; m < est.size(); ++m) {
    out << format_number(est.u_grid[m]);
    for (std::size_t z = 0; z < est.num_treatments(); ++z) out << ',' << format_number(est.phi(z, m));
    out << ',' << format_number(est.residual_norm[m]) << ',' << to_string(est.status[m]) << '\n';
  }
}

void write_residual_csv(const std::filesystem::path& path, const PhiEstimate& est) {
  auto out = open_out(path);
  out << "u,residual_norm\n";
  for (std::size_t m = 0; m < est.size(); ++m)
    out << format_number(est.u_grid[m]) << ',' << format_number(est.residual_norm[m]) << '\n';
}

void write_ci_csv(const std::filesystem::path& path, const BootstrapResult& result) {
  auto out = open_out(path);
  out << "functional,u,point,lower,upper\n";
  for (const auto& e : result.entries) {
    out << '"' << e.functional << "\"," << (e.u ? format_number(*e.u) : std::string()) << ','
        << format_number(e.point) << ',' << format_number(e.lower) << ',' << format_number(e.upper) << '\n';
  }
}

nlohmann::json bootstrap_to_json(const BootstrapResult& result) {
  nlohmann::json j;
  j["B"] = result.B;
  j["seed"] = result.seed;
  j["redraws"] = result.redraws;
  j["asymmetric"] = std::count_if(result.entries.begin(), result.entries.end(),
                                  [](const BootstrapEntry& e) { return e.asymmetric; });
  auto bands = nlohmann::json::array();
  for (const auto& b : result.bands) bands.push_back({{"functional", b.functional}, {"half_width", json_number(b.half_width)}});
  j["uniform_bands"] = bands;
  return j;
}

nlohmann::json box_union_to_json(const BoxUnion& set) {
  nlohmann::json j;
  j["u"] = set.u;
  j["c0"] = set.c0;
  auto boxes = nlohmann::json::array();
  for (const auto& box : set.boxes) {
    auto sides = nlohmann::json::array();
    for (const auto& s : box.sides)
      sides.push_back({{"lo", json_number(s.lower)},
                       {"hi", json_number(s.upper)},
                       {"closed_lo", s.closed_lower},
                       {"closed_hi", s.closed_upper}});
    boxes.push_back(sides);
  }
  j["boxes"] = boxes;
  return j;
}

BoxUnion box_union_from_json(const nlohmann::json& j) {
  BoxUnion set;
  set.u = number_from_json(j.at("u"));
  set.c0 = number_from_json(j.at("c0"));
  for (const auto& jb : j.at("boxes")) {
    Box box;
    for (const auto& js : jb)
      box.sides.push_back({number_from_json(js.at("lo")), number_from_json(js.at("hi")),
                           js.at("closed_lo").get<bool>(), js.at("closed_hi").get<bool>()});
    if (set.dimension == 0) set.dimension = box.sides.size();
    else if (set.dimension != box.sides.size()) throw Error("boxes of different dimension");
    set.boxes.push_back(std::move(box));
  }
  return set;
}

void write_box_corners_csv(const std::filesystem::path& path, const std::vector<BoxUnion>& sets) {
  auto out = open_out(path);
  std::size_t L = 0;
  for (const auto& s : sets) L = std::max(L, s.dimension);
  out << "u,box";
  for (std::size_t l = 1; l <= L; ++l) out << ",theta_" << l << "_lo,theta_" << l << "_hi";
  out << '\n';
  for (const auto& s : sets) {
    for (std::size_t b = 0; b < s.boxes.size(); ++b) {
      out << format_number(s.u) << ',' << b;
      for (const auto& side : s.boxes[b].sides) out << ',' << format_number(side.lower) << ',' << format_number(side.upper);
      out << '\n';
    }
  }
}

nlohmann::json breakpoint_to_json(const BreakpointReport& report) {
  nlohmann::json j;
  j["u0_hat"] = report.u0_hat ? nlohmann::json(*report.u0_hat) : nlohmann::json(nullptr);
  j["baseline"] = report.baseline;
  j["threshold"] = report.threshold;
  j["kappa"] = report.options.kappa;
  j["baseline_fraction"] = report.options.baseline_fraction;
  j["boundary_fraction"] = report.options.boundary_fraction;
  return j;
}

nlohmann::json study_summary_json(const ReplicationSummary& s) {
  nlohmann::json j;
  j["replications"] = s.replications;
  j["mae_phi0"] = json_number(s.mae_phi0);
  j["mae_phi1"] = json_number(s.mae_phi1);
  j["mae_naive0"] = json_number(s.mae_naive0);
  j["mae_naive1"] = json_number(s.mae_naive1);
  j["mean_censored_fraction"] = s.mean_censored_fraction;
  j["detection_rate"] = s.detection_rate;
  j["breakpoint_none"] = s.breakpoint_none;
  auto bps = nlohmann::json::array();
  for (const auto& b : s.breakpoints) bps.push_back(b ? nlohmann::json(*b) : nlohmann::json(nullptr));
  j["breakpoints"] = bps;
  std::size_t boundary = 0, failed = 0;
  for (auto c : s.boundary_count) boundary += c;
  for (auto c : s.failed_count) failed += c;
  j["boundary_points"] = boundary;
  j["failed_points"] = failed;
  if (s.bootstrap_run) {
    nlohmann::json cov;
    for (std::size_t f = 0; f < kCoverageFunctionals; ++f) {
      auto arr = nlohmann::json::array();
      for (std::size_t p = 0; p < s.coverage_u.size(); ++p) arr.push_back({{"u", s.coverage_u[p]}, {"covered", s.covered[f][p]}, {"rate", s.coverage[f][p]}});
      cov[kCoverageNames[f]] = arr;
    }
    j["coverage"] = cov;
  }
  return j;
}

void write_study_outputs(const std::filesystem::path& dir, const ReplicationSummary& s, const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "fig_residual.csv");
    out << "u,mean_residual_norm,boundary,failed\n";
    for (std::size_t m = 0; m < s.u_grid.size(); ++m)
      out << format_number(s.u_grid[m]) << ',' << format_number(s.mean_residual_norm[m]) << ','
          << s.boundary_count[m] << ',' << s.failed_count[m] << '\n';
  }
  auto curve = [&](const char* name, const std::vector<double>& truth, const std::vector<double>& mean,
                   const std::vector<double>* naive) {
    auto out = open_out(dir / name);
    out << "u,truth,mean_estimate" << (naive ? ",mean_naive" : "") << '\n';
    for (std::size_t m = 0; m < s.u_grid.size(); ++m) {
      out << format_number(s.u_grid[m]) << ',' << format_number(truth[m]) << ',' << format_number(mean[m]);
      if (naive) out << ',' << format_number((*naive)[m]);
      out << '\n';
    }
  };
  curve("fig_phi0.csv", s.truth_phi0, s.mean_phi0, &s.mean_naive0);
  curve("fig_phi1.csv", s.truth_phi1, s.mean_phi1, &s.mean_naive1);
  curve("fig_qte.csv", s.truth_qte, s.mean_qte, nullptr);
  if (s.bootstrap_run) {
    for (std::size_t f = 0; f < kCoverageFunctionals; ++f) {
      auto out = open_out(dir / (std::string("fig_coverage_") + kCoverageNames[f] + ".csv"));
      out << "u,coverage,mean_lower,mean_upper\n";
      for (std::size_t p = 0; p < s.coverage_u.size(); ++p)
        out << format_number(s.coverage_u[p]) << ',' << format_number(s.coverage[f][p]) << ','
            << format_number(s.mean_lower[f][p]) << ',' << format_number(s.mean_upper[f][p]) << '\n';
    }
  }
  nlohmann::json j = study_summary_json(s);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_json(dir / "summary.json", j);
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  auto out = open_out(path);
  out << text;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace ivdur
