#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ivdur/dataset.hpp"
#include "ivdur/estimator.hpp"
#include "ivdur/inference.hpp"
#include "ivdur/partial_id.hpp"
#include "ivdur/sim.hpp"

namespace ivdur {

// CSV with a header naming the columns y, z, w, delta (any order; other
// columns are ignored). z and w are labels, catalogued in order of first
// appearance. Errors carry the 1-based line number.
Dataset parse_dataset_csv(std::istream& in);
Dataset read_dataset_csv(const std::filesystem::path& path);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);

// Shortest round-trip decimal; "inf", "-inf" and "nan" for non-finite values.
std::string format_number(double x);

// A number, or the strings "inf"/"-inf" where JSON has no literal.
nlohmann::json json_number(double x);
double number_from_json(const nlohmann::json& j);

// u, theta_1..theta_L, residual_norm, status
void write_phi_csv(const std::filesystem::path& path, const PhiEstimate& estimate);
// u, residual_norm
void write_residual_csv(const std::filesystem::path& path, const PhiEstimate& estimate);

// functional, u, point, lower, upper
void write_ci_csv(const std::filesystem::path& path, const BootstrapResult& result);
nlohmann::json bootstrap_to_json(const BootstrapResult& result);

nlohmann::json box_union_to_json(const BoxUnion& set);
BoxUnion box_union_from_json(const nlohmann::json& j);
// One row per box: u, box, theta_l_lo, theta_l_hi for each l.
void write_box_corners_csv(const std::filesystem::path& path, const std::vector<BoxUnion>& sets);

nlohmann::json breakpoint_to_json(const BreakpointReport& report);

// fig_residual.csv, fig_phi0.csv, fig_phi1.csv, fig_qte.csv,
// fig_coverage_<functional>.csv and summary.json.
void write_study_outputs(const std::filesystem::path& dir, const ReplicationSummary& summary,
                         const nlohmann::json& extra = nlohmann::json::object());
nlohmann::json study_summary_json(const ReplicationSummary& summary);

void write_text(const std::filesystem::path& path, std::string_view text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace ivdur
