#include "ivdur/dataset.hpp"

#include <cmath>

#include "ivdur/errors.hpp"

namespace ivdur {

Dataset::Dataset(std::vector<ObservationRecord> records, std::vector<std::string> z_levels,
                 std::vector<std::string> w_levels)
    : records_(std::move(records)), z_levels_(std::move(z_levels)), w_levels_(std::move(w_levels)) {
  if (records_.empty()) throw DataError(0, "dataset has no records");
  if (z_levels_.empty() || w_levels_.empty()) throw DataError(0, "empty level catalog");
  const std::size_t K = w_levels_.size();
  cell_counts_.assign(z_levels_.size() * K, 0);
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (!std::isfinite(r.y) || r.y < 0.0)
      throw DataError(0, "record " + std::to_string(i) + ": duration must be finite and >= 0");
    if (r.z >= z_levels_.size() || r.w >= K)
      throw DataError(0, "record " + std::to_string(i) + ": level index outside catalog");
    if (r.delta != 0 && r.delta != 1)
      throw DataError(0, "record " + std::to_string(i) + ": delta must be 0 or 1");
    ++cell_counts_[r.z * K + r.w];
  }
}

std::size_t Dataset::cell_count(std::size_t z, std::size_t w) const {
  return cell_counts_.at(z * num_instruments() + w);
}

std::size_t Dataset::instrument_count(std::size_t w) const {
  std::size_t n = 0;
  for (std::size_t z = 0; z < num_treatments(); ++z) n += cell_count(z, w);
  return n;
}

std::size_t Dataset::treatment_count(std::size_t z) const {
  std::size_t n = 0;
  for (std::size_t w = 0; w < num_instruments(); ++w) n += cell_count(z, w);
  return n;
}

std::vector<std::pair<std::size_t, std::size_t>> Dataset::empty_cells() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t z = 0; z < num_treatments(); ++z)
    for (std::size_t w = 0; w < num_instruments(); ++w)
      if (cell_count(z, w) == 0) out.emplace_back(z, w);
  return out;
}

double Dataset::censored_fraction() const {
  std::size_t c = 0;
  for (const auto& r : records_) c += (r.delta == 0);
  return static_cast<double>(c) / static_cast<double>(records_.size());
}

}  // namespace ivdur
