#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace ivdur {

// One right-censored observation: y = min(T, C), delta = 1{T <= C}.
struct ObservationRecord {
  double y = 0.0;
  std::size_t z = 0;  // index into the treatment catalog
  std::size_t w = 0;  // index into the instrument catalog
  int delta = 1;
};

class Dataset {
 public:
  Dataset() = default;

  // Throws DataError if a record violates the record invariants or the
  // catalogs, or if there are no records.
  Dataset(std::vector<ObservationRecord> records, std::vector<std::string> z_levels,
          std::vector<std::string> w_levels);

  const std::vector<ObservationRecord>& records() const noexcept { return records_; }
  const std::vector<std::string>& z_levels() const noexcept { return z_levels_; }
  const std::vector<std::string>& w_levels() const noexcept { return w_levels_; }

  std::size_t size() const noexcept { return records_.size(); }
  std::size_t num_treatments() const noexcept { return z_levels_.size(); }
  std::size_t num_instruments() const noexcept { return w_levels_.size(); }

  std::size_t cell_count(std::size_t z, std::size_t w) const;
  std::size_t instrument_count(std::size_t w) const;
  std::size_t treatment_count(std::size_t z) const;

  // (z, w) pairs with no observations.
  std::vector<std::pair<std::size_t, std::size_t>> empty_cells() const;

  double censored_fraction() const;

 private:
  std::vector<ObservationRecord> records_;
  std::vector<std::string> z_levels_;
  std::vector<std::string> w_levels_;
  std::vector<std::size_t> cell_counts_;  // z * K + w
};

}  // namespace ivdur
