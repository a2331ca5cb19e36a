#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dvlab/rds_core.hpp"

namespace dvlab {

/// Shortest round-trip decimal form with at least 15 significant digits.
std::string format_double(double v);

/// RFC-4180 CSV writer with '\n' line endings and '.' decimals.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, const std::vector<std::string>& header);

  CsvWriter& cell(const std::string& s);
  CsvWriter& cell(double v);
  CsvWriter& cell(long v);
  CsvWriter& cell(int v) { return cell(static_cast<long>(v)); }
  CsvWriter& cell(std::size_t v) { return cell(static_cast<long>(v)); }
  void end_row();

 private:
  std::ostream& out_;
  std::size_t columns_;
  std::size_t filled_ = 0;
};

/// Columns: k, x_0, x_1, ... (k = 1..n).
void write_trajectory_csv(std::ostream& out, std::span<const Point> trajectory);

/// Columns: weight, x_0, x_1, ...
void write_measure_csv(std::ostream& out, const EmpiricalMeasure& measure);

/// Version string baked in at build time (git describe when available).
const char* code_version();

}  // namespace dvlab
