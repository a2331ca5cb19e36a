#include "dvlab/io.hpp"

#include <charconv>
#include <cmath>
#include <ostream>

#include "dvlab/errors.hpp"

#ifndef DVLAB_VERSION
#define DVLAB_VERSION "unknown"
#endif

namespace dvlab {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::ostream& out, const std::vector<std::string>& header)
    : out_(out), columns_(header.size()) {
  for (const auto& h : header) cell(h);
  end_row();
}

CsvWriter& CsvWriter::cell(const std::string& s) {
  if (filled_ == columns_) throw InvalidArgument("CSV row has more cells than the header");
  if (filled_ > 0) out_ << ',';
  if (s.find_first_of(",\"\r\n") != std::string::npos) {
    out_ << '"';
    for (char c : s) {
      if (c == '"') out_ << '"';
      out_ << c;
    }
    out_ << '"';
  } else {
    out_ << s;
  }
  ++filled_;
  return *this;
}

CsvWriter& CsvWriter::cell(double v) { return cell(format_double(v)); }

CsvWriter& CsvWriter::cell(long v) { return cell(std::to_string(v)); }

void CsvWriter::end_row() {
  if (filled_ != columns_) throw InvalidArgument("CSV row has fewer cells than the header");
  out_ << '\n';
  filled_ = 0;
}

namespace {

std::vector<std::string> coord_header(std::string first, std::size_t dim) {
  std::vector<std::string> h{std::move(first)};
  for (std::size_t i = 0; i < dim; ++i) h.push_back("x_" + std::to_string(i));
  return h;
}

}  // namespace

void write_trajectory_csv(std::ostream& out, std::span<const Point> trajectory) {
  const std::size_t dim = trajectory.empty() ? 0 : trajectory.front().coords.size();
  CsvWriter csv(out, coord_header("k", dim));
  long k = 1;
  for (const auto& p : trajectory) {
    csv.cell(k++);
    for (double c : p.coords) csv.cell(c);
    csv.end_row();
  }
}

void write_measure_csv(std::ostream& out, const EmpiricalMeasure& measure) {
  const std::size_t dim = measure.atoms().empty() ? 0 : measure.atoms().front().coords.size();
  CsvWriter csv(out, coord_header("weight", dim));
  for (const auto& a : measure.atoms()) {
    csv.cell(a.weight);
    for (double c : a.coords) csv.cell(c);
    csv.end_row();
  }
}

const char* code_version() { return DVLAB_VERSION; }

}  // namespace dvlab
