#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "rkb/mmse.hpp"
#include "rkb/model.hpp"
#include "rkb/sde.hpp"

namespace rkb {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  // Index of a named column; throws MissingKey.
  std::size_t column(const std::string& name) const;
};

// Numbers are written with 12 significant digits.
std::string format_number(double v);
void write_csv(std::ostream& out, const CsvTable& table);
void write_csv_file(const std::string& path, const CsvTable& table);
CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

// Observation table with columns t, m1..m_m on the grid points. Returns m x (N+1).
Mat observations_from_csv(const CsvTable& table, const TimeGrid& grid, std::size_t m);
CsvTable observations_to_csv(const Mat& observations, const TimeGrid& grid);

// "zero", "const:a_1,...,a_{n+m}" (theta1 then theta2) or "file:PATH" with
// columns t, theta1_1.., theta2_1.. on the grid.
ThetaPath parse_theta_spec(const std::string& spec, std::size_t n, std::size_t m, const TimeGrid& grid);

// Finite space document: {"prob": [...], "densities": [[...], ...],
// "penalties": [...], "partition": [block label per state], "p": 2}.
struct FiniteSpace {
  FiniteConvexOperator op;
  Partition C;
  Vec xi;  // optional "xi" entry, empty when absent
};

FiniteSpace parse_finite_space(const std::string& text);
FiniteSpace load_finite_space(const std::string& path);
// Single column of values, with or without a header line.
Vec read_vector_csv(const std::string& path);

using Report = nlohmann::ordered_json;

// Every floating-point value rounded to 12 significant digits, keys in
// insertion order, two-space indent.
std::string emit_report(const Report& report);
void write_text_file(const std::string& path, const std::string& text);

nlohmann::ordered_json to_json(const Vec& v);

}  // namespace rkb
