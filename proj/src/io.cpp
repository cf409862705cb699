#include "rkb/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rkb/error.hpp"

namespace rkb {

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error(ErrorCode::missing_key, "CSV has no column '" + name + "'");
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void write_csv(std::ostream& out, const CsvTable& table) {
  for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_number(row[i]);
    out << '\n';
  }
}

void write_csv_file(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  write_csv(out, table);
  if (!out) throw Error(ErrorCode::io, "write failed for " + path);
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) {
    const auto a = cell.find_first_not_of(" \t\r");
    const auto b = cell.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
  }
  return out;
}

bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split(line, ',');
    if (t.header.empty()) {
      t.header = cells;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw Error(ErrorCode::dimension_mismatch, "CSV line " + std::to_string(lineno) + " has " +
                                                     std::to_string(cells.size()) + " cells, expected " +
                                                     std::to_string(t.header.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!parse_double(cells[i], row[i])) {
        throw Error(ErrorCode::invalid_value, "CSV line " + std::to_string(lineno) + ": '" + cells[i] + "' is not a number");
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path);
  return read_csv(in);
}

Mat observations_from_csv(const CsvTable& table, const TimeGrid& grid, std::size_t m) {
  if (table.header.size() != m + 1) {
    throw Error(ErrorCode::dimension_mismatch, "observation CSV needs columns t and " + std::to_string(m) + " observation(s)");
  }
  if (table.rows.size() != grid.points()) {
    throw Error(ErrorCode::grid_mismatch, "observation CSV has " + std::to_string(table.rows.size()) +
                                              " rows, grid has " + std::to_string(grid.points()) + " points");
  }
  Mat obs(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(grid.points()));
  for (std::size_t k = 0; k < grid.points(); ++k) {
    const auto& row = table.rows[k];
    if (std::abs(row[0] - grid.time(k)) > 1e-9 * (1.0 + grid.horizon())) {
      throw Error(ErrorCode::grid_mismatch, "observation row " + std::to_string(k) + " has t = " + format_number(row[0]) +
                                                ", expected " + format_number(grid.time(k)));
    }
    for (std::size_t j = 0; j < m; ++j) obs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = row[j + 1];
  }
  return obs;
}

CsvTable observations_to_csv(const Mat& observations, const TimeGrid& grid) {
  CsvTable t;
  t.header.push_back("t");
  for (Eigen::Index j = 0; j < observations.rows(); ++j) t.header.push_back("m" + std::to_string(j + 1));
  for (std::size_t k = 0; k < grid.points(); ++k) {
    std::vector<double> row{grid.time(k)};
    for (Eigen::Index j = 0; j < observations.rows(); ++j) row.push_back(observations(j, static_cast<Eigen::Index>(k)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

ThetaPath parse_theta_spec(const std::string& spec, std::size_t n, std::size_t m, const TimeGrid& grid) {
  const auto ni = static_cast<Eigen::Index>(n), mi = static_cast<Eigen::Index>(m);
  if (spec == "zero") return ThetaPath::zero(n, m, grid.points());
  if (spec.rfind("const:", 0) == 0) {
    const auto cells = split(spec.substr(6), ',');
    if (cells.size() != n + m) {
      throw Error(ErrorCode::dimension_mismatch, "const theta needs " + std::to_string(n + m) + " values");
    }
    Vec t1(ni), t2(mi);
    for (std::size_t i = 0; i < n + m; ++i) {
      double v = 0.0;
      if (!parse_double(cells[i], v)) throw Error(ErrorCode::invalid_value, "bad theta value '" + cells[i] + "'");
      (i < n ? t1(static_cast<Eigen::Index>(i)) : t2(static_cast<Eigen::Index>(i - n))) = v;
    }
    return ThetaPath::constant(t1, t2, grid.points());
  }
  if (spec.rfind("file:", 0) == 0) {
    const CsvTable table = read_csv_file(spec.substr(5));
    if (table.header.size() != 1 + n + m) {
      throw Error(ErrorCode::dimension_mismatch, "theta file needs columns t, theta1 (" + std::to_string(n) +
                                                     "), theta2 (" + std::to_string(m) + ")");
    }
    if (table.rows.size() != grid.points()) throw Error(ErrorCode::grid_mismatch, "theta file must list every grid point");
    std::vector<Vec> t1, t2;
    for (std::size_t k = 0; k < grid.points(); ++k) {
      const auto& row = table.rows[k];
      if (std::abs(row[0] - grid.time(k)) > 1e-9 * (1.0 + grid.horizon())) {
        throw Error(ErrorCode::grid_mismatch, "theta file row " + std::to_string(k) + " is off the grid");
      }
      Vec a(ni), b(mi);
      for (std::size_t i = 0; i < n; ++i) a(static_cast<Eigen::Index>(i)) = row[1 + i];
      for (std::size_t j = 0; j < m; ++j) b(static_cast<Eigen::Index>(j)) = row[1 + n + j];
      t1.push_back(a);
      t2.push_back(b);
    }
    return ThetaPath::deterministic(std::move(t1), std::move(t2));
  }
  throw Error(ErrorCode::invalid_value, "theta spec must be zero, const:... or file:PATH, got '" + spec + "'");
}

namespace {

Vec json_vector(const nlohmann::json& j, const std::string& name) {
  if (!j.is_array()) throw Error(ErrorCode::invalid_value, name + " must be an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorCode::invalid_value, name + " must hold numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

const nlohmann::json& need(const nlohmann::json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) throw Error(ErrorCode::missing_key, std::string("finite space is missing '") + key + "'");
  return *it;
}

}  // namespace

FiniteSpace parse_finite_space(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::invalid_value, std::string("finite space does not parse: ") + e.what());
  }
  FiniteSpace s;
  s.op.prob = json_vector(need(doc, "prob"), "prob");
  const auto& dens = need(doc, "densities");
  if (!dens.is_array()) throw Error(ErrorCode::invalid_value, "densities must be an array of arrays");
  for (std::size_t i = 0; i < dens.size(); ++i) s.op.densities.push_back(json_vector(dens[i], "densities"));
  s.op.penalties = json_vector(need(doc, "penalties"), "penalties");
  if (auto it = doc.find("p"); it != doc.end()) {
    s.op.p = it->get<double>();
    s.op.q = s.op.p / (s.op.p - 1.0);
  }
  std::vector<std::size_t> labels;
  if (auto it = doc.find("partition"); it != doc.end()) {
    for (const auto& l : *it) {
      if (!l.is_number_integer() || l.get<long long>() < 0) {
        throw Error(ErrorCode::invalid_value, "partition labels must be non-negative integers");
      }
      labels.push_back(l.get<std::size_t>());
    }
    if (labels.size() != s.op.size()) throw Error(ErrorCode::dimension_mismatch, "one partition label per state required");
    s.C = Partition::from_labels(labels);
  } else {
    s.C = Partition::trivial(s.op.size());
  }
  if (auto it = doc.find("xi"); it != doc.end()) s.xi = json_vector(*it, "xi");
  s.op.validate(false);
  return s;
}

FiniteSpace load_finite_space(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_finite_space(ss.str());
}

Vec read_vector_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path);
  std::vector<double> values;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    const auto cells = split(line, ',');
    if (cells.empty() || cells[0].empty()) continue;
    double v = 0.0;
    if (!parse_double(cells[0], v)) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw Error(ErrorCode::invalid_value, "'" + cells[0] + "' is not a number in " + path);
    }
    first = false;
    values.push_back(v);
  }
  return Eigen::Map<Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

namespace {

void round_numbers(Report& j) {
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (std::isfinite(v)) j = std::strtod(format_number(v).c_str(), nullptr);
  } else if (j.is_structured()) {
    for (auto& child : j) round_numbers(child);
  }
}

}  // namespace

std::string emit_report(const Report& report) {
  Report copy = report;
  round_numbers(copy);
  return copy.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::io, "write failed for " + path);
}

nlohmann::ordered_json to_json(const Vec& v) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (double x : v) out.push_back(x);
  return out;
}

}  // namespace rkb
