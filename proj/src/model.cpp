#include "rkb/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "rkb/error.hpp"
#include "rkb/gexp.hpp"

namespace rkb {

using nlohmann::json;

TimeGrid::TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw Error(ErrorCode::invalid_value, "time grid horizon T must be positive, got " + std::to_string(horizon));
  }
  if (steps < 2) {
    throw Error(ErrorCode::invalid_value, "time grid needs N >= 2 steps, got " + std::to_string(steps));
  }
}

std::size_t TimeGrid::index_of(double t) const {
  const double x = t / dt();
  const double k = std::round(x);
  if (k < 0 || k > static_cast<double>(steps_) || std::abs(x - k) > 1e-9) {
    throw Error(ErrorCode::grid_mismatch, "time " + std::to_string(t) + " is not a grid point");
  }
  return static_cast<std::size_t>(k);
}

ModelCoefficients ModelCoefficients::constant(const TimeGrid& grid, const Mat& B, const Mat& H, const Vec& b,
                                              const Vec& h, const Mat& Q, const Mat& R, const Vec& x0) {
  ModelCoefficients mc;
  mc.n = static_cast<std::size_t>(B.rows());
  mc.m = static_cast<std::size_t>(H.rows());
  const std::size_t np = grid.points();
  mc.B.assign(np, B);
  mc.H.assign(np, H);
  mc.b.assign(np, b);
  mc.h.assign(np, h);
  mc.Q.assign(np, Q);
  mc.R.assign(np, R);
  mc.x0 = x0;
  return mc;
}

ModelCoefficients ModelCoefficients::scalar(const TimeGrid& grid, double B, double H, double b, double h,
                                            double Q, double R, double x0) {
  return constant(grid, Mat::Constant(1, 1, B), Mat::Constant(1, 1, H), Vec::Constant(1, b),
                  Vec::Constant(1, h), Mat::Constant(1, 1, Q), Mat::Constant(1, 1, R), Vec::Constant(1, x0));
}

namespace {

template <class T>
bool same_path(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols() || a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

bool ModelCoefficients::operator==(const ModelCoefficients& o) const {
  return n == o.n && m == o.m && same_path(B, o.B) && same_path(H, o.H) && same_path(b, o.b) &&
         same_path(h, o.h) && same_path(Q, o.Q) && same_path(R, o.R) && x0.size() == o.x0.size() &&
         x0 == o.x0;
}

std::vector<Violation> validate(const ModelCoefficients& model, const TimeGrid& grid,
                                const ValidationLimits& limits) {
  std::vector<Violation> out;
  const std::size_t np = grid.points();
  const auto n = static_cast<Eigen::Index>(model.n);
  const auto m = static_cast<Eigen::Index>(model.m);

  auto shape_check = [&](const char* name, const auto& path, Eigen::Index rows, Eigen::Index cols) {
    if (path.size() != np) {
      out.push_back({name, 0, static_cast<double>(path.size()),
                     std::string(name) + " has " + std::to_string(path.size()) + " grid values, expected " +
                         std::to_string(np)});
      return false;
    }
    for (std::size_t k = 0; k < path.size(); ++k) {
      if (path[k].rows() != rows || path[k].cols() != cols) {
        out.push_back({name, k, 0.0,
                       std::string(name) + " has shape " + std::to_string(path[k].rows()) + "x" +
                           std::to_string(path[k].cols()) + ", expected " + std::to_string(rows) + "x" +
                           std::to_string(cols)});
        return false;
      }
    }
    return true;
  };

  const bool shapes_ok = shape_check("B", model.B, n, n) & shape_check("H", model.H, m, n) &
                         shape_check("b", model.b, n, 1) & shape_check("h", model.h, m, 1) &
                         shape_check("Q", model.Q, n, n) & shape_check("R", model.R, m, m);
  if (model.x0.size() != n) {
    out.push_back({"x0", 0, static_cast<double>(model.x0.size()), "x0 has wrong dimension"});
  }
  if (!shapes_ok) return out;

  // Track the first offending index and the worst magnitude per (field, kind).
  struct Tracker {
    bool hit = false;
    std::size_t first = 0;
    double worst = 0.0;
    void see(std::size_t k, double mag, bool larger_is_worse) {
      if (!hit) {
        hit = true;
        first = k;
        worst = mag;
      } else if (larger_is_worse ? mag > worst : mag < worst) {
        worst = mag;
      }
    }
  };
  Tracker r_asym, r_pd, q_asym, q_psd, bound, finite;
  std::string bound_field;
  for (std::size_t k = 0; k < np; ++k) {
    const double ra = asymmetry(model.R[k]);
    if (ra > limits.symmetry_tol) r_asym.see(k, ra, true);
    const double rmin = min_eigenvalue(model.R[k]);
    if (!(rmin >= limits.delta_r)) r_pd.see(k, rmin, false);
    const double qa = asymmetry(model.Q[k]);
    if (qa > limits.symmetry_tol) q_asym.see(k, qa, true);
    const double qmin = min_eigenvalue(model.Q[k]);
    if (qmin < -limits.psd_tol) q_psd.see(k, qmin, false);

    const std::pair<const char*, double> norms[] = {
        {"B", model.B[k].cwiseAbs().maxCoeff()}, {"H", model.H[k].cwiseAbs().maxCoeff()},
        {"b", model.b[k].size() ? model.b[k].cwiseAbs().maxCoeff() : 0.0},
        {"h", model.h[k].size() ? model.h[k].cwiseAbs().maxCoeff() : 0.0},
        {"Q", model.Q[k].cwiseAbs().maxCoeff()}, {"R", model.R[k].cwiseAbs().maxCoeff()}};
    for (const auto& [name, v] : norms) {
      if (!std::isfinite(v)) {
        if (!finite.hit) bound_field = name;
        finite.see(k, v, true);
      } else if (v > limits.coef_bound) {
        if (!bound.hit) bound_field = name;
        bound.see(k, v, true);
      }
    }
  }
  if (r_asym.hit) out.push_back({"R", r_asym.first, r_asym.worst, "R is not symmetric"});
  if (r_pd.hit) {
    out.push_back({"R", r_pd.first, r_pd.worst,
                   "R is not uniformly positive definite (smallest eigenvalue " + std::to_string(r_pd.worst) +
                       " at grid index " + std::to_string(r_pd.first) + ")"});
  }
  if (q_asym.hit) out.push_back({"Q", q_asym.first, q_asym.worst, "Q is not symmetric"});
  if (q_psd.hit) {
    out.push_back({"Q", q_psd.first, q_psd.worst,
                   "Q has negative eigenvalue " + std::to_string(q_psd.worst) + " at grid index " +
                       std::to_string(q_psd.first)});
  }
  if (finite.hit) out.push_back({bound_field, finite.first, finite.worst, "non-finite coefficient"});
  if (bound.hit) {
    out.push_back({bound_field, bound.first, bound.worst,
                   "coefficient magnitude exceeds bound " + std::to_string(limits.coef_bound)});
  }
  if (model.x0.size() == n && !model.x0.allFinite()) {
    out.push_back({"x0", 0, 0.0, "x0 is not finite"});
  }
  return out;
}

std::string format_violations(const std::vector<Violation>& violations) {
  std::ostringstream os;
  for (const auto& v : violations) {
    os << v.field << "[" << v.grid_index << "]: " << v.message << " (magnitude " << v.magnitude << ")\n";
  }
  return os.str();
}

namespace {

const json& require(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) throw Error(ErrorCode::missing_key, std::string("missing required key '") + key + "'");
  return *it;
}

double as_number(const json& j, const std::string& what) {
  if (!j.is_number()) throw Error(ErrorCode::invalid_value, what + " must be a number");
  return j.get<double>();
}

Mat parse_matrix(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  if (j.is_number()) {
    if (rows != 1 || cols != 1) {
      throw Error(ErrorCode::dimension_mismatch,
                  name + " given as scalar but expected " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    return Mat::Constant(1, 1, j.get<double>());
  }
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw Error(ErrorCode::dimension_mismatch, name + " must have " + std::to_string(rows) + " rows");
  }
  Mat out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (row.is_number() && cols == 1) {
      out(r, 0) = row.get<double>();
      continue;
    }
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorCode::dimension_mismatch, name + " row " + std::to_string(r) + " must have " +
                                                     std::to_string(cols) + " columns");
    }
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = as_number(row[static_cast<std::size_t>(c)], name);
  }
  return out;
}

Vec parse_vector(const json& j, Eigen::Index size, const std::string& name) {
  if (j.is_number()) {
    if (size != 1) throw Error(ErrorCode::dimension_mismatch, name + " given as scalar but expected length " + std::to_string(size));
    return Vec::Constant(1, j.get<double>());
  }
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size) {
    throw Error(ErrorCode::dimension_mismatch, name + " must have length " + std::to_string(size));
  }
  Vec out(size);
  for (Eigen::Index i = 0; i < size; ++i) out(i) = as_number(j[static_cast<std::size_t>(i)], name);
  return out;
}

// A coefficient is either a constant value or {"path": [v_0, ..., v_N]}.
template <class Parse>
auto parse_path(const json& j, std::size_t points, const std::string& name, Parse parse)
    -> std::vector<decltype(parse(j))> {
  if (j.is_object()) {
    const json& values = require(j, "path");
    if (!values.is_array() || values.size() != points) {
      throw Error(ErrorCode::dimension_mismatch,
                  name + ".path must list " + std::to_string(points) + " grid values");
    }
    std::vector<decltype(parse(j))> out;
    out.reserve(points);
    for (const auto& v : values) out.push_back(parse(v));
    return out;
  }
  return std::vector<decltype(parse(j))>(points, parse(j));
}

json matrix_json(const Mat& m) {
  if (m.rows() == 1 && m.cols() == 1) return m(0, 0);
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json vector_json(const Vec& v) {
  if (v.size() == 1) return v(0);
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

template <class T, class ToJson>
json path_json(const std::vector<T>& path, ToJson to_json) {
  bool constant = true;
  for (const auto& v : path) constant = constant && v == path.front();
  if (constant && !path.empty()) return to_json(path.front());
  json values = json::array();
  for (const auto& v : path) values.push_back(to_json(v));
  return json{{"path", values}};
}

}  // namespace

Config load_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::invalid_value, std::string("config does not parse: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::invalid_value, "config must be a JSON object");

  const double n_raw = as_number(require(doc, "n"), "n");
  const double m_raw = as_number(require(doc, "m"), "m");
  if (n_raw < 1 || m_raw < 1 || n_raw != std::floor(n_raw) || m_raw != std::floor(m_raw)) {
    throw Error(ErrorCode::invalid_value, "dimensions n and m must be positive integers");
  }
  const double N_raw = as_number(require(doc, "N"), "N");
  if (N_raw != std::floor(N_raw) || N_raw < 0) throw Error(ErrorCode::invalid_value, "N must be a non-negative integer");
  const TimeGrid grid(as_number(require(doc, "T"), "T"), static_cast<std::size_t>(N_raw));

  const auto n = static_cast<Eigen::Index>(n_raw);
  const auto m = static_cast<Eigen::Index>(m_raw);
  const std::size_t np = grid.points();

  Config cfg{ModelCoefficients{}, grid, AmbiguityBound{}, RunSettings{}};
  ModelCoefficients& mc = cfg.model;
  mc.n = static_cast<std::size_t>(n);
  mc.m = static_cast<std::size_t>(m);
  mc.B = parse_path(require(doc, "B"), np, "B", [&](const json& j) { return parse_matrix(j, n, n, "B"); });
  mc.H = parse_path(require(doc, "H"), np, "H", [&](const json& j) { return parse_matrix(j, m, n, "H"); });
  mc.b = parse_path(require(doc, "b"), np, "b", [&](const json& j) { return parse_vector(j, n, "b"); });
  mc.h = parse_path(require(doc, "h"), np, "h", [&](const json& j) { return parse_vector(j, m, "h"); });
  mc.Q = parse_path(require(doc, "Q"), np, "Q", [&](const json& j) { return parse_matrix(j, n, n, "Q"); });
  mc.R = parse_path(require(doc, "R"), np, "R", [&](const json& j) { return parse_matrix(j, m, m, "R"); });
  mc.x0 = parse_vector(require(doc, "x0"), n, "x0");

  cfg.ambiguity.mu = as_number(require(doc, "mu"), "mu");
  cfg.ambiguity.epsilon = as_number(require(doc, "epsilon"), "epsilon");
  if (!(cfg.ambiguity.mu >= 0.0)) throw Error(ErrorCode::invalid_value, "mu must be >= 0");
  if (!(cfg.ambiguity.epsilon > 0.0 && cfg.ambiguity.epsilon < 1.0)) {
    throw Error(ErrorCode::invalid_value, "epsilon must lie in (0, 1)");
  }

  RunSettings& rs = cfg.settings;
  if (auto it = doc.find("seed"); it != doc.end()) rs.seed = it->get<std::uint64_t>();
  if (auto it = doc.find("n_paths"); it != doc.end()) rs.n_paths = it->get<std::size_t>();
  if (auto it = doc.find("n_particles"); it != doc.end()) rs.n_particles = it->get<std::size_t>();
  if (auto it = doc.find("generator"); it != doc.end()) rs.generator = it->get<std::string>();
  if (auto it = doc.find("delta_R"); it != doc.end()) rs.delta_r = as_number(*it, "delta_R");
  if (auto it = doc.find("coef_bound"); it != doc.end()) rs.coef_bound = as_number(*it, "coef_bound");
  if (auto it = doc.find("gap_tol"); it != doc.end()) rs.gap_tol = as_number(*it, "gap_tol");
  if (auto it = doc.find("threads"); it != doc.end()) rs.threads = it->get<int>();
  if (auto it = doc.find("out_dir"); it != doc.end()) rs.out_dir = it->get<std::string>();
  if (!(rs.delta_r > 0) || !(rs.coef_bound > 0) || !(rs.gap_tol > 0)) {
    throw Error(ErrorCode::invalid_value, "tolerances must be positive");
  }

  const auto violations = validate(mc, grid, ValidationLimits{rs.delta_r, rs.coef_bound, 1e-12, 1e-12});
  if (!violations.empty()) {
    bool pd = false;
    for (const auto& v : violations) pd = pd || (v.field == "R" && v.message.find("positive definite") != std::string::npos);
    throw Error(pd ? ErrorCode::not_positive_definite : ErrorCode::invalid_value, format_violations(violations));
  }

  // The prior box must sit inside the effective domain of the dual, otherwise
  // part of the prior set carries an infinite penalty.
  const Generator g = parse_generator(rs.generator);
  const ConcaveDual dual = concave_dual(g, mc.n, mc.m);
  if (cfg.ambiguity.mu > dual.domain_radius() + 1e-12) {
    throw Error(ErrorCode::invalid_value, "mu = " + std::to_string(cfg.ambiguity.mu) +
                                              " exceeds the domain radius " + std::to_string(dual.domain_radius()) +
                                              " of generator '" + rs.generator + "'");
  }
  return cfg;
}

Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_config(ss.str());
}

std::string serialize_config(const Config& cfg) {
  const ModelCoefficients& mc = cfg.model;
  nlohmann::ordered_json doc;
  doc["n"] = mc.n;
  doc["m"] = mc.m;
  doc["T"] = cfg.grid.horizon();
  doc["N"] = cfg.grid.steps();
  doc["B"] = path_json(mc.B, matrix_json);
  doc["H"] = path_json(mc.H, matrix_json);
  doc["b"] = path_json(mc.b, vector_json);
  doc["h"] = path_json(mc.h, vector_json);
  doc["Q"] = path_json(mc.Q, matrix_json);
  doc["R"] = path_json(mc.R, matrix_json);
  doc["x0"] = vector_json(mc.x0);
  doc["mu"] = cfg.ambiguity.mu;
  doc["epsilon"] = cfg.ambiguity.epsilon;
  const RunSettings& rs = cfg.settings;
  if (rs.seed) doc["seed"] = *rs.seed;
  doc["n_paths"] = rs.n_paths;
  doc["n_particles"] = rs.n_particles;
  doc["generator"] = rs.generator;
  doc["delta_R"] = rs.delta_r;
  doc["coef_bound"] = rs.coef_bound;
  doc["gap_tol"] = rs.gap_tol;
  doc["threads"] = rs.threads;
  doc["out_dir"] = rs.out_dir;
  return doc.dump(2);
}

CoefficientCache CoefficientCache::build(const ModelCoefficients& model) {
  CoefficientCache c;
  const std::size_t np = model.R.size();
  c.R_inv.reserve(np);
  c.Q_sqrt.reserve(np);
  c.R_sqrt.reserve(np);
  c.Q_inv_sqrt.reserve(np);
  c.R_inv_sqrt.reserve(np);
  for (std::size_t k = 0; k < np; ++k) {
    // Consecutive grid points usually share coefficients; reuse the factorization.
    if (k > 0 && model.R[k] == model.R[k - 1]) {
      c.R_inv.push_back(c.R_inv.back());
      c.R_sqrt.push_back(c.R_sqrt.back());
      c.R_inv_sqrt.push_back(c.R_inv_sqrt.back());
    } else {
      c.R_inv.push_back(spd_inverse(model.R[k]));
      c.R_sqrt.push_back(sym_sqrt(model.R[k]));
      c.R_inv_sqrt.push_back(sym_inv_sqrt(model.R[k]));
    }
    if (k > 0 && model.Q[k] == model.Q[k - 1]) {
      c.Q_sqrt.push_back(c.Q_sqrt.back());
      c.Q_inv_sqrt.push_back(c.Q_inv_sqrt.back());
    } else {
      c.Q_sqrt.push_back(sym_sqrt(model.Q[k]));
      c.Q_inv_sqrt.push_back(sym_inv_sqrt(model.Q[k]));
    }
  }
  return c;
}

}  // namespace rkb
