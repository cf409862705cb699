#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rkb/linalg.hpp"

namespace rkb {

// Uniform grid t_k = k T / N on [0, T].
class TimeGrid {
 public:
  TimeGrid(double horizon, std::size_t steps);

  double horizon() const { return horizon_; }
  std::size_t steps() const { return steps_; }
  std::size_t points() const { return steps_ + 1; }
  double dt() const { return horizon_ / static_cast<double>(steps_); }
  double time(std::size_t k) const { return horizon_ * static_cast<double>(k) / static_cast<double>(steps_); }

  // Grid index of t; throws GridMismatch unless t is a grid point.
  std::size_t index_of(double t) const;

  bool operator==(const TimeGrid&) const = default;

 private:
  double horizon_;
  std::size_t steps_;
};

// Linear system data, one value per grid point. Coefficients are held
// constant on [t_k, t_{k+1}).
struct ModelCoefficients {
  std::size_t n = 1;
  std::size_t m = 1;
  std::vector<Mat> B;  // n x n
  std::vector<Mat> H;  // m x n
  std::vector<Vec> b;  // n
  std::vector<Vec> h;  // m
  std::vector<Mat> Q;  // n x n, symmetric PSD
  std::vector<Mat> R;  // m x m, symmetric PD
  Vec x0;

  // Time-invariant coefficients replicated over `grid`.
  static ModelCoefficients constant(const TimeGrid& grid, const Mat& B, const Mat& H, const Vec& b,
                                    const Vec& h, const Mat& Q, const Mat& R, const Vec& x0);
  // Scalar n = m = 1 model.
  static ModelCoefficients scalar(const TimeGrid& grid, double B, double H, double b, double h,
                                  double Q, double R, double x0);

  bool operator==(const ModelCoefficients& other) const;
};

struct AmbiguityBound {
  double mu = 0.0;       // |theta_i(t)| <= mu
  double epsilon = 0.5;  // estimator space L^{2+epsilon}
  bool operator==(const AmbiguityBound&) const = default;
};

struct RunSettings {
  std::optional<std::uint64_t> seed;
  std::size_t n_paths = 10000;
  std::size_t n_particles = 2000;
  std::string generator = "zero";
  double delta_r = 1e-10;       // lower bound on eig(R)
  double coef_bound = 1e6;      // bound on every coefficient entry
  double gap_tol = 1e-8;        // saddle-gap numerical tolerance
  int threads = 1;
  std::string out_dir;
  bool operator==(const RunSettings&) const = default;
};

struct Config {
  ModelCoefficients model;
  TimeGrid grid{1.0, 2};
  AmbiguityBound ambiguity;
  RunSettings settings;
  bool operator==(const Config&) const = default;
};

struct Violation {
  std::string field;
  std::size_t grid_index = 0;
  double magnitude = 0.0;
  std::string message;
};

struct ValidationLimits {
  double delta_r = 1e-10;
  double coef_bound = 1e6;
  double symmetry_tol = 1e-12;
  double psd_tol = 1e-12;
};

// Checks every ModelCoefficients invariant; one entry per (field, kind),
// located at the first offending grid index with the worst magnitude.
std::vector<Violation> validate(const ModelCoefficients& model, const TimeGrid& grid,
                                const ValidationLimits& limits = {});

std::string format_violations(const std::vector<Violation>& violations);

Config load_config(std::string_view text);
Config load_config_file(const std::string& path);
std::string serialize_config(const Config& config);

// Cached per-grid-point factorizations used by the filters and simulators.
struct CoefficientCache {
  std::vector<Mat> R_inv;
  std::vector<Mat> Q_sqrt;
  std::vector<Mat> R_sqrt;
  std::vector<Mat> Q_inv_sqrt;
  std::vector<Mat> R_inv_sqrt;

  static CoefficientCache build(const ModelCoefficients& model);
};

}  // namespace rkb
