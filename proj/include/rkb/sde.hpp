#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "rkb/model.hpp"
#include "rkb/stats.hpp"

namespace rkb {

enum class Adaptedness { deterministic, observation_feedback, signal_feedback };

struct ThetaValue {
  Vec theta1;  // drift shift of the signal, length n
  Vec theta2;  // drift shift of the observation, length m
};

// Uncertainty parameter theta = (theta1, theta2) on the grid. Deterministic
// paths store their values; feedback paths evaluate a callback on the state
// available at t_k (the signal x for signal feedback, the observation m for
// observation feedback). Realized paths store per-path values of an
// F-adapted process and carry the signal_feedback tag.
class ThetaPath {
 public:
  using Feedback = std::function<ThetaValue(std::size_t k, double t, const Vec& state)>;

  static ThetaPath zero(std::size_t n, std::size_t m, std::size_t points);
  static ThetaPath constant(const Vec& theta1, const Vec& theta2, std::size_t points);
  static ThetaPath deterministic(std::vector<Vec> theta1, std::vector<Vec> theta2);
  static ThetaPath feedback(Adaptedness tag, std::size_t n, std::size_t m, Feedback fn);
  static ThetaPath realized(std::vector<Vec> theta1, std::vector<Vec> theta2);

  Adaptedness tag() const { return tag_; }
  bool is_deterministic() const { return tag_ == Adaptedness::deterministic; }
  bool has_values() const { return !fn_; }
  bool z_adapted() const { return tag_ != Adaptedness::signal_feedback; }
  std::size_t n() const { return n_; }
  std::size_t m() const { return m_; }

  // Stored values (deterministic or realized paths only).
  const std::vector<Vec>& theta1() const { return theta1_; }
  const std::vector<Vec>& theta2() const { return theta2_; }

  ThetaValue at(std::size_t k, double t, const Vec& x, const Vec& m_obs) const;

  // Largest |theta_i(t_k)| over stored values.
  double sup_norm() const;
  // Throws BoundViolation when a stored value leaves the box |theta_i| <= mu.
  void check_bound(double mu) const;

  ThetaPath scaled(double factor) const;

 private:
  Adaptedness tag_ = Adaptedness::deterministic;
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<Vec> theta1_;
  std::vector<Vec> theta2_;
  Feedback fn_;
};

void check_theta_value(const ThetaValue& v, double mu, std::size_t k);

struct SamplePath {
  Mat dw;       // n x N, increments of w^{theta1} (covariance Q dt)
  Mat dv;       // m x N, increments of v^{theta2} (covariance R dt)
  Mat x;        // n x (N+1)
  Mat m_obs;    // m x (N+1)
  Vec f_theta;  // N+1, dP^theta/dP on this path at each grid point
  Mat theta1;   // n x N realized theta1 per step
  Mat theta2;   // m x N realized theta2 per step
};

enum class PathStorage { full, terminal };

struct PathBatch {
  std::uint64_t seed = 0;
  TimeGrid grid{1.0, 2};
  PathStorage storage = PathStorage::full;
  std::vector<SamplePath> paths;
};

struct SimulationOptions {
  double mu = std::numeric_limits<double>::infinity();
  Execution execution = Execution::parallel;
  PathStorage storage = PathStorage::full;
};

// Euler-Maruyama simulation of the signal/observation pair directly under
// P^theta: dx = (Bx + b - theta1) dt + dw, dm = (Hx + h - theta2) dt + dv.
PathBatch simulate_paths(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta,
                         std::size_t n_paths, std::uint64_t seed, const SimulationOptions& options = {});

// Density f^theta(t_k) of P^theta relative to the reference measure, evaluated
// on a batch simulated under the reference (theta = 0) dynamics. The Girsanov
// kernel acts on standardized increments: Q^{-1/2} dw and R^{-1/2} dv.
std::vector<Vec> density_path(const ModelCoefficients& model, const ThetaPath& theta, const PathBatch& batch);
Vec density_along(const ModelCoefficients& model, const CoefficientCache& cache, const TimeGrid& grid,
                  const ThetaPath& theta, const SamplePath& path);

struct MomentCheck {
  double estimate = 0.0;
  double std_error = 0.0;
  double lower_bound = 0.0;
  double upper_bound = 0.0;
};

// Monte Carlo estimate of E[exp(alpha * zeta)], zeta = c W_t - c^2 t / 2,
// against the bounds exp((alpha^2 - alpha) t c^2 / 2).
MomentCheck girsanov_moment_check(double c, double alpha, double t, std::size_t n_paths, std::uint64_t seed);

// Per-path realized theta generating the mixture lambda P^a + (1 - lambda) P^b.
std::vector<ThetaPath> mixture_theta(const ModelCoefficients& model, const ThetaPath& theta_a,
                                     const ThetaPath& theta_b, double lambda, const PathBatch& batch);

}  // namespace rkb
