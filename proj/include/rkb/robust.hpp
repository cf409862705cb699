#pragma once

#include <optional>
#include <vector>

#include "rkb/gexp.hpp"
#include "rkb/kalman.hpp"

namespace rkb {

struct RobustProblem {
  ModelCoefficients model;
  TimeGrid grid;
  ConcaveDual G;
  double mu = 0.0;
  double t_star = 0.0;
};

// Checks t_star against the grid and mu against the domain of G.
RobustProblem make_problem(ModelCoefficients model, TimeGrid grid, ConcaveDual G, double mu, double t_star);

// P(t*) + alpha_{0,t*}(theta) for deterministic theta (trace of P when n > 1).
double inner_value(const RobustProblem& problem, const ThetaPath& theta);
double inner_value(const RobustProblem& problem, const ThetaPath& theta, const RiccatiSolution& riccati);

// Maximizer of G(t_k, .) over the box |theta_i| <= mu at every step; among
// maximizers the one of least Euclidean norm.
ThetaPath worst_case_theta(const RobustProblem& problem);

// Argmax of G(t, theta) + <v, theta> over the box, theta and v stacked (theta1, theta2).
Vec tilted_argmax(const ConcaveDual& G, double t, const Vec& v, double mu);

// One RK4 step of de = (B - P H' R^{-1} H) e dt + (d1 - P H' R^{-1} d2) dt:
// e_{k+1} = Phi_k e_k + Gamma1_k d1_k + Gamma2_k d2_k.
struct BiasMaps {
  std::vector<Mat> Phi;
  std::vector<Mat> Gamma1;
  std::vector<Mat> Gamma2;
};

BiasMaps bias_maps(const ModelCoefficients& model, const TimeGrid& grid, const RiccatiSolution& riccati);

// Mean of x - x_hat_ref under P^theta, where x_hat_ref filters with theta_ref:
// d1 = theta_ref1 - theta1, d2 = theta_ref2 - theta2. Returns n x (N+1).
Mat bias_ode(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta, const ThetaPath& theta_ref);
Mat bias_ode(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta, const ThetaPath& theta_ref,
             const RiccatiSolution& riccati);

// Same quantity through the explicit propagator A(t, s) = exp int_s^t (B - P H^2 / R) dr
// with Simpson quadrature (scalar signal only).
Vec bias_quadrature(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta,
                    const ThetaPath& theta_ref, const RiccatiSolution& riccati);

struct UpperOptions {
  std::size_t sweep_points = 201;
  std::size_t pgd_starts = 8;
  std::size_t pgd_iterations = 400;
  std::uint64_t seed = 7;
};

struct UpperValue {
  double value = 0.0;
  ThetaPath theta;
  double bias = 0.0;         // |e(t*)| at the maximizer
  double sweep_value = 0.0;  // bias sweep with Lagrange bisection (n = 1 only)
  double pgd_value = 0.0;    // multi-start projected gradient
};

// sup over deterministic theta in the box of P(t*) + |e(t*; theta, theta_ref)|^2 + alpha_{0,t*}(theta).
UpperValue upper_value(const RobustProblem& problem, const ThetaPath& theta_ref, const UpperOptions& options = {});
UpperValue upper_value(const RobustProblem& problem, const ThetaPath& theta_ref, const RiccatiSolution& riccati,
                       const UpperOptions& options = {});

struct SaddleReport {
  ThetaPath theta_star;
  double lower_value = 0.0;
  double upper_value = 0.0;
  double gap = 0.0;
  double variance = 0.0;  // P(t*)
  double penalty = 0.0;   // alpha_{0,t*}(theta*)
  ThetaPath upper_theta;
  std::optional<FilterOutput> estimator;
};

SaddleReport certify_saddle(const RobustProblem& problem, const Mat* observations = nullptr,
                            const UpperOptions& options = {});

enum class Propagator { discrete, continuous };

// x_hat = x_bar + int_0^t (P H R^{-1} theta2 - theta1) A(t, s) ds. The discrete
// propagator follows the Euler filter step exactly; the continuous one uses
// the quadrature form (scalar signal only).
Mat decomposition(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta_star,
                  const FilterOutput& classical, Propagator propagator = Propagator::discrete);

struct GeneralFilterOutput {
  Vec x_hat;            // N+1
  Vec x_hat_se;         // particle standard error of x_hat
  Vec particle_var;     // weighted particle variance
  Vec particle_var_se;
  Vec ode_var;          // variance equation driven by particle moments
  Vec cov_x_theta2;     // E[x theta2 | Z] - x_hat E[theta2 | Z]
  Vec ess;
  std::size_t resamples = 0;
};

// Bootstrap particle filter for E_{P^theta}[x(t) | Z_t] with feedback theta
// (scalar model), plus the variance equation with particle-estimated moments.
GeneralFilterOutput general_filter(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta,
                                   std::size_t n_particles, std::uint64_t seed, const Mat& observations);

}  // namespace rkb
