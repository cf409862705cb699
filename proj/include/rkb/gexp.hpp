#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rkb/model.hpp"
#include "rkb/sde.hpp"

namespace rkb {

enum class GeneratorKind { zero, scaled_norm, hyperbolic, user };

// Convex BSDE generator g(t, z1, z2) with g(t, 0, 0) = 0.
//   scaled_norm: kappa * |z|_1 over the stacked vector (z1, z2)
//   hyperbolic:  kappa * (sqrt(1 + |z|^2) - 1)
struct Generator {
  using Fn = std::function<double(double t, const Vec& z1, const Vec& z2)>;

  GeneratorKind kind = GeneratorKind::zero;
  double kappa = 0.0;
  Fn user;                 // only for GeneratorKind::user
  double user_lipschitz = 0.0;
  bool time_dependent = false;  // user generators may vary with t
  std::string label = "zero";

  double operator()(double t, const Vec& z1, const Vec& z2) const;
  // Lipschitz constant K for |g(z) - g(z')| <= K (|z1 - z1'| + |z2 - z2'|).
  double lipschitz(std::size_t n, std::size_t m) const;
};

Generator zero_generator();
Generator scaled_norm_generator(double kappa);
Generator hyperbolic_generator(double kappa);
Generator user_generator(Generator::Fn fn, double lipschitz, std::string label = "user", bool time_dependent = false);

// "zero", "norm:K" or "hyperbolic:K".
Generator parse_generator(const std::string& spec);

struct GeneratorCheck {
  double normalization = 0.0;      // |g(t, 0, 0)|
  double lipschitz_excess = 0.0;   // max of |g(z) - g(z')| - K (...) over pairs, <= 0 when fine
  double convexity_excess = 0.0;   // max of g(mid) - (g(z) + g(z'))/2, <= 0 when fine
};

GeneratorCheck spot_check(const Generator& g, std::size_t n, std::size_t m, std::size_t pairs, std::uint64_t seed);

struct NumericDualOptions {
  double z_max = 20.0;
  int points_per_axis = 11;  // coarse scan before the pattern search
  // Pattern-search step at which the infimum is accepted.
  double step_tolerance = 1e-10;
  double divergence_threshold = 1e-6;
};

// G(t, theta) = inf_z [g(t, z) + <z1, theta1> + <z2, theta2>], -inf off the
// effective domain.
class ConcaveDual {
 public:
  ConcaveDual(Generator g, std::size_t n, std::size_t m, NumericDualOptions options = {});

  double operator()(double t, const Vec& theta1, const Vec& theta2) const;
  bool in_domain(double t, const Vec& theta1, const Vec& theta2) const;
  // Value plus its gradient, the z attaining the infimum (Danskin). The
  // gradient is left untouched off the domain.
  double evaluate(double t, const Vec& theta1, const Vec& theta2, Vec* gradient) const;
  // argmax of G(t, .) + <v, .> over |theta_i| <= mu for user generators, read
  // off the primal minimizer of g(t, z) + mu |z + v|_1.
  Vec box_argmax(double t, const Vec& v, double mu) const;

  // Largest r such that the whole box |theta_i| <= r lies in the domain.
  double domain_radius() const { return radius_; }
  const Generator& generator() const { return g_; }
  GeneratorKind kind() const { return g_.kind; }
  std::size_t n() const { return n_; }
  std::size_t m() const { return m_; }

 private:
  double numeric(double t, const Vec& theta1, const Vec& theta2, Vec* argmin = nullptr) const;
  double grid_inf(double t, const Vec& theta, double z_max, bool* on_boundary, Vec* argmin) const;

  Generator g_;
  std::size_t n_;
  std::size_t m_;
  NumericDualOptions opt_;
  double radius_ = 0.0;
};

ConcaveDual concave_dual(const Generator& g, std::size_t n, std::size_t m, NumericDualOptions options = {});

struct PenaltyValue {
  double alpha = 0.0;
  double std_error = 0.0;
};

// alpha_{0,t}(P^theta) = E_{P^theta}[sum_{t_k < t} G(t_k, theta(t_k)) dt].
// Deterministic theta: exact left-point sum.
PenaltyValue penalty_eval(const ThetaPath& theta, const ConcaveDual& G, const TimeGrid& grid, double t);
// Random theta evaluated along a batch simulated under the reference measure.
PenaltyValue penalty_eval(const ModelCoefficients& model, const ThetaPath& theta, const ConcaveDual& G, double t,
                          const PathBatch& batch);

struct ConcavityTriple {
  ThetaPath a;
  ThetaPath b;
  double lambda = 0.5;
};

struct ConcavityReport {
  double max_violation = 0.0;  // lambda alpha_a + (1 - lambda) alpha_b - alpha_mix, worst over triples
  double std_error = 0.0;      // standard error of that difference
  double max_score = 0.0;      // worst violation / standard error (0 when both vanish)
  std::size_t worst = 0;
};

// Penalty of the mixture lambda P^a + (1 - lambda) P^b against the mixture of
// penalties; every expectation uses the same reference batch.
ConcavityReport penalty_concavity_check(const ModelCoefficients& model, const ConcaveDual& G,
                                        const std::vector<ConcavityTriple>& triples, double t,
                                        const PathBatch& batch);

struct BsdeOptions {
  int degree = 2;
  std::size_t bootstrap = 16;
};

struct BsdeResult {
  double y0 = 0.0;
  double std_error = 0.0;
  std::size_t min_rank = 0;  // smallest regression rank seen (basis reduced when below the basis size)
  std::size_t basis_size = 0;
};

using Terminal = std::function<double(double x, double m)>;

// Least-squares Monte Carlo for Y_t = xi + int g(Z) ds - int Z1 dw - int Z2 dv
// on a scalar model, Z taken against the (non-standardized) w and v.
BsdeResult bsde_solve(const Generator& g, const Terminal& xi, const ModelCoefficients& model, const TimeGrid& grid,
                      std::size_t n_paths, std::uint64_t seed, const BsdeOptions& options = {});

struct DualValue {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t argmax = 0;
  double expectation = 0.0;
  double penalty = 0.0;
};

// max over the family of E_{P^theta}[xi] + alpha_{0,T}(P^theta). Every member
// is simulated with the same seed (common random numbers).
DualValue dual_value(const Terminal& xi, const ConcaveDual& G, const ModelCoefficients& model, const TimeGrid& grid,
                     const std::vector<ThetaPath>& family, std::size_t n_paths, std::uint64_t seed);

// Constant (theta1, theta2) on the lattice spacing * Z^2 inside [-radius, radius]^2
// and inside the domain of G (scalar model).
std::vector<ThetaPath> constant_theta_family(const ConcaveDual& G, const TimeGrid& grid, double radius, double spacing);

}  // namespace rkb
