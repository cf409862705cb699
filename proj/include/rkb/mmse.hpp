#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "rkb/linalg.hpp"

namespace rkb {

// Disjoint blocks covering {0, ..., size - 1}.
struct Partition {
  std::vector<std::vector<std::size_t>> blocks;

  static Partition trivial(std::size_t size);
  static Partition from_labels(const std::vector<std::size_t>& labels);
  std::size_t size() const;
  std::vector<std::size_t> labels() const;
  void validate(std::size_t size) const;
};

// rho(xi) = max_i (E_{P_i}[xi] - alpha_i) on a finite space with reference
// probabilities `prob`; dP_i/dP = densities[i].
struct FiniteConvexOperator {
  Vec prob;
  std::vector<Vec> densities;
  Vec penalties;  // alpha_i >= 0, min alpha_i = 0
  double p = 2.0;
  double q = 2.0;

  std::size_t size() const { return static_cast<std::size_t>(prob.size()); }
  std::size_t count() const { return densities.size(); }
  bool proper() const;
  // Throws on broken invariants; `require_proper` adds strict positivity of every density.
  void validate(bool require_proper = false) const;
};

double rho_eval(const FiniteConvexOperator& op, const Vec& xi);

// Penalty convention of the continuous-time part (alpha <= 0, "+alpha"):
// returns -alpha_i.
Vec concave_penalties(const FiniteConvexOperator& op);

struct MmseOptions {
  std::size_t starts = 10;
  std::size_t iterations = 200;
  std::uint64_t seed = 0;
  double gap_tol = 1e-8;
};

struct MmseResult {
  Vec eta_hat;       // block-constant, length |Omega|
  double value = 0.0;
  Vec lambda_star;
  double saddle_gap = 0.0;
  std::size_t start_index = 0;
};

// h(lambda) = E_{f_lambda}[(xi - eta_lambda)^2] - lambda . alpha, eta_lambda the
// blockwise conditional mean under f_lambda.
double dual_objective(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, const Vec& lambda);
Vec block_mean(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, const Vec& lambda);

MmseResult conditional_mmse(const FiniteConvexOperator& op, const Vec& xi, const Partition& C,
                            const MmseOptions& options = {});
// Single solve from a given simplex point.
MmseResult conditional_mmse_from(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, const Vec& lambda0,
                                 const MmseOptions& options = {});

struct BruteForceResult {
  Vec eta;
  double value = 0.0;
  double resolution = 0.0;  // final grid spacing (each refinement keeps +-8 spacings)
};

BruteForceResult brute_force_mmse(const FiniteConvexOperator& op, const Vec& xi, const Partition& C,
                                  int points_per_axis = 41, int refinements = 6);

struct SaddleCheck {
  double max_violation = 0.0;
  double vertex_violation = 0.0;     // max_i E_i(xi - eta)^2 - alpha_i - value
  double estimator_violation = 0.0;  // value - min over sampled eta of the lambda* side
  double conditional_mean_error = 0.0;
};

SaddleCheck saddle_check(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, const MmseResult& result,
                         std::size_t random_eta = 100, std::uint64_t seed = 0);

struct StabilityReport {
  bool stable = true;
  std::vector<std::size_t> failing;  // densities f with f / f_C outside conv(D)
  std::vector<double> residuals;     // distance of f / f_C to conv(D), per density
};

StabilityReport check_stability(const FiniteConvexOperator& op, const Partition& C);
// Distance from v to the convex hull of the densities.
double hull_distance(const std::vector<Vec>& points, const Vec& v, Vec* weights = nullptr);
// Adds f / f_C for every density (penalty inherited) until the set is closed.
FiniteConvexOperator stabilize(const FiniteConvexOperator& op, const Partition& C, int depth = 3);

double uniqueness_probe(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, std::size_t restarts,
                        std::uint64_t seed);

struct PropertyReport {
  bool bounds = true;        // (i)
  bool symmetry = true;      // (ii)
  bool translation = true;   // (iii)
  bool independence = true;  // (iv)
  double bounds_error = 0.0;
  double symmetry_error = 0.0;
  double translation_error = 0.0;
  double independence_error = 0.0;
  bool all() const { return bounds && symmetry && translation && independence; }
};

PropertyReport property_suite(const FiniteConvexOperator& op, const Partition& C, std::uint64_t seed,
                              std::size_t trials = 3, double tol = 1e-8);

struct MomentBound {
  bool holds = true;
  double lhs = 0.0;          // max_i E_i |xi|^{gamma p / 2}
  double rhs = 0.0;          // max_i |f_i|_q |xi|_{gamma p}^{gamma p / 2}
  double rhs_stated = 0.0;   // max_i |f_i|_q |xi|_{gamma p}^{gamma}
};

MomentBound moment_bound_check(const FiniteConvexOperator& op, const Vec& xi, double gamma);

struct RestrictionBound {
  double norm = 0.0;       // |eta_hat|_{L^{2p}}
  double bound = 0.0;      // blockwise bound valid without stability
  double bound_stable = 0.0;  // (max_i E_i |xi|^{2p})^{1/(2p)}, valid for stable sets
};

RestrictionBound restriction_bound(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, const Vec& eta);

// Random proper instance: |Omega| in [2, max_size], up to max_densities
// densities, up to max_blocks blocks.
struct Instance {
  FiniteConvexOperator op;
  Partition C;
  Vec xi;
};

Instance random_instance(std::mt19937_64& rng, std::size_t max_size = 8, std::size_t max_densities = 4,
                         std::size_t max_blocks = 3);

// Product space A x B with C generated by the A coordinate, every P_i sharing
// the A marginal; xi depends on B only.
Instance independence_instance(std::mt19937_64& rng);

}  // namespace rkb
