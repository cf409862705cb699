#include "rkb/mmse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rkb/error.hpp"
#include "rkb/stats.hpp"

namespace rkb {

Partition Partition::trivial(std::size_t size) {
  Partition C;
  C.blocks.emplace_back(size);
  std::iota(C.blocks[0].begin(), C.blocks[0].end(), std::size_t{0});
  return C;
}

Partition Partition::from_labels(const std::vector<std::size_t>& labels) {
  Partition C;
  std::size_t nb = 0;
  for (std::size_t l : labels) nb = std::max(nb, l + 1);
  C.blocks.resize(nb);
  for (std::size_t i = 0; i < labels.size(); ++i) C.blocks[labels[i]].push_back(i);
  C.validate(labels.size());
  return C;
}

std::size_t Partition::size() const {
  std::size_t s = 0;
  for (const auto& b : blocks) s += b.size();
  return s;
}

std::vector<std::size_t> Partition::labels() const {
  std::vector<std::size_t> out(size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i : blocks[b]) out[i] = b;
  }
  return out;
}

void Partition::validate(std::size_t n) const {
  std::vector<int> seen(n, 0);
  for (const auto& b : blocks) {
    if (b.empty()) throw Error(ErrorCode::invalid_value, "partition has an empty block");
    for (std::size_t i : b) {
      if (i >= n) throw Error(ErrorCode::dimension_mismatch, "partition index out of range");
      if (seen[i]++) throw Error(ErrorCode::invalid_value, "partition blocks overlap");
    }
  }
  for (int s : seen) {
    if (!s) throw Error(ErrorCode::invalid_value, "partition does not cover the space");
  }
}

bool FiniteConvexOperator::proper() const {
  for (const Vec& f : densities) {
    if (!(f.minCoeff() > 0.0)) return false;
  }
  return true;
}

void FiniteConvexOperator::validate(bool require_proper) const {
  if (prob.size() == 0) throw Error(ErrorCode::invalid_value, "empty probability space");
  if (!(prob.minCoeff() > 0.0) || std::abs(prob.sum() - 1.0) > 1e-10) {
    throw Error(ErrorCode::invalid_value, "reference probabilities must be positive and sum to 1");
  }
  if (densities.empty()) throw Error(ErrorCode::invalid_value, "operator needs at least one density");
  if (penalties.size() != static_cast<Eigen::Index>(densities.size())) {
    throw Error(ErrorCode::dimension_mismatch, "one penalty per density required");
  }
  for (std::size_t i = 0; i < densities.size(); ++i) {
    const Vec& f = densities[i];
    if (f.size() != prob.size()) throw Error(ErrorCode::dimension_mismatch, "density " + std::to_string(i) + " has wrong length");
    if (f.minCoeff() < 0.0) throw Error(ErrorCode::invalid_value, "density " + std::to_string(i) + " is negative");
    if (std::abs(prob.dot(f) - 1.0) > 1e-9) {
      throw Error(ErrorCode::invalid_value, "density " + std::to_string(i) + " does not integrate to 1");
    }
  }
  if (penalties.minCoeff() < 0.0 || std::abs(penalties.minCoeff()) > 1e-12) {
    throw Error(ErrorCode::invalid_value, "penalties must be >= 0 with minimum 0");
  }
  if (!(p > 1.0 && p <= 2.0) || std::abs(1.0 / p + 1.0 / q - 1.0) > 1e-12) {
    throw Error(ErrorCode::invalid_value, "exponents need 1 < p <= 2 and 1/p + 1/q = 1");
  }
  if (require_proper && !proper()) {
    throw Error(ErrorCode::not_proper, "a density vanishes somewhere, so the operator is not proper");
  }
}

double rho_eval(const FiniteConvexOperator& op, const Vec& xi) {
  if (xi.size() != op.prob.size()) throw Error(ErrorCode::dimension_mismatch, "xi does not match the space");
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < op.count(); ++i) {
    best = std::max(best, op.prob.cwiseProduct(op.densities[i]).dot(xi) - op.penalties(static_cast<Eigen::Index>(i)));
  }
  return best;
}

Vec concave_penalties(const FiniteConvexOperator& op) { return -op.penalties; }

namespace {

// Block moments per density: c = E[1_B f], b = E[1_B f xi], a = E[1_B f xi^2].
struct Moments {
  Mat a, b, c;  // count x blocks
};

Moments block_moments(const FiniteConvexOperator& op, const Vec& xi, const Partition& C) {
  const auto k = static_cast<Eigen::Index>(op.count());
  const auto nb = static_cast<Eigen::Index>(C.blocks.size());
  Moments M{Mat::Zero(k, nb), Mat::Zero(k, nb), Mat::Zero(k, nb)};
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index B = 0; B < nb; ++B) {
      for (std::size_t w : C.blocks[static_cast<std::size_t>(B)]) {
        const auto ww = static_cast<Eigen::Index>(w);
        const double pf = op.prob(ww) * op.densities[static_cast<std::size_t>(i)](ww);
        M.c(i, B) += pf;
        M.b(i, B) += pf * xi(ww);
        M.a(i, B) += pf * xi(ww) * xi(ww);
      }
    }
  }
  return M;
}

Vec eta_blocks(const Moments& M, const Vec& lambda) {
  const Vec bl = M.b.transpose() * lambda;
  const Vec cl = M.c.transpose() * lambda;
  return bl.cwiseQuotient(cl);
}

double h_value(const Moments& M, const Vec& alpha, const Vec& lambda) {
  const Vec al = M.a.transpose() * lambda;
  const Vec bl = M.b.transpose() * lambda;
  const Vec cl = M.c.transpose() * lambda;
  double h = 0.0;
  for (Eigen::Index B = 0; B < al.size(); ++B) h += al(B) - bl(B) * bl(B) / cl(B);
  return h - lambda.dot(alpha);
}

// g_i = E_i[(xi - eta)^2] - alpha_i for block values eta.
Vec vertex_values(const Moments& M, const Vec& alpha, const Vec& eta) {
  Vec g = M.a.rowwise().sum() - alpha;
  for (Eigen::Index B = 0; B < eta.size(); ++B) g += -2.0 * eta(B) * M.b.col(B) + eta(B) * eta(B) * M.c.col(B);
  return g;
}

Mat h_hessian(const Moments& M, const Vec& lambda) {
  const Vec eta = eta_blocks(M, lambda);
  const Vec cl = M.c.transpose() * lambda;
  const auto k = M.a.rows();
  Mat H = Mat::Zero(k, k);
  for (Eigen::Index B = 0; B < eta.size(); ++B) {
    const Vec d = M.b.col(B) - eta(B) * M.c.col(B);
    H -= (2.0 / cl(B)) * d * d.transpose();
  }
  return H;
}

Vec project_simplex(const Vec& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  return (v.array() - tau).cwiseMax(0.0);
}

Vec expand(const Vec& blocks, const Partition& C, std::size_t size) {
  Vec out(static_cast<Eigen::Index>(size));
  for (std::size_t B = 0; B < C.blocks.size(); ++B) {
    for (std::size_t w : C.blocks[B]) out(static_cast<Eigen::Index>(w)) = blocks(static_cast<Eigen::Index>(B));
  }
  return out;
}

Vec dirichlet(std::mt19937_64& rng, std::size_t k) {
  std::exponential_distribution<double> e(1.0);
  Vec v(static_cast<Eigen::Index>(k));
  for (auto& x : v) x = e(rng);
  return v / v.sum();
}

void check_inputs(const FiniteConvexOperator& op, const Vec& xi, const Partition& C) {
  op.validate(true);
  if (xi.size() != op.prob.size()) throw Error(ErrorCode::dimension_mismatch, "xi does not match the space");
  C.validate(op.size());
}

}  // namespace

double dual_objective(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, const Vec& lambda) {
  return h_value(block_moments(op, xi, C), op.penalties, lambda);
}

Vec block_mean(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, const Vec& lambda) {
  return expand(eta_blocks(block_moments(op, xi, C), lambda), C, op.size());
}

MmseResult conditional_mmse_from(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, const Vec& lambda0,
                                 const MmseOptions& options) {
  check_inputs(op, xi, C);
  const Moments M = block_moments(op, xi, C);
  const Vec& alpha = op.penalties;
  const auto k = static_cast<Eigen::Index>(op.count());
  Vec lambda = project_simplex(lambda0);
  double h = h_value(M, alpha, lambda);
  double step = 1.0;
  const double scale = 1.0 + M.a.cwiseAbs().maxCoeff() + alpha.cwiseAbs().maxCoeff();

  for (std::size_t it = 0; it < options.iterations; ++it) {
    Vec g = vertex_values(M, alpha, eta_blocks(M, lambda));
    if (g.maxCoeff() - lambda.dot(g) <= 1e-16 * scale) break;

    // Projected gradient step with backtracking.
    for (int bt = 0; bt < 60; ++bt) {
      const Vec trial = project_simplex(lambda + step * g);
      const double ht = h_value(M, alpha, trial);
      if (ht >= h + 1e-4 * g.dot(trial - lambda)) {
        lambda = trial;
        h = ht;
        step = std::min(step * 2.0, 1e8);
        break;
      }
      step *= 0.5;
    }

    // Newton polishing on the current face: g_S + H_SS d = nu 1, sum d = 0.
    std::vector<Eigen::Index> S;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (lambda(i) > 1e-14) S.push_back(i);
    }
    if (S.size() >= 2) {
      g = vertex_values(M, alpha, eta_blocks(M, lambda));
      const Mat H = h_hessian(M, lambda);
      const auto s = static_cast<Eigen::Index>(S.size());
      Mat kkt = Mat::Zero(s + 1, s + 1);
      Vec rhs = Vec::Zero(s + 1);
      for (Eigen::Index a = 0; a < s; ++a) {
        for (Eigen::Index b = 0; b < s; ++b) kkt(a, b) = H(S[a], S[b]);
        kkt(a, s) = -1.0;
        kkt(s, a) = 1.0;
        rhs(a) = -g(S[a]);
      }
      const Vec sol = kkt.completeOrthogonalDecomposition().solve(rhs);
      Vec dir = Vec::Zero(k);
      for (Eigen::Index a = 0; a < s; ++a) dir(S[a]) = sol(a);
      double tmax = 1.0;
      for (Eigen::Index i = 0; i < k; ++i) {
        if (dir(i) < 0.0) tmax = std::min(tmax, -lambda(i) / dir(i));
      }
      for (double t = tmax; t > 1e-12; t *= 0.5) {
        Vec trial = (lambda + t * dir).cwiseMax(0.0);
        trial /= trial.sum();
        const double ht = h_value(M, alpha, trial);
        if (ht > h) {
          lambda = trial;
          h = ht;
          break;
        }
      }
    }
  }

  MmseResult r;
  r.lambda_star = lambda;
  const Vec eta = eta_blocks(M, lambda);
  r.eta_hat = expand(eta, C, op.size());
  const Vec g = vertex_values(M, alpha, eta);
  r.value = g.maxCoeff();
  r.saddle_gap = r.value - h;
  return r;
}

MmseResult conditional_mmse(const FiniteConvexOperator& op, const Vec& xi, const Partition& C,
                            const MmseOptions& options) {
  check_inputs(op, xi, C);
  const std::size_t starts = std::max<std::size_t>(options.starts, 1);
  std::vector<MmseResult> results(starts);
  const auto count = static_cast<std::int64_t>(starts);
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < count; ++s) {
    Vec lambda0;
    if (s == 0) {
      lambda0 = Vec::Constant(static_cast<Eigen::Index>(op.count()), 1.0 / static_cast<double>(op.count()));
    } else {
      auto rng = stream_rng(options.seed, static_cast<std::uint64_t>(s));
      lambda0 = dirichlet(rng, op.count());
    }
    results[static_cast<std::size_t>(s)] = conditional_mmse_from(op, xi, C, lambda0, options);
    results[static_cast<std::size_t>(s)].start_index = static_cast<std::size_t>(s);
  }
  std::size_t best = 0;
  for (std::size_t s = 1; s < starts; ++s) {
    if (results[s].value < results[best].value) best = s;
  }
  return results[best];
}

BruteForceResult brute_force_mmse(const FiniteConvexOperator& op, const Vec& xi, const Partition& C,
                                  int points_per_axis, int refinements) {
  check_inputs(op, xi, C);
  const std::size_t nb = C.blocks.size();
  if (nb > 3) throw Error(ErrorCode::too_many_blocks, "brute force handles at most 3 blocks, got " + std::to_string(nb));
  const Moments M = block_moments(op, xi, C);
  const int P = std::max(points_per_axis, 2);
  // eta_B is a weighted mean of xi over B, so [min_B xi, max_B xi] brackets it.
  Vec lo(static_cast<Eigen::Index>(nb)), hi(static_cast<Eigen::Index>(nb));
  for (std::size_t B = 0; B < nb; ++B) {
    double a = std::numeric_limits<double>::infinity(), b = -a;
    for (std::size_t w : C.blocks[B]) {
      a = std::min(a, xi(static_cast<Eigen::Index>(w)));
      b = std::max(b, xi(static_cast<Eigen::Index>(w)));
    }
    lo(static_cast<Eigen::Index>(B)) = a;
    hi(static_cast<Eigen::Index>(B)) = b;
  }
  const Vec lo0 = lo, hi0 = hi;
  Vec best_eta = 0.5 * (lo + hi);
  double best = vertex_values(M, op.penalties, best_eta).maxCoeff();
  double resolution = 0.0;
  for (int round = 0; round <= refinements; ++round) {
    const Vec h = (hi - lo) / (P - 1);
    resolution = h.maxCoeff();
    std::size_t total = 1;
    for (std::size_t B = 0; B < nb; ++B) total *= static_cast<std::size_t>(P);
    Vec eta(static_cast<Eigen::Index>(nb));
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t r = idx;
      for (std::size_t B = 0; B < nb; ++B) {
        const auto b = static_cast<Eigen::Index>(B);
        eta(b) = lo(b) + h(b) * static_cast<double>(r % static_cast<std::size_t>(P));
        r /= static_cast<std::size_t>(P);
      }
      const double v = vertex_values(M, op.penalties, eta).maxCoeff();
      if (v < best) {
        best = v;
        best_eta = eta;
      }
    }
    // Keep a wide window: along narrow valleys of the max of quadratics the
    // grid minimizer can sit several spacings from the true one.
    lo = (best_eta - 8.0 * h).cwiseMax(lo0);
    hi = (best_eta + 8.0 * h).cwiseMin(hi0);
  }
  return {expand(best_eta, C, op.size()), best, resolution};
}

SaddleCheck saddle_check(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, const MmseResult& result,
                         std::size_t random_eta, std::uint64_t seed) {
  check_inputs(op, xi, C);
  const Moments M = block_moments(op, xi, C);
  const Vec& alpha = op.penalties;
  const Vec& lambda = result.lambda_star;
  Vec eta_hat(static_cast<Eigen::Index>(C.blocks.size()));
  for (std::size_t B = 0; B < C.blocks.size(); ++B) {
    eta_hat(static_cast<Eigen::Index>(B)) = result.eta_hat(static_cast<Eigen::Index>(C.blocks[B][0]));
  }
  SaddleCheck out;
  // Left inequality at every vertex P_i.
  out.vertex_violation = vertex_values(M, alpha, eta_hat).maxCoeff() - result.value;
  // Right inequality: the lambda* mixture against perturbed estimators.
  auto lambda_side = [&](const Vec& eta) { return lambda.dot(vertex_values(M, alpha, eta)); };
  double lowest = lambda_side(eta_hat);
  auto rng = stream_rng(seed, 0);
  const double spread = 1.0 + xi.cwiseAbs().maxCoeff();
  std::uniform_real_distribution<double> unif(-spread, spread);
  for (std::size_t s = 0; s < random_eta; ++s) {
    Vec eta = eta_hat;
    for (auto& e : eta) e += unif(rng);
    lowest = std::min(lowest, lambda_side(eta));
  }
  out.estimator_violation = result.value - lowest;
  out.conditional_mean_error = (eta_blocks(M, lambda) - eta_hat).cwiseAbs().maxCoeff();
  out.max_violation = std::max({out.vertex_violation, out.estimator_violation, out.conditional_mean_error});
  return out;
}

double hull_distance(const std::vector<Vec>& points, const Vec& v, Vec* weights) {
  const std::size_t k = points.size();
  if (k == 0 || k > 16) throw Error(ErrorCode::invalid_value, "hull_distance handles 1 to 16 points");
  double best = std::numeric_limits<double>::infinity();
  Vec best_w;
  // Every support set: equality-constrained least squares, kept when feasible.
  for (std::size_t mask = 1; mask < (std::size_t{1} << k); ++mask) {
    std::vector<std::size_t> S;
    for (std::size_t i = 0; i < k; ++i) {
      if (mask >> i & 1u) S.push_back(i);
    }
    const auto s = static_cast<Eigen::Index>(S.size());
    Mat F(v.size(), s);
    for (Eigen::Index j = 0; j < s; ++j) F.col(j) = points[S[static_cast<std::size_t>(j)]];
    Mat kkt = Mat::Zero(s + 1, s + 1);
    kkt.topLeftCorner(s, s) = 2.0 * F.transpose() * F;
    kkt.topRightCorner(s, 1).setOnes();
    kkt.bottomLeftCorner(1, s).setOnes();
    Vec rhs(s + 1);
    rhs.head(s) = 2.0 * F.transpose() * v;
    rhs(s) = 1.0;
    const Vec sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    const Vec lam = sol.head(s);
    if (lam.minCoeff() < -1e-12 || std::abs(lam.sum() - 1.0) > 1e-9) continue;
    const double dist = (F * lam - v).norm();
    if (dist < best) {
      best = dist;
      best_w = Vec::Zero(static_cast<Eigen::Index>(k));
      for (Eigen::Index j = 0; j < s; ++j) best_w(static_cast<Eigen::Index>(S[static_cast<std::size_t>(j)])) = lam(j);
    }
  }
  if (weights) *weights = best_w;
  return best;
}

namespace {

Vec conditional_ratio(const FiniteConvexOperator& op, const Vec& f, const Partition& C) {
  Vec out(f.size());
  for (const auto& block : C.blocks) {
    double pb = 0.0, pf = 0.0;
    for (std::size_t w : block) {
      pb += op.prob(static_cast<Eigen::Index>(w));
      pf += op.prob(static_cast<Eigen::Index>(w)) * f(static_cast<Eigen::Index>(w));
    }
    const double fc = pf / pb;
    for (std::size_t w : block) out(static_cast<Eigen::Index>(w)) = f(static_cast<Eigen::Index>(w)) / fc;
  }
  return out;
}

}  // namespace

StabilityReport check_stability(const FiniteConvexOperator& op, const Partition& C) {
  op.validate(true);
  C.validate(op.size());
  StabilityReport rep;
  for (std::size_t i = 0; i < op.count(); ++i) {
    const Vec g = conditional_ratio(op, op.densities[i], C);
    const double dist = hull_distance(op.densities, g);
    rep.residuals.push_back(dist);
    if (dist > 1e-9 * (1.0 + g.norm())) {
      rep.stable = false;
      rep.failing.push_back(i);
    }
  }
  return rep;
}

FiniteConvexOperator stabilize(const FiniteConvexOperator& op, const Partition& C, int depth) {
  FiniteConvexOperator out = op;
  for (int d = 0; d < depth; ++d) {
    std::vector<Vec> added;
    std::vector<double> added_alpha;
    for (std::size_t i = 0; i < out.count(); ++i) {
      const Vec g = conditional_ratio(out, out.densities[i], C);
      std::vector<Vec> pool = out.densities;
      pool.insert(pool.end(), added.begin(), added.end());
      if (hull_distance(pool, g) > 1e-9 * (1.0 + g.norm())) {
        added.push_back(g);
        added_alpha.push_back(out.penalties(static_cast<Eigen::Index>(i)));
      }
    }
    if (added.empty()) break;
    const auto old = out.penalties.size();
    out.penalties.conservativeResize(old + static_cast<Eigen::Index>(added.size()));
    for (std::size_t j = 0; j < added.size(); ++j) {
      out.densities.push_back(added[j]);
      out.penalties(old + static_cast<Eigen::Index>(j)) = added_alpha[j];
    }
  }
  return out;
}

double uniqueness_probe(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, std::size_t restarts,
                        std::uint64_t seed) {
  check_inputs(op, xi, C);
  std::vector<Vec> etas(restarts);
  const auto count = static_cast<std::int64_t>(restarts);
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < count; ++s) {
    auto rng = stream_rng(seed, static_cast<std::uint64_t>(s));
    etas[static_cast<std::size_t>(s)] = conditional_mmse_from(op, xi, C, dirichlet(rng, op.count())).eta_hat;
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < restarts; ++i) {
    for (std::size_t j = i + 1; j < restarts; ++j) worst = std::max(worst, (etas[i] - etas[j]).cwiseAbs().maxCoeff());
  }
  return worst;
}

PropertyReport property_suite(const FiniteConvexOperator& op, const Partition& C, std::uint64_t seed,
                              std::size_t trials, double tol) {
  op.validate(true);
  C.validate(op.size());
  PropertyReport rep;
  MmseOptions opt;
  opt.seed = seed;
  for (std::size_t t = 0; t < trials; ++t) {
    auto rng = stream_rng(seed, t);
    std::normal_distribution<double> gauss;
    Vec xi(op.prob.size());
    for (auto& x : xi) x = gauss(rng);
    const Vec eta = conditional_mmse(op, xi, C, opt).eta_hat;

    const double lo = xi.minCoeff(), hi = xi.maxCoeff();
    rep.bounds_error = std::max({rep.bounds_error, lo - eta.minCoeff(), eta.maxCoeff() - hi});

    const Vec eta_neg = conditional_mmse(op, Vec(-xi), C, opt).eta_hat;
    rep.symmetry_error = std::max(rep.symmetry_error, (eta_neg + eta).cwiseAbs().maxCoeff());

    Vec shift_blocks(static_cast<Eigen::Index>(C.blocks.size()));
    for (auto& s : shift_blocks) s = 2.5 * gauss(rng);
    const Vec shift = expand(shift_blocks, C, op.size());
    const Vec eta_shift = conditional_mmse(op, Vec(xi + shift), C, opt).eta_hat;
    rep.translation_error = std::max(rep.translation_error, (eta_shift - eta - shift).cwiseAbs().maxCoeff());

    const Instance ind = independence_instance(rng);
    const Vec eta_ind = conditional_mmse(ind.op, ind.xi, ind.C, opt).eta_hat;
    rep.independence_error = std::max(rep.independence_error, eta_ind.maxCoeff() - eta_ind.minCoeff());
  }
  rep.bounds = rep.bounds_error <= tol;
  rep.symmetry = rep.symmetry_error <= tol;
  rep.translation = rep.translation_error <= tol;
  rep.independence = rep.independence_error <= tol;
  return rep;
}

MomentBound moment_bound_check(const FiniteConvexOperator& op, const Vec& xi, double gamma) {
  if (!(gamma >= 2.0)) throw Error(ErrorCode::invalid_value, "gamma must be >= 2");
  op.validate(false);
  const double e = gamma * op.p / 2.0;
  const Vec ax = xi.cwiseAbs();
  MomentBound out;
  double fq = 0.0;
  for (const Vec& f : op.densities) {
    out.lhs = std::max(out.lhs, op.prob.cwiseProduct(f).dot(ax.array().pow(e).matrix()));
    fq = std::max(fq, std::pow(op.prob.dot(f.array().pow(op.q).matrix()), 1.0 / op.q));
  }
  const double norm = std::pow(op.prob.dot(ax.array().pow(gamma * op.p).matrix()), 1.0 / (gamma * op.p));
  out.rhs = fq * std::pow(norm, e);
  out.rhs_stated = fq * std::pow(norm, gamma);
  out.holds = out.lhs <= out.rhs * (1.0 + 1e-12) + 1e-300;
  return out;
}

RestrictionBound restriction_bound(const FiniteConvexOperator& op, const Vec& xi, const Partition& C, const Vec& eta) {
  const double e = 2.0 * op.p;
  const Vec xe = xi.cwiseAbs().array().pow(e).matrix();
  RestrictionBound out;
  out.norm = std::pow(op.prob.dot(eta.cwiseAbs().array().pow(e).matrix()), 1.0 / e);
  double total = 0.0, stable = 0.0;
  std::vector<Vec> ratios;
  for (const Vec& f : op.densities) {
    ratios.push_back(conditional_ratio(op, f, C));
    stable = std::max(stable, op.prob.cwiseProduct(f).dot(xe));
  }
  for (const auto& block : C.blocks) {
    double worst = 0.0;
    for (const Vec& r : ratios) {
      double s = 0.0;
      for (std::size_t w : block) {
        const auto ww = static_cast<Eigen::Index>(w);
        s += op.prob(ww) * r(ww) * xe(ww);
      }
      worst = std::max(worst, s);
    }
    total += worst;
  }
  out.bound = std::pow(total, 1.0 / e);
  out.bound_stable = std::pow(stable, 1.0 / e);
  return out;
}

Instance random_instance(std::mt19937_64& rng, std::size_t max_size, std::size_t max_densities,
                         std::size_t max_blocks) {
  std::uniform_int_distribution<std::size_t> size_d(2, std::max<std::size_t>(max_size, 2));
  const std::size_t n = size_d(rng);
  std::uniform_int_distribution<std::size_t> k_d(1, std::max<std::size_t>(max_densities, 1));
  const std::size_t k = k_d(rng);
  std::uniform_int_distribution<std::size_t> b_d(1, std::min(std::max<std::size_t>(max_blocks, 1), n));
  const std::size_t nb = b_d(rng);
  std::uniform_real_distribution<double> u(0.2, 1.0), uf(0.2, 2.0), ua(0.0, 0.5);
  std::normal_distribution<double> gauss;

  std::vector<std::size_t> labels(n);
  std::uniform_int_distribution<std::size_t> lab(0, nb - 1);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i < nb ? i : lab(rng);
  std::shuffle(labels.begin(), labels.end(), rng);

  Instance inst;
  inst.C = Partition::from_labels(labels);
  FiniteConvexOperator& op = inst.op;
  op.prob.resize(static_cast<Eigen::Index>(n));
  for (auto& p : op.prob) p = u(rng);
  op.prob /= op.prob.sum();
  for (std::size_t i = 0; i < k; ++i) {
    Vec f(static_cast<Eigen::Index>(n));
    for (auto& x : f) x = uf(rng);
    op.densities.push_back(f / op.prob.dot(f));
  }
  op.penalties.resize(static_cast<Eigen::Index>(k));
  for (auto& a : op.penalties) a = ua(rng);
  op.penalties.array() -= op.penalties.minCoeff();
  inst.xi.resize(static_cast<Eigen::Index>(n));
  for (auto& x : inst.xi) x = gauss(rng);
  return inst;
}

Instance independence_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(2, 3), kd(1, 4);
  std::uniform_real_distribution<double> u(0.2, 1.0), ua(0.0, 0.5);
  std::normal_distribution<double> gauss;
  const std::size_t a = dim(rng), b = dim(rng), k = kd(rng);
  auto draw = [&](std::size_t size) {
    Vec v(static_cast<Eigen::Index>(size));
    for (auto& x : v) x = u(rng);
    return Vec(v / v.sum());
  };
  const Vec mu_a = draw(a);
  const Vec nu_ref = draw(b);
  Instance inst;
  FiniteConvexOperator& op = inst.op;
  op.prob.resize(static_cast<Eigen::Index>(a * b));
  std::vector<std::size_t> labels(a * b);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      op.prob(static_cast<Eigen::Index>(i * b + j)) = mu_a(static_cast<Eigen::Index>(i)) * nu_ref(static_cast<Eigen::Index>(j));
      labels[i * b + j] = i;
    }
  }
  for (std::size_t d = 0; d < k; ++d) {
    const Vec nu = draw(b);
    Vec f(static_cast<Eigen::Index>(a * b));
    for (std::size_t i = 0; i < a; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        f(static_cast<Eigen::Index>(i * b + j)) = nu(static_cast<Eigen::Index>(j)) / nu_ref(static_cast<Eigen::Index>(j));
      }
    }
    op.densities.push_back(f);
  }
  op.penalties.resize(static_cast<Eigen::Index>(k));
  for (auto& x : op.penalties) x = ua(rng);
  op.penalties.array() -= op.penalties.minCoeff();
  inst.C = Partition::from_labels(labels);
  const Vec psi = [&] {
    Vec v(static_cast<Eigen::Index>(b));
    for (auto& x : v) x = gauss(rng);
    return v;
  }();
  inst.xi.resize(static_cast<Eigen::Index>(a * b));
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) inst.xi(static_cast<Eigen::Index>(i * b + j)) = psi(static_cast<Eigen::Index>(j));
  }
  return inst;
}

}  // namespace rkb
