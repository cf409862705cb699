#include "rkb/gexp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "rkb/error.hpp"

namespace rkb {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Vec stack(const Vec& a, const Vec& b) {
  Vec s(a.size() + b.size());
  s << a, b;
  return s;
}

// Best point of a P^d grid on [-bound, bound]^d; *spacing receives the grid step.
Vec coarse_scan(const std::function<double(const Vec&)>& f, Eigen::Index d, double bound, int P, double* spacing) {
  std::size_t total = 1;
  for (Eigen::Index i = 0; i < d; ++i) total *= static_cast<std::size_t>(P);
  const double h = 2.0 * bound / (P - 1);
  Vec z(d), best_z = Vec::Zero(d);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t r = idx;
    for (Eigen::Index i = 0; i < d; ++i) {
      z(i) = -bound + h * static_cast<double>(r % static_cast<std::size_t>(P));
      r /= static_cast<std::size_t>(P);
    }
    const double v = f(z);
    if (v < best) {
      best = v;
      best_z = z;
    }
  }
  *spacing = h;
  return best_z;
}

// Pattern search for a convex f over all 3^d - 1 neighbour directions, clamped
// to the box; diagonals keep it moving along oblique kinks. Returns f(z).
double pattern_search(const std::function<double(const Vec&)>& f, Vec& z, double step, double tol, double bound) {
  const Eigen::Index d = z.size();
  std::size_t dirs = 1;
  for (Eigen::Index i = 0; i < d; ++i) dirs *= 3;
  double best = f(z);
  Vec trial(d);
  while (step > tol * (1.0 + z.lpNorm<Eigen::Infinity>())) {
    bool moved = false;
    for (std::size_t idx = 0; idx < dirs; ++idx) {
      std::size_t r = idx;
      bool zero = true;
      for (Eigen::Index i = 0; i < d; ++i) {
        const int s = static_cast<int>(r % 3) - 1;
        r /= 3;
        zero = zero && s == 0;
        trial(i) = std::clamp(z(i) + s * step, -bound, bound);
      }
      if (zero) continue;
      const double v = f(trial);
      if (v < best) {
        best = v;
        z = trial;
        moved = true;
      }
    }
    if (!moved) step /= 2;
  }
  return best;
}

}  // namespace

double Generator::operator()(double t, const Vec& z1, const Vec& z2) const {
  switch (kind) {
    case GeneratorKind::zero:
      return 0.0;
    case GeneratorKind::scaled_norm:
      return kappa * (z1.lpNorm<1>() + z2.lpNorm<1>());
    case GeneratorKind::hyperbolic:
      return kappa * (std::sqrt(1.0 + z1.squaredNorm() + z2.squaredNorm()) - 1.0);
    case GeneratorKind::user:
      return user(t, z1, z2);
  }
  return 0.0;
}

double Generator::lipschitz(std::size_t n, std::size_t m) const {
  switch (kind) {
    case GeneratorKind::zero:
      return 0.0;
    case GeneratorKind::scaled_norm:
      // |z|_1 <= sqrt(dim) |z|_2 on each block.
      return kappa * std::sqrt(static_cast<double>(std::max(n, m)));
    case GeneratorKind::hyperbolic:
      return kappa;
    case GeneratorKind::user:
      return user_lipschitz;
  }
  return 0.0;
}

Generator zero_generator() { return {}; }

Generator scaled_norm_generator(double kappa) {
  if (!(kappa >= 0.0)) throw Error(ErrorCode::invalid_value, "norm generator needs kappa >= 0");
  Generator g;
  g.kind = GeneratorKind::scaled_norm;
  g.kappa = kappa;
  std::ostringstream os;
  os << "norm:" << kappa;
  g.label = os.str();
  return g;
}

Generator hyperbolic_generator(double kappa) {
  if (!(kappa >= 0.0)) throw Error(ErrorCode::invalid_value, "hyperbolic generator needs kappa >= 0");
  Generator g;
  g.kind = GeneratorKind::hyperbolic;
  g.kappa = kappa;
  std::ostringstream os;
  os << "hyperbolic:" << kappa;
  g.label = os.str();
  return g;
}

Generator user_generator(Generator::Fn fn, double lipschitz, std::string label, bool time_dependent) {
  if (!fn) throw Error(ErrorCode::invalid_value, "user generator needs a callable");
  Generator g;
  g.kind = GeneratorKind::user;
  g.user = std::move(fn);
  g.user_lipschitz = lipschitz;
  g.time_dependent = time_dependent;
  g.label = std::move(label);
  return g;
}

Generator parse_generator(const std::string& spec) {
  if (spec == "zero") return zero_generator();
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw Error(ErrorCode::invalid_value, "unknown generator '" + spec + "'");
  const std::string kind = spec.substr(0, colon);
  double kappa = 0.0;
  try {
    std::size_t used = 0;
    kappa = std::stod(spec.substr(colon + 1), &used);
    if (used != spec.size() - colon - 1) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_value, "generator '" + spec + "' has no valid kappa");
  }
  if (kind == "norm") return scaled_norm_generator(kappa);
  if (kind == "hyperbolic") return hyperbolic_generator(kappa);
  throw Error(ErrorCode::invalid_value, "unknown generator '" + spec + "'");
}

GeneratorCheck spot_check(const Generator& g, std::size_t n, std::size_t m, std::size_t pairs, std::uint64_t seed) {
  GeneratorCheck out;
  const auto ni = static_cast<Eigen::Index>(n);
  const auto mi = static_cast<Eigen::Index>(m);
  out.normalization = std::abs(g(0.0, Vec::Zero(ni), Vec::Zero(mi)));
  out.lipschitz_excess = kNegInf;
  out.convexity_excess = kNegInf;
  const double K = g.lipschitz(n, m);
  auto rng = stream_rng(seed, 0);
  std::normal_distribution<double> gauss(0.0, 2.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto draw = [&](Eigen::Index size) {
    Vec v(size);
    for (Eigen::Index i = 0; i < size; ++i) v(i) = gauss(rng);
    return v;
  };
  for (std::size_t p = 0; p < pairs; ++p) {
    const Vec a1 = draw(ni), a2 = draw(mi), b1 = draw(ni), b2 = draw(mi);
    const double t = unif(rng);
    const double ga = g(t, a1, a2), gb = g(t, b1, b2);
    const double lip = std::abs(ga - gb) - K * ((a1 - b1).norm() + (a2 - b2).norm());
    const double mid = g(t, 0.5 * (a1 + b1), 0.5 * (a2 + b2)) - 0.5 * (ga + gb);
    out.lipschitz_excess = std::max(out.lipschitz_excess, lip);
    out.convexity_excess = std::max(out.convexity_excess, mid);
  }
  return out;
}

ConcaveDual::ConcaveDual(Generator g, std::size_t n, std::size_t m, NumericDualOptions options)
    : g_(std::move(g)), n_(n), m_(m), opt_(options) {
  switch (g_.kind) {
    case GeneratorKind::zero:
      radius_ = 0.0;
      break;
    case GeneratorKind::scaled_norm:
      radius_ = g_.kappa;
      break;
    case GeneratorKind::hyperbolic:
      radius_ = g_.kappa / std::sqrt(static_cast<double>(n + m));
      break;
    case GeneratorKind::user: {
      if (n + m > 3) throw Error(ErrorCode::invalid_value, "numeric dual supports n + m <= 3");
      // The domain is convex, so the box fits iff every corner does.
      const std::size_t d = n + m;
      auto box_fits = [&](double r) {
        for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
          Vec th(static_cast<Eigen::Index>(d));
          for (std::size_t i = 0; i < d; ++i) th(static_cast<Eigen::Index>(i)) = (mask >> i & 1u) ? r : -r;
          if (!std::isfinite(numeric(0.0, th.head(static_cast<Eigen::Index>(n)), th.tail(static_cast<Eigen::Index>(m))))) {
            return false;
          }
        }
        return true;
      };
      double hi = std::max(g_.user_lipschitz, 0.0);
      if (box_fits(hi)) {
        radius_ = hi;
        break;
      }
      double lo = 0.0;
      for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        (box_fits(mid) ? lo : hi) = mid;
      }
      radius_ = lo;
      break;
    }
  }
}

double ConcaveDual::operator()(double t, const Vec& theta1, const Vec& theta2) const {
  switch (g_.kind) {
    case GeneratorKind::zero:
      return (theta1.size() == 0 || theta1.isZero(0.0)) && (theta2.size() == 0 || theta2.isZero(0.0)) ? 0.0 : kNegInf;
    case GeneratorKind::scaled_norm: {
      const double s = std::max(theta1.size() ? theta1.cwiseAbs().maxCoeff() : 0.0,
                                theta2.size() ? theta2.cwiseAbs().maxCoeff() : 0.0);
      return s <= g_.kappa * (1.0 + 1e-12) ? 0.0 : kNegInf;
    }
    case GeneratorKind::hyperbolic: {
      const double s = theta1.squaredNorm() + theta2.squaredNorm();
      const double k2 = g_.kappa * g_.kappa;
      if (s > k2 * (1.0 + 1e-12)) return kNegInf;
      return std::sqrt(std::max(k2 - s, 0.0)) - g_.kappa;
    }
    case GeneratorKind::user:
      return numeric(t, theta1, theta2);
  }
  return kNegInf;
}

bool ConcaveDual::in_domain(double t, const Vec& theta1, const Vec& theta2) const {
  return std::isfinite((*this)(t, theta1, theta2));
}

double ConcaveDual::grid_inf(double t, const Vec& theta, double z_max, bool* on_boundary, Vec* argmin) const {
  const Eigen::Index d = theta.size();
  const auto nn = static_cast<Eigen::Index>(n_);
  Vec z1(nn), z2(d - nn);
  auto phi = [&](const Vec& z) {
    z1 = z.head(nn);
    z2 = z.tail(d - nn);
    return g_(t, z1, z2) + z.dot(theta);
  };
  double h0 = 0.0;
  Vec z = coarse_scan(phi, d, z_max, std::max(opt_.points_per_axis, 3), &h0);
  const double best = pattern_search(phi, z, h0 / 2, opt_.step_tolerance, z_max);
  if (on_boundary) *on_boundary = d > 0 && z.lpNorm<Eigen::Infinity>() > z_max - h0 / 2;
  if (argmin) *argmin = z;
  return best;
}

double ConcaveDual::numeric(double t, const Vec& theta1, const Vec& theta2, Vec* argmin) const {
  const Vec theta = stack(theta1, theta2);
  const double z = opt_.z_max;
  bool boundary = false;
  const double v1 = grid_inf(t, theta, z, &boundary, argmin);
  // An interior minimiser of a convex function is global.
  if (!boundary) return v1;
  // Boundary descent: if enlarging the z-box keeps lowering the infimum, the
  // linear term dominates and the dual is -inf.
  Vec z2;
  const double v2 = grid_inf(t, theta, 2.0 * z, nullptr, &z2);
  if (v2 < v1 - std::max(opt_.divergence_threshold, 1e-3 * z) * (1.0 + std::abs(v1))) return kNegInf;
  if (v2 < v1 && argmin) *argmin = z2;
  return std::min(v1, v2);
}

double ConcaveDual::evaluate(double t, const Vec& theta1, const Vec& theta2, Vec* gradient) const {
  const Vec theta = stack(theta1, theta2);
  switch (g_.kind) {
    case GeneratorKind::user: {
      Vec z;
      const double v = numeric(t, theta1, theta2, &z);
      if (gradient && std::isfinite(v)) *gradient = z;
      return v;
    }
    case GeneratorKind::hyperbolic: {
      const double v = (*this)(t, theta1, theta2);
      if (gradient && std::isfinite(v)) {
        *gradient = -theta / std::sqrt(std::max(g_.kappa * g_.kappa - theta.squaredNorm(), 1e-12));
      }
      return v;
    }
    default: {
      const double v = (*this)(t, theta1, theta2);
      if (gradient && std::isfinite(v)) *gradient = Vec::Zero(theta.size());
      return v;
    }
  }
}

Vec ConcaveDual::box_argmax(double t, const Vec& v, double mu) const {
  const Eigen::Index d = v.size();
  const auto nn = static_cast<Eigen::Index>(n_);
  Vec z1(nn), z2(d - nn);
  auto g = [&](const Vec& z) {
    z1 = z.head(nn);
    z2 = z.tail(d - nn);
    return g_(t, z1, z2);
  };
  // max_theta inf_z g(z) + <z + v, theta> = inf_z g(z) + mu |z + v|_1 on the box.
  auto phi = [&](const Vec& z) { return g(z) + mu * (z + v).lpNorm<1>(); };
  const double bound = 2.0 * opt_.z_max;
  double h0 = 0.0;
  Vec z = coarse_scan(phi, d, bound, std::max(opt_.points_per_axis, 3), &h0);
  pattern_search(phi, z, h0 / 2, opt_.step_tolerance, bound);
  // Saddle conditions: theta_i = mu sgn(z_i + v_i) off the kink, otherwise
  // theta = -grad g(z) there.
  Vec theta(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double r = z(i) + v(i);
    if (std::abs(r) > 1e-7 * (1.0 + std::abs(v(i)))) {
      theta(i) = r > 0.0 ? mu : -mu;
    } else {
      const double h = 1e-6 * (1.0 + std::abs(z(i)));
      Vec a = z, b = z;
      a(i) += h;
      b(i) -= h;
      theta(i) = std::clamp(-(g(a) - g(b)) / (2.0 * h), -mu, mu);
    }
  }
  return theta;
}

ConcaveDual concave_dual(const Generator& g, std::size_t n, std::size_t m, NumericDualOptions options) {
  return ConcaveDual(g, n, m, options);
}

PenaltyValue penalty_eval(const ThetaPath& theta, const ConcaveDual& G, const TimeGrid& grid, double t) {
  if (!theta.has_values() || !theta.is_deterministic()) {
    throw Error(ErrorCode::invalid_value, "random theta needs a simulated batch for its penalty");
  }
  const std::size_t K = grid.index_of(t);
  if (theta.theta1().size() < K) throw Error(ErrorCode::grid_mismatch, "theta path shorter than the grid");
  PenaltyValue out;
  for (std::size_t k = 0; k < K; ++k) {
    const double v = G(grid.time(k), theta.theta1()[k], theta.theta2()[k]);
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::domain_violation, "theta leaves the domain of G at grid index " + std::to_string(k));
    }
    out.alpha += v * grid.dt();
  }
  return out;
}

PenaltyValue penalty_eval(const ModelCoefficients& model, const ThetaPath& theta, const ConcaveDual& G, double t,
                          const PathBatch& batch) {
  const TimeGrid& grid = batch.grid;
  const std::size_t K = grid.index_of(t);
  const CoefficientCache cache = CoefficientCache::build(model);
  std::vector<double> samples(batch.paths.size());
  bool outside = false;
  const auto count = static_cast<std::int64_t>(batch.paths.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < count; ++p) {
    const SamplePath& sp = batch.paths[static_cast<std::size_t>(p)];
    const Vec f = density_along(model, cache, grid, theta, sp);
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const ThetaValue th = theta.at(k, grid.time(k), sp.x.col(kk), sp.m_obs.col(kk));
      const double v = G(grid.time(k), th.theta1, th.theta2);
      if (!std::isfinite(v)) {
#pragma omp atomic write
        outside = true;
        break;
      }
      acc += f(kk) * v * grid.dt();
    }
    samples[static_cast<std::size_t>(p)] = acc;
  }
  if (outside) throw Error(ErrorCode::domain_violation, "theta leaves the domain of G on a simulated path");
  const Estimate e = estimate(samples);
  return {e.mean, e.std_error};
}

ConcavityReport penalty_concavity_check(const ModelCoefficients& model, const ConcaveDual& G,
                                        const std::vector<ConcavityTriple>& triples, double t,
                                        const PathBatch& batch) {
  const TimeGrid& grid = batch.grid;
  const std::size_t K = grid.index_of(t);
  const CoefficientCache cache = CoefficientCache::build(model);
  ConcavityReport report;
  report.max_violation = kNegInf;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const ConcavityTriple& tr = triples[i];
    const double lambda = tr.lambda;
    const std::vector<ThetaPath> mix = mixture_theta(model, tr.a, tr.b, lambda, batch);
    std::vector<double> diff(batch.paths.size());
    const auto count = static_cast<std::int64_t>(batch.paths.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < count; ++p) {
      const auto pi = static_cast<std::size_t>(p);
      const SamplePath& sp = batch.paths[pi];
      const Vec fa = density_along(model, cache, grid, tr.a, sp);
      const Vec fb = density_along(model, cache, grid, tr.b, sp);
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const double tk = grid.time(k);
        const ThetaValue a = tr.a.at(k, tk, sp.x.col(kk), sp.m_obs.col(kk));
        const ThetaValue b = tr.b.at(k, tk, sp.x.col(kk), sp.m_obs.col(kk));
        const double wa = lambda * fa(kk);
        const double wb = (1.0 - lambda) * fb(kk);
        // The density of the mixture measure is the mixture of densities.
        const double mixed = (wa + wb) * G(tk, mix[pi].theta1()[k], mix[pi].theta2()[k]);
        acc += (wa * G(tk, a.theta1, a.theta2) + wb * G(tk, b.theta1, b.theta2) - mixed) * grid.dt();
      }
      diff[pi] = acc;
    }
    const Estimate e = estimate(diff);
    const double score = e.std_error > 0.0 ? e.mean / e.std_error : (e.mean > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    if (e.mean > report.max_violation) {
      report.max_violation = e.mean;
      report.std_error = e.std_error;
      report.worst = i;
    }
    report.max_score = std::max(report.max_score, score);
  }
  if (triples.empty()) report.max_violation = 0.0;
  return report;
}

namespace {

// Scalar generator evaluation without temporaries for the built-ins.
double g_scalar(const Generator& g, double t, double z1, double z2) {
  switch (g.kind) {
    case GeneratorKind::zero:
      return 0.0;
    case GeneratorKind::scaled_norm:
      return g.kappa * (std::abs(z1) + std::abs(z2));
    case GeneratorKind::hyperbolic:
      return g.kappa * (std::sqrt(1.0 + z1 * z1 + z2 * z2) - 1.0);
    case GeneratorKind::user:
      return g.user(t, Vec::Constant(1, z1), Vec::Constant(1, z2));
  }
  return 0.0;
}

struct ScalarPaths {
  Mat x;   // paths x (N+1)
  Mat m;   // paths x (N+1)
  Mat dw;  // paths x N
  Mat dv;  // paths x N
};

Mat basis(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& m, int degree) {
  // Standardize per step so the columns are comparable; a constant state
  // (t = 0) leaves only the intercept.
  auto standardize = [](const Eigen::Ref<const Vec>& v) {
    const double mean = v.mean();
    const double sd = std::sqrt((v.array() - mean).square().mean());
    return sd > 1e-14 * (1.0 + std::abs(mean)) ? Vec((v.array() - mean) / sd) : Vec(Vec::Zero(v.size()));
  };
  const Vec xs = standardize(x);
  const Vec ms = standardize(m);
  const Eigen::Index cols = degree >= 2 ? 6 : (degree == 1 ? 3 : 1);
  Mat phi(x.size(), cols);
  phi.col(0).setOnes();
  if (degree >= 1) {
    phi.col(1) = xs;
    phi.col(2) = ms;
  }
  if (degree >= 2) {
    phi.col(3) = xs.array().square();
    phi.col(4) = xs.array() * ms.array();
    phi.col(5) = ms.array().square();
  }
  return phi;
}

double backward_sweep(const Generator& g, const ScalarPaths& sp, const std::vector<std::size_t>& rows,
                      const Vec& terminal, const ModelCoefficients& model, const TimeGrid& grid, int degree,
                      std::size_t* min_rank) {
  const auto P = static_cast<Eigen::Index>(rows.size());
  const std::size_t N = grid.steps();
  const double dt = grid.dt();
  Vec Y(P), xk(P), mk(P), dw(P), dv(P);
  for (Eigen::Index i = 0; i < P; ++i) Y(i) = terminal(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]));
  for (std::size_t kk = N; kk-- > 0;) {
    const auto k = static_cast<Eigen::Index>(kk);
    for (Eigen::Index i = 0; i < P; ++i) {
      const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
      xk(i) = sp.x(r, k);
      mk(i) = sp.m(r, k);
      dw(i) = sp.dw(r, k);
      dv(i) = sp.dv(r, k);
    }
    const Mat phi = basis(xk, mk, degree);
    Eigen::ColPivHouseholderQR<Mat> qr(phi);
    qr.setThreshold(1e-10);
    if (min_rank) *min_rank = std::min(*min_rank, static_cast<std::size_t>(qr.rank()));
    const Vec yhat = phi * qr.solve(Y);
    const Vec resid = Y - yhat;
    const double q = model.Q[kk](0, 0);
    const double r = model.R[kk](0, 0);
    Vec z1 = Vec::Zero(P), z2 = Vec::Zero(P);
    if (q > 0.0) z1 = phi * qr.solve(Vec(resid.cwiseProduct(dw))) / (q * dt);
    z2 = phi * qr.solve(Vec(resid.cwiseProduct(dv))) / (r * dt);
    const double t = grid.time(kk);
    for (Eigen::Index i = 0; i < P; ++i) Y(i) = yhat(i) + g_scalar(g, t, z1(i), z2(i)) * dt;
  }
  // All paths share the initial state, so Y is constant at t = 0.
  return Y.mean();
}

}  // namespace

BsdeResult bsde_solve(const Generator& g, const Terminal& xi, const ModelCoefficients& model, const TimeGrid& grid,
                      std::size_t n_paths, std::uint64_t seed, const BsdeOptions& options) {
  if (model.n != 1 || model.m != 1) throw Error(ErrorCode::dimension_mismatch, "bsde_solve handles scalar models");
  if (n_paths < 2) throw Error(ErrorCode::invalid_value, "bsde_solve needs at least two paths");
  const std::size_t N = grid.steps();
  const PathBatch batch = simulate_paths(model, grid, ThetaPath::zero(1, 1, grid.points()), n_paths, seed);
  const auto P = static_cast<Eigen::Index>(n_paths);
  ScalarPaths sp{Mat(P, static_cast<Eigen::Index>(N + 1)), Mat(P, static_cast<Eigen::Index>(N + 1)),
                 Mat(P, static_cast<Eigen::Index>(N)), Mat(P, static_cast<Eigen::Index>(N))};
  Vec terminal(P);
  for (Eigen::Index p = 0; p < P; ++p) {
    const SamplePath& s = batch.paths[static_cast<std::size_t>(p)];
    sp.x.row(p) = s.x.row(0);
    sp.m.row(p) = s.m_obs.row(0);
    sp.dw.row(p) = s.dw.row(0);
    sp.dv.row(p) = s.dv.row(0);
    terminal(p) = xi(s.x(0, static_cast<Eigen::Index>(N)), s.m_obs(0, static_cast<Eigen::Index>(N)));
  }

  BsdeResult out;
  out.basis_size = options.degree >= 2 ? 6 : (options.degree == 1 ? 3 : 1);
  out.min_rank = out.basis_size;
  std::vector<std::size_t> rows(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) rows[i] = i;
  out.y0 = backward_sweep(g, sp, rows, terminal, model, grid, options.degree, &out.min_rank);

  // Bootstrap over paths; each replicate reruns the whole backward regression.
  std::vector<double> reps(options.bootstrap);
  for (std::size_t b = 0; b < options.bootstrap; ++b) {
    auto rng = stream_rng(seed ^ 0x5eedb007u, b);
    std::uniform_int_distribution<std::size_t> pick(0, n_paths - 1);
    std::vector<std::size_t> sample(n_paths);
    for (auto& s : sample) s = pick(rng);
    reps[b] = backward_sweep(g, sp, sample, terminal, model, grid, options.degree, nullptr);
  }
  if (reps.size() > 1) {
    double mean = 0.0;
    for (double r : reps) mean += r;
    mean /= static_cast<double>(reps.size());
    double ss = 0.0;
    for (double r : reps) ss += (r - mean) * (r - mean);
    out.std_error = std::sqrt(ss / static_cast<double>(reps.size() - 1));
  }
  return out;
}

DualValue dual_value(const Terminal& xi, const ConcaveDual& G, const ModelCoefficients& model, const TimeGrid& grid,
                     const std::vector<ThetaPath>& family, std::size_t n_paths, std::uint64_t seed) {
  if (family.empty()) throw Error(ErrorCode::invalid_value, "dual_value needs a non-empty family");
  DualValue best;
  best.value = kNegInf;
  SimulationOptions opt;
  opt.storage = PathStorage::terminal;
  for (std::size_t i = 0; i < family.size(); ++i) {
    const PenaltyValue alpha = penalty_eval(family[i], G, grid, grid.horizon());
    const PathBatch batch = simulate_paths(model, grid, family[i], n_paths, seed, opt);
    std::vector<double> samples(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) samples[p] = xi(batch.paths[p].x(0, 0), batch.paths[p].m_obs(0, 0));
    const Estimate e = estimate(samples);
    if (e.mean + alpha.alpha > best.value) {
      best.value = e.mean + alpha.alpha;
      best.std_error = e.std_error;
      best.argmax = i;
      best.expectation = e.mean;
      best.penalty = alpha.alpha;
    }
  }
  return best;
}

std::vector<ThetaPath> constant_theta_family(const ConcaveDual& G, const TimeGrid& grid, double radius, double spacing) {
  if (G.n() != 1 || G.m() != 1) throw Error(ErrorCode::dimension_mismatch, "constant_theta_family is scalar");
  if (!(spacing > 0.0)) throw Error(ErrorCode::invalid_value, "family spacing must be positive");
  std::vector<ThetaPath> family;
  const auto steps = static_cast<int>(std::floor(radius / spacing + 1e-9));
  for (int i = -steps; i <= steps; ++i) {
    for (int j = -steps; j <= steps; ++j) {
      const Vec t1 = Vec::Constant(1, i * spacing);
      const Vec t2 = Vec::Constant(1, j * spacing);
      if (G.in_domain(0.0, t1, t2)) family.push_back(ThetaPath::constant(t1, t2, grid.points()));
    }
  }
  return family;
}

}  // namespace rkb
