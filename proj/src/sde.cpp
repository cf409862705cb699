#include "rkb/sde.hpp"

#include <cmath>
#include <random>
#include <string>

#include "rkb/error.hpp"

namespace rkb {

ThetaPath ThetaPath::zero(std::size_t n, std::size_t m, std::size_t points) {
  return constant(Vec::Zero(static_cast<Eigen::Index>(n)), Vec::Zero(static_cast<Eigen::Index>(m)), points);
}

ThetaPath ThetaPath::constant(const Vec& theta1, const Vec& theta2, std::size_t points) {
  return deterministic(std::vector<Vec>(points, theta1), std::vector<Vec>(points, theta2));
}

ThetaPath ThetaPath::deterministic(std::vector<Vec> theta1, std::vector<Vec> theta2) {
  if (theta1.size() != theta2.size() || theta1.empty()) {
    throw Error(ErrorCode::dimension_mismatch, "theta1 and theta2 must cover the same non-empty grid");
  }
  ThetaPath p;
  p.tag_ = Adaptedness::deterministic;
  p.n_ = static_cast<std::size_t>(theta1.front().size());
  p.m_ = static_cast<std::size_t>(theta2.front().size());
  p.theta1_ = std::move(theta1);
  p.theta2_ = std::move(theta2);
  return p;
}

ThetaPath ThetaPath::feedback(Adaptedness tag, std::size_t n, std::size_t m, Feedback fn) {
  if (tag == Adaptedness::deterministic) {
    throw Error(ErrorCode::invalid_value, "feedback theta needs an observation or signal feedback tag");
  }
  ThetaPath p;
  p.tag_ = tag;
  p.n_ = n;
  p.m_ = m;
  p.fn_ = std::move(fn);
  return p;
}

ThetaPath ThetaPath::realized(std::vector<Vec> theta1, std::vector<Vec> theta2) {
  ThetaPath p = deterministic(std::move(theta1), std::move(theta2));
  p.tag_ = Adaptedness::signal_feedback;
  return p;
}

ThetaValue ThetaPath::at(std::size_t k, double t, const Vec& x, const Vec& m_obs) const {
  if (fn_) return fn_(k, t, tag_ == Adaptedness::signal_feedback ? x : m_obs);
  if (k >= theta1_.size()) throw Error(ErrorCode::grid_mismatch, "theta path shorter than the grid");
  return {theta1_[k], theta2_[k]};
}

double ThetaPath::sup_norm() const {
  double s = 0.0;
  for (const auto& v : theta1_) s = std::max(s, v.size() ? v.cwiseAbs().maxCoeff() : 0.0);
  for (const auto& v : theta2_) s = std::max(s, v.size() ? v.cwiseAbs().maxCoeff() : 0.0);
  return s;
}

void check_theta_value(const ThetaValue& v, double mu, std::size_t k) {
  const double tol = 1e-12 * std::max(1.0, mu);
  const double s1 = v.theta1.size() ? v.theta1.cwiseAbs().maxCoeff() : 0.0;
  const double s2 = v.theta2.size() ? v.theta2.cwiseAbs().maxCoeff() : 0.0;
  if (!(std::max(s1, s2) <= mu + tol)) {
    throw Error(ErrorCode::bound_violation, "theta = " + std::to_string(std::max(s1, s2)) + " exceeds mu = " +
                                                std::to_string(mu) + " at grid index " + std::to_string(k));
  }
}

void ThetaPath::check_bound(double mu) const {
  for (std::size_t k = 0; k < theta1_.size(); ++k) check_theta_value({theta1_[k], theta2_[k]}, mu, k);
}

ThetaPath ThetaPath::scaled(double factor) const {
  ThetaPath p = *this;
  if (fn_) {
    auto fn = fn_;
    p.fn_ = [fn, factor](std::size_t k, double t, const Vec& s) {
      ThetaValue v = fn(k, t, s);
      return ThetaValue{v.theta1 * factor, v.theta2 * factor};
    };
    return p;
  }
  for (auto& v : p.theta1_) v *= factor;
  for (auto& v : p.theta2_) v *= factor;
  return p;
}

namespace {

void check_dims(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta) {
  if (model.B.size() != grid.points()) {
    throw Error(ErrorCode::grid_mismatch, "model coefficients do not match the time grid");
  }
  if (theta.n() != model.n || theta.m() != model.m) {
    throw Error(ErrorCode::dimension_mismatch, "theta dimensions do not match the model");
  }
  if (theta.has_values() && theta.theta1().size() < grid.steps()) {
    throw Error(ErrorCode::grid_mismatch, "theta path shorter than the grid");
  }
}

// Scalar model: same recursion and operation order as the general case, without
// the small dynamic-size matrix products.
SamplePath simulate_scalar(const ModelCoefficients& model, const CoefficientCache& cache, const TimeGrid& grid,
                           const ThetaPath& theta, std::uint64_t seed, std::size_t index, const SimulationOptions& opt) {
  const std::size_t N = grid.steps();
  const double dt = grid.dt();
  const double sdt = std::sqrt(dt);
  const bool full = opt.storage == PathStorage::full;

  auto rng = stream_rng(seed, index);
  std::normal_distribution<double> gauss;

  SamplePath sp;
  if (full) {
    sp.dw.resize(1, static_cast<Eigen::Index>(N));
    sp.dv.resize(1, static_cast<Eigen::Index>(N));
    sp.x.resize(1, static_cast<Eigen::Index>(N + 1));
    sp.m_obs.resize(1, static_cast<Eigen::Index>(N + 1));
    sp.f_theta.resize(static_cast<Eigen::Index>(N + 1));
    sp.theta1.resize(1, static_cast<Eigen::Index>(N));
    sp.theta2.resize(1, static_cast<Eigen::Index>(N));
    sp.x(0, 0) = model.x0(0);
    sp.m_obs(0, 0) = 0.0;
    sp.f_theta(0) = 1.0;
  }
  double x = model.x0(0), mo = 0.0, log_f = 0.0;
  Vec xv(1), mv(1);
  for (std::size_t k = 0; k < N; ++k) {
    double th1, th2;
    if (theta.has_values()) {
      th1 = theta.theta1()[k](0);
      th2 = theta.theta2()[k](0);
      if (std::isfinite(opt.mu) && index == 0) check_theta_value({theta.theta1()[k], theta.theta2()[k]}, opt.mu, k);
    } else {
      xv(0) = x;
      mv(0) = mo;
      const ThetaValue fb = theta.at(k, grid.time(k), xv, mv);
      if (std::isfinite(opt.mu)) check_theta_value(fb, opt.mu, k);
      th1 = fb.theta1(0);
      th2 = fb.theta2(0);
    }
    const double xi = gauss(rng);
    const double zeta = gauss(rng);
    const double dw = cache.Q_sqrt[k](0, 0) * xi * sdt;
    const double dv = cache.R_sqrt[k](0, 0) * zeta * sdt;
    const double drift_x = model.B[k](0, 0) * x + (model.b[k](0) - th1);
    const double drift_m = model.H[k](0, 0) * x + (model.h[k](0) - th2);
    const double kappa1 = cache.Q_inv_sqrt[k](0, 0) * th1;
    const double kappa2 = cache.R_inv_sqrt[k](0, 0) * th2;
    log_f += -(kappa1 * xi + kappa2 * zeta) * sdt + 0.5 * (kappa1 * kappa1 + kappa2 * kappa2) * dt;
    x += drift_x * dt + dw;
    mo += drift_m * dt + dv;
    if (full) {
      const auto c = static_cast<Eigen::Index>(k);
      sp.dw(0, c) = dw;
      sp.dv(0, c) = dv;
      sp.theta1(0, c) = th1;
      sp.theta2(0, c) = th2;
      sp.x(0, c + 1) = x;
      sp.m_obs(0, c + 1) = mo;
      sp.f_theta(c + 1) = std::exp(log_f);
    }
  }
  if (!full) {
    sp.x = Mat::Constant(1, 1, x);
    sp.m_obs = Mat::Constant(1, 1, mo);
    sp.f_theta = Vec::Constant(1, std::exp(log_f));
  }
  return sp;
}

SamplePath simulate_one(const ModelCoefficients& model, const CoefficientCache& cache, const TimeGrid& grid,
                        const ThetaPath& theta, std::uint64_t seed, std::size_t index, const SimulationOptions& opt) {
  if (model.n == 1 && model.m == 1) return simulate_scalar(model, cache, grid, theta, seed, index, opt);
  const auto n = static_cast<Eigen::Index>(model.n);
  const auto m = static_cast<Eigen::Index>(model.m);
  const std::size_t N = grid.steps();
  const double dt = grid.dt();
  const double sdt = std::sqrt(dt);
  const bool full = opt.storage == PathStorage::full;

  auto rng = stream_rng(seed, index);
  std::normal_distribution<double> gauss;

  SamplePath sp;
  if (full) {
    sp.dw.resize(n, static_cast<Eigen::Index>(N));
    sp.dv.resize(m, static_cast<Eigen::Index>(N));
    sp.x.resize(n, static_cast<Eigen::Index>(N + 1));
    sp.m_obs.resize(m, static_cast<Eigen::Index>(N + 1));
    sp.f_theta.resize(static_cast<Eigen::Index>(N + 1));
    sp.theta1.resize(n, static_cast<Eigen::Index>(N));
    sp.theta2.resize(m, static_cast<Eigen::Index>(N));
  }

  Vec x = model.x0;
  Vec mo = Vec::Zero(m);
  Vec xi(n), zeta(m), dw(n), dv(m), drift_x(n), drift_m(m), kappa1(n), kappa2(m);
  double log_f = 0.0;
  if (full) {
    sp.x.col(0) = x;
    sp.m_obs.col(0) = mo;
    sp.f_theta(0) = 1.0;
  }
  ThetaValue fb;
  for (std::size_t k = 0; k < N; ++k) {
    const Vec* th1;
    const Vec* th2;
    if (theta.has_values()) {
      th1 = &theta.theta1()[k];
      th2 = &theta.theta2()[k];
      if (std::isfinite(opt.mu) && index == 0) check_theta_value({*th1, *th2}, opt.mu, k);
    } else {
      fb = theta.at(k, grid.time(k), x, mo);
      if (std::isfinite(opt.mu)) check_theta_value(fb, opt.mu, k);
      th1 = &fb.theta1;
      th2 = &fb.theta2;
    }
    for (Eigen::Index i = 0; i < n; ++i) xi(i) = gauss(rng);
    for (Eigen::Index i = 0; i < m; ++i) zeta(i) = gauss(rng);
    dw.noalias() = cache.Q_sqrt[k] * xi;
    dw *= sdt;
    dv.noalias() = cache.R_sqrt[k] * zeta;
    dv *= sdt;

    drift_x.noalias() = model.B[k] * x;
    drift_x += model.b[k] - *th1;
    drift_m.noalias() = model.H[k] * x;
    drift_m += model.h[k] - *th2;

    // dP^theta/dP along a path generated under P^theta:
    // log f += -kappa' xi sqrt(dt) + |kappa|^2 dt / 2 with kappa the standardized shift.
    kappa1.noalias() = cache.Q_inv_sqrt[k] * *th1;
    kappa2.noalias() = cache.R_inv_sqrt[k] * *th2;
    log_f += -(kappa1.dot(xi) + kappa2.dot(zeta)) * sdt + 0.5 * (kappa1.squaredNorm() + kappa2.squaredNorm()) * dt;

    x += drift_x * dt + dw;
    mo += drift_m * dt + dv;
    if (full) {
      sp.dw.col(static_cast<Eigen::Index>(k)) = dw;
      sp.dv.col(static_cast<Eigen::Index>(k)) = dv;
      sp.theta1.col(static_cast<Eigen::Index>(k)) = *th1;
      sp.theta2.col(static_cast<Eigen::Index>(k)) = *th2;
      sp.x.col(static_cast<Eigen::Index>(k + 1)) = x;
      sp.m_obs.col(static_cast<Eigen::Index>(k + 1)) = mo;
      sp.f_theta(static_cast<Eigen::Index>(k + 1)) = std::exp(log_f);
    }
  }
  if (!full) {
    sp.x = x;
    sp.m_obs = mo;
    sp.f_theta = Vec::Constant(1, std::exp(log_f));
  }
  return sp;
}

}  // namespace

PathBatch simulate_paths(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta,
                         std::size_t n_paths, std::uint64_t seed, const SimulationOptions& options) {
  check_dims(model, grid, theta);
  if (theta.has_values() && std::isfinite(options.mu)) theta.check_bound(options.mu);
  const CoefficientCache cache = CoefficientCache::build(model);

  PathBatch batch;
  batch.seed = seed;
  batch.grid = grid;
  batch.storage = options.storage;
  batch.paths.resize(n_paths);

  const auto count = static_cast<std::int64_t>(n_paths);
  if (options.execution == Execution::parallel) {
    // Exceptions may not cross the OpenMP region; capture the first one.
    std::exception_ptr failure;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < count; ++p) {
      try {
        batch.paths[static_cast<std::size_t>(p)] =
            simulate_one(model, cache, grid, theta, seed, static_cast<std::size_t>(p), options);
      } catch (...) {
#pragma omp critical(rkb_sim_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    for (std::int64_t p = 0; p < count; ++p) {
      batch.paths[static_cast<std::size_t>(p)] =
          simulate_one(model, cache, grid, theta, seed, static_cast<std::size_t>(p), options);
    }
  }
  return batch;
}

Vec density_along(const ModelCoefficients& model, const CoefficientCache& cache, const TimeGrid& grid,
                  const ThetaPath& theta, const SamplePath& path) {
  const std::size_t N = grid.steps();
  const double dt = grid.dt();
  if (path.dw.cols() != static_cast<Eigen::Index>(N)) {
    throw Error(ErrorCode::grid_mismatch, "density_path needs a batch stored with full increments");
  }
  Vec f(static_cast<Eigen::Index>(N + 1));
  f(0) = 1.0;
  double log_f = 0.0;
  Vec kappa1, kappa2;
  for (std::size_t k = 0; k < N; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const ThetaValue th = theta.at(k, grid.time(k), path.x.col(kk), path.m_obs.col(kk));
    kappa1.noalias() = cache.Q_inv_sqrt[k] * th.theta1;
    kappa2.noalias() = cache.R_inv_sqrt[k] * th.theta2;
    // Standardized reference increments Q^{-1/2} dw, R^{-1/2} dv.
    const double stoch = kappa1.dot(cache.Q_inv_sqrt[k] * path.dw.col(kk)) + kappa2.dot(cache.R_inv_sqrt[k] * path.dv.col(kk));
    log_f += -stoch - 0.5 * (kappa1.squaredNorm() + kappa2.squaredNorm()) * dt;
    f(kk + 1) = std::exp(log_f);
  }
  (void)model;
  return f;
}

std::vector<Vec> density_path(const ModelCoefficients& model, const ThetaPath& theta, const PathBatch& batch) {
  check_dims(model, batch.grid, theta);
  const CoefficientCache cache = CoefficientCache::build(model);
  std::vector<Vec> out(batch.paths.size());
  const auto count = static_cast<std::int64_t>(batch.paths.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < count; ++p) {
    out[static_cast<std::size_t>(p)] = density_along(model, cache, batch.grid, theta, batch.paths[static_cast<std::size_t>(p)]);
  }
  return out;
}

MomentCheck girsanov_moment_check(double c, double alpha, double t, std::size_t n_paths, std::uint64_t seed) {
  if (!(alpha > 1.0)) throw Error(ErrorCode::invalid_value, "alpha must exceed 1");
  if (!(t >= 0.0)) throw Error(ErrorCode::invalid_value, "t must be non-negative");
  MomentCheck out;
  const double bound = std::exp(0.5 * (alpha * alpha - alpha) * t * c * c);
  out.lower_bound = bound;
  out.upper_bound = bound;
  std::vector<double> samples(n_paths);
  const double st = std::sqrt(t);
  const auto count = static_cast<std::int64_t>(n_paths);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < count; ++p) {
    auto rng = stream_rng(seed, static_cast<std::uint64_t>(p));
    std::normal_distribution<double> gauss;
    const double w = st * gauss(rng);
    const double zeta = c * w - 0.5 * c * c * t;
    samples[static_cast<std::size_t>(p)] = std::exp(alpha * zeta);
  }
  const Estimate e = estimate(samples);
  out.estimate = e.mean;
  out.std_error = e.std_error;
  return out;
}

std::vector<ThetaPath> mixture_theta(const ModelCoefficients& model, const ThetaPath& theta_a,
                                     const ThetaPath& theta_b, double lambda, const PathBatch& batch) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::invalid_value, "lambda must lie in [0, 1]");
  const TimeGrid& grid = batch.grid;
  const CoefficientCache cache = CoefficientCache::build(model);
  std::vector<ThetaPath> out(batch.paths.size());
  const auto count = static_cast<std::int64_t>(batch.paths.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < count; ++p) {
    const SamplePath& sp = batch.paths[static_cast<std::size_t>(p)];
    const Vec fa = density_along(model, cache, grid, theta_a, sp);
    const Vec fb = density_along(model, cache, grid, theta_b, sp);
    std::vector<Vec> t1(grid.points()), t2(grid.points());
    for (std::size_t k = 0; k < grid.points(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const std::size_t ks = std::min(k, grid.steps() - 1);
      const auto ksi = static_cast<Eigen::Index>(ks);
      const ThetaValue a = theta_a.at(ks, grid.time(ks), sp.x.col(ksi), sp.m_obs.col(ksi));
      const ThetaValue b = theta_b.at(ks, grid.time(ks), sp.x.col(ksi), sp.m_obs.col(ksi));
      const double wa = lambda * fa(kk);
      const double wb = (1.0 - lambda) * fb(kk);
      const double denom = wa + wb;
      if (a.theta1 == b.theta1 && a.theta2 == b.theta2) {
        t1[k] = a.theta1;
        t2[k] = a.theta2;
      } else {
        t1[k] = (wa * a.theta1 + wb * b.theta1) / denom;
        t2[k] = (wa * a.theta2 + wb * b.theta2) / denom;
      }
    }
    out[static_cast<std::size_t>(p)] = ThetaPath::realized(std::move(t1), std::move(t2));
  }
  return out;
}

}  // namespace rkb
