#include "rkb/robust.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "rkb/error.hpp"

namespace rkb {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Vec stacked(const ThetaPath& theta, std::size_t k) {
  const Vec& a = theta.theta1()[k];
  const Vec& b = theta.theta2()[k];
  Vec s(a.size() + b.size());
  s << a, b;
  return s;
}

double eval_G(const ConcaveDual& G, double t, const Vec& theta) {
  const auto n = static_cast<Eigen::Index>(G.n());
  return G(t, theta.head(n), theta.tail(theta.size() - n));
}

void require_stored(const ThetaPath& theta, const TimeGrid& grid, const char* what) {
  if (!theta.has_values() || !theta.is_deterministic()) {
    throw Error(ErrorCode::invalid_value, std::string(what) + " needs a deterministic theta");
  }
  if (theta.theta1().size() < grid.steps()) throw Error(ErrorCode::grid_mismatch, std::string(what) + ": theta path shorter than the grid");
}

ThetaPath from_stacked(const std::vector<Vec>& values, std::size_t n) {
  std::vector<Vec> t1, t2;
  t1.reserve(values.size());
  t2.reserve(values.size());
  for (const Vec& v : values) {
    t1.push_back(v.head(static_cast<Eigen::Index>(n)));
    t2.push_back(v.tail(v.size() - static_cast<Eigen::Index>(n)));
  }
  return ThetaPath::deterministic(std::move(t1), std::move(t2));
}

// max over x in [-r, r] of a concave f, golden section.
double golden_max(const std::function<double(double)>& f, double lo, double hi) {
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 80 && b - a > 1e-13 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (fc < fd) {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    } else {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    }
  }
  double best = 0.5 * (a + b);
  double fb = f(best);
  for (double cand : {lo, hi}) {
    const double fv = f(cand);
    if (fv > fb) {
      fb = fv;
      best = cand;
    }
  }
  return best;
}

}  // namespace

RobustProblem make_problem(ModelCoefficients model, TimeGrid grid, ConcaveDual G, double mu, double t_star) {
  grid.index_of(t_star);
  if (!(mu >= 0.0)) throw Error(ErrorCode::invalid_value, "mu must be >= 0");
  if (mu > G.domain_radius() + 1e-12) {
    throw Error(ErrorCode::domain_violation, "mu = " + std::to_string(mu) + " exceeds the domain radius " +
                                                 std::to_string(G.domain_radius()) + " of G");
  }
  if (G.n() != model.n || G.m() != model.m) throw Error(ErrorCode::dimension_mismatch, "G does not match the model");
  return RobustProblem{std::move(model), grid, std::move(G), mu, t_star};
}

double inner_value(const RobustProblem& problem, const ThetaPath& theta) {
  return inner_value(problem, theta, riccati_solve(problem.model, problem.grid));
}

double inner_value(const RobustProblem& problem, const ThetaPath& theta, const RiccatiSolution& riccati) {
  require_stored(theta, problem.grid, "inner_value");
  const std::size_t K = problem.grid.index_of(problem.t_star);
  return riccati.P[K].trace() + penalty_eval(theta, problem.G, problem.grid, problem.t_star).alpha;
}

Vec tilted_argmax(const ConcaveDual& G, double t, const Vec& v, double mu) {
  const Eigen::Index d = v.size();
  Vec theta = Vec::Zero(d);
  if (mu <= 0.0) return theta;
  auto sgn = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };
  switch (G.kind()) {
    case GeneratorKind::zero:
      return theta;
    case GeneratorKind::scaled_norm: {
      // G vanishes on the box, so the linear term decides; zero where v has no preference.
      const double r = std::min(mu, G.generator().kappa);
      for (Eigen::Index i = 0; i < d; ++i) theta(i) = r * sgn(v(i));
      return theta;
    }
    case GeneratorKind::hyperbolic: {
      const double kappa = G.generator().kappa;
      theta = kappa * v / std::sqrt(1.0 + v.squaredNorm());
      if (theta.cwiseAbs().maxCoeff() <= mu) return theta;
      theta = theta.cwiseMax(-mu).cwiseMin(mu);
      // Coordinate ascent; each 1-D problem max sqrt(a - x^2) + v x has a closed form.
      for (int sweep = 0; sweep < 500; ++sweep) {
        double change = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
          const double others = theta.squaredNorm() - theta(i) * theta(i);
          const double avail = std::max(kappa * kappa - others, 0.0);
          const double cap = std::min(mu, std::sqrt(avail));
          const double x = std::clamp(v(i) * std::sqrt(avail) / std::sqrt(1.0 + v(i) * v(i)), -cap, cap);
          change = std::max(change, std::abs(x - theta(i)));
          theta(i) = x;
        }
        if (change < 1e-15) break;
      }
      return theta;
    }
    case GeneratorKind::user: {
      theta = G.box_argmax(t, v, mu);
      // Guard against a misread kink: the tilted corner is always feasible.
      auto value = [&](const Vec& th) { return eval_G(G, t, th) + v.dot(th); };
      Vec corner(d);
      for (Eigen::Index i = 0; i < d; ++i) corner(i) = mu * sgn(v(i));
      if (value(corner) > value(theta)) theta = corner;
      return theta;
    }
  }
  return theta;
}

ThetaPath worst_case_theta(const RobustProblem& problem) {
  const ConcaveDual& G = problem.G;
  const TimeGrid& grid = problem.grid;
  const auto d = static_cast<Eigen::Index>(G.n() + G.m());
  const double mu = problem.mu;
  std::vector<Vec> values(grid.points(), Vec::Zero(d));
  if (G.kind() != GeneratorKind::user || mu == 0.0) {
    // Every built-in dual is normalized with G <= 0 = G(0): the origin is the
    // least-norm maximizer.
    return from_stacked(values, G.n());
  }
  auto solve_step = [&](double t) {
    // Candidates: the primal-dual argmax and a coarse grid.
    Vec best = G.box_argmax(t, Vec::Zero(d), mu);
    double best_val = eval_G(G, t, best);
    const int P = 11;
    std::size_t total = 1;
    for (Eigen::Index i = 0; i < d; ++i) total *= P;
    Vec th(d);
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t r = idx;
      for (Eigen::Index i = 0; i < d; ++i) {
        th(i) = -mu + 2.0 * mu * static_cast<double>(r % P) / (P - 1);
        r /= P;
      }
      const double v = eval_G(G, t, th);
      if (v > best_val) {
        best_val = v;
        best = th;
      }
    }
    // Least-norm selection among near-maximizers along the ray to the origin;
    // the superlevel set is convex, so the ray stays inside it.
    const double tol = 1e-12 * (1.0 + std::abs(best_val));
    if (eval_G(G, t, Vec::Zero(d)) >= best_val - tol) return Vec(Vec::Zero(d));
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (eval_G(G, t, Vec(mid * best)) >= best_val - tol ? hi : lo) = mid;
    }
    return Vec(hi * best);
  };
  if (!G.generator().time_dependent) {
    const Vec v = solve_step(0.0);
    std::fill(values.begin(), values.end(), v);
  } else {
    for (std::size_t k = 0; k < grid.points(); ++k) values[k] = solve_step(grid.time(k));
  }
  return from_stacked(values, G.n());
}

namespace {

struct StepCoefficients {
  Mat A0, Am, A1;  // B - P H' R^{-1} H at t_k, midpoint, t_{k+1}
  Mat L0, Lm, L1;  // P H' R^{-1}
};

StepCoefficients step_coefficients(const ModelCoefficients& model, const CoefficientCache& cache,
                                   const RiccatiSolution& ric, std::size_t k) {
  const Mat HtRi = model.H[k].transpose() * cache.R_inv[k];
  StepCoefficients s;
  s.L0 = ric.P[k] * HtRi;
  s.Lm = ric.P_half[k] * HtRi;
  s.L1 = ric.P[k + 1] * HtRi;
  s.A0 = model.B[k] - s.L0 * model.H[k];
  s.Am = model.B[k] - s.Lm * model.H[k];
  s.A1 = model.B[k] - s.L1 * model.H[k];
  return s;
}

Mat rk4_linear(const StepCoefficients& s, double h, const Mat& e, const Mat& c0, const Mat& cm, const Mat& c1) {
  const Mat k1 = s.A0 * e + c0;
  const Mat k2 = s.Am * (e + 0.5 * h * k1) + cm;
  const Mat k3 = s.Am * (e + 0.5 * h * k2) + cm;
  const Mat k4 = s.A1 * (e + h * k3) + c1;
  return e + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// y(t_K) = int_0^{t_K} A(t_K, s) (d1 - P H' R^{-1} d2)(s) ds for a scalar signal.
Vec quadrature_propagate(const ModelCoefficients& model, const TimeGrid& grid, const RiccatiSolution& ric,
                         const std::vector<Vec>& d1, const std::vector<Vec>& d2) {
  if (model.n != 1) throw Error(ErrorCode::dimension_mismatch, "the explicit propagator form is scalar");
  const CoefficientCache cache = CoefficientCache::build(model);
  const double h = grid.dt();
  Vec y(static_cast<Eigen::Index>(grid.points()));
  y(0) = 0.0;
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double hrh = (model.H[k].transpose() * cache.R_inv[k] * model.H[k])(0, 0);
    const double hr_d2 = (model.H[k].transpose() * cache.R_inv[k] * d2[k])(0, 0);
    const double B = model.B[k](0, 0);
    const double p0 = ric.P[k](0, 0), pm = ric.P_half[k](0, 0), p1 = ric.P[k + 1](0, 0);
    const double a0 = B - p0 * hrh, am = B - pm * hrh, a1 = B - p1 * hrh;
    const double c0 = d1[k](0) - p0 * hr_d2, cm = d1[k](0) - pm * hr_d2, c1 = d1[k](0) - p1 * hr_d2;
    // Simpson for the exponent over the whole step and its first half
    // (integral of the quadratic through a0, am, a1).
    const double full = h * (a0 + 4.0 * am + a1) / 6.0;
    const double first_half = h * (5.0 * a0 + 8.0 * am - a1) / 24.0;
    const double local = h / 6.0 * (std::exp(full) * c0 + 4.0 * std::exp(full - first_half) * cm + c1);
    y(static_cast<Eigen::Index>(k + 1)) = std::exp(full) * y(static_cast<Eigen::Index>(k)) + local;
  }
  return y;
}

}  // namespace

BiasMaps bias_maps(const ModelCoefficients& model, const TimeGrid& grid, const RiccatiSolution& riccati) {
  const CoefficientCache cache = CoefficientCache::build(model);
  const auto n = static_cast<Eigen::Index>(model.n);
  const auto m = static_cast<Eigen::Index>(model.m);
  const double h = grid.dt();
  BiasMaps maps;
  maps.Phi.reserve(grid.steps());
  maps.Gamma1.reserve(grid.steps());
  maps.Gamma2.reserve(grid.steps());
  const Mat In = Mat::Identity(n, n);
  const Mat Znn = Mat::Zero(n, n);
  const Mat Znm = Mat::Zero(n, m);
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const StepCoefficients s = step_coefficients(model, cache, riccati, k);
    maps.Phi.push_back(rk4_linear(s, h, In, Znn, Znn, Znn));
    maps.Gamma1.push_back(rk4_linear(s, h, Znn, In, In, In));
    maps.Gamma2.push_back(rk4_linear(s, h, Znm, -s.L0, -s.Lm, -s.L1));
  }
  return maps;
}

Mat bias_ode(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta, const ThetaPath& theta_ref) {
  return bias_ode(model, grid, theta, theta_ref, riccati_solve(model, grid));
}

Mat bias_ode(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta, const ThetaPath& theta_ref,
             const RiccatiSolution& riccati) {
  require_stored(theta, grid, "bias_ode");
  require_stored(theta_ref, grid, "bias_ode");
  const BiasMaps maps = bias_maps(model, grid, riccati);
  const auto n = static_cast<Eigen::Index>(model.n);
  Mat e = Mat::Zero(n, static_cast<Eigen::Index>(grid.points()));
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    e.col(kk + 1) = maps.Phi[k] * e.col(kk) + maps.Gamma1[k] * (theta_ref.theta1()[k] - theta.theta1()[k]) +
                    maps.Gamma2[k] * (theta_ref.theta2()[k] - theta.theta2()[k]);
  }
  return e;
}

Vec bias_quadrature(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta,
                    const ThetaPath& theta_ref, const RiccatiSolution& riccati) {
  require_stored(theta, grid, "bias_quadrature");
  require_stored(theta_ref, grid, "bias_quadrature");
  std::vector<Vec> d1(grid.steps()), d2(grid.steps());
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    d1[k] = theta_ref.theta1()[k] - theta.theta1()[k];
    d2[k] = theta_ref.theta2()[k] - theta.theta2()[k];
  }
  return quadrature_propagate(model, grid, riccati, d1, d2);
}

UpperValue upper_value(const RobustProblem& problem, const ThetaPath& theta_ref, const UpperOptions& options) {
  return upper_value(problem, theta_ref, riccati_solve(problem.model, problem.grid), options);
}

UpperValue upper_value(const RobustProblem& problem, const ThetaPath& theta_ref, const RiccatiSolution& riccati,
                       const UpperOptions& options) {
  const ModelCoefficients& model = problem.model;
  const TimeGrid& grid = problem.grid;
  const ConcaveDual& G = problem.G;
  require_stored(theta_ref, grid, "upper_value");
  const std::size_t K = grid.index_of(problem.t_star);
  const auto n = static_cast<Eigen::Index>(model.n);
  const auto d = static_cast<Eigen::Index>(model.n + model.m);
  const double dt = grid.dt();
  const double mu = problem.mu;
  const double P_star = riccati.P[K].trace();

  // e(t*) = c0 + sum_k W_k theta_k with W_k = -Psi_k [Gamma1_k, Gamma2_k].
  const BiasMaps maps = bias_maps(model, grid, riccati);
  std::vector<Mat> W(K);
  Vec c0 = Vec::Zero(n);
  Mat psi = Mat::Identity(n, n);
  for (std::size_t k = K; k-- > 0;) {
    Mat Wk(n, d);
    Wk << maps.Gamma1[k], maps.Gamma2[k];
    W[k] = -psi * Wk;
    c0 += psi * (maps.Gamma1[k] * theta_ref.theta1()[k] + maps.Gamma2[k] * theta_ref.theta2()[k]);
    psi = psi * maps.Phi[k];
  }

  auto objective = [&](const std::vector<Vec>& th, Vec* e_out) {
    Vec e = c0;
    double pen = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      e += W[k] * th[k];
      pen += eval_G(G, grid.time(k), th[k]) * dt;
    }
    if (e_out) *e_out = e;
    return P_star + e.squaredNorm() + pen;
  };

  std::vector<Vec> best(K);
  for (std::size_t k = 0; k < K; ++k) best[k] = stacked(theta_ref, k);
  double best_val = objective(best, nullptr);
  auto offer = [&](const std::vector<Vec>& th) {
    const double v = objective(th, nullptr);
    if (std::isfinite(v) && v > best_val) {
      best_val = v;
      best = th;
    }
    return v;
  };

  UpperValue out;
  out.sweep_value = kNegInf;
  if (model.n == 1 && K > 0 && mu > 0.0) {
    // Sweep the target bias; for each target maximize the penalty under the
    // linear constraint sum w_k . theta_k = target by bisection on the multiplier.
    std::vector<Vec> w(K);
    double s_max = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      w[k] = W[k].row(0).transpose();
      s_max += mu * w[k].lpNorm<1>();
    }
    auto respond = [&](double nu, std::vector<Vec>& th) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        th[k] = tilted_argmax(G, grid.time(k), Vec(nu * w[k] / dt), mu);
        s += w[k].dot(th[k]);
      }
      return s;
    };
    auto solve_target = [&](double target) {
      std::vector<Vec> lo_th(K), hi_th(K);
      double lo = -1.0, hi = 1.0;
      double s_lo = respond(lo, lo_th), s_hi = respond(hi, hi_th);
      for (int it = 0; it < 80 && s_lo > target; ++it) {
        lo *= 4.0;
        s_lo = respond(lo, lo_th);
      }
      for (int it = 0; it < 80 && s_hi < target; ++it) {
        hi *= 4.0;
        s_hi = respond(hi, hi_th);
      }
      for (int it = 0; it < 100 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo) + std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        std::vector<Vec> mid_th(K);
        const double s_mid = respond(mid, mid_th);
        if (s_mid < target) {
          lo = mid;
          s_lo = s_mid;
          lo_th.swap(mid_th);
        } else {
          hi = mid;
          s_hi = s_mid;
          hi_th.swap(mid_th);
        }
      }
      // At a jump of the response both sides maximize the same Lagrangian, so
      // any convex combination does too.
      const double span = s_hi - s_lo;
      const double tau = span > 0.0 ? std::clamp((target - s_lo) / span, 0.0, 1.0) : 0.0;
      std::vector<Vec> th(K);
      for (std::size_t k = 0; k < K; ++k) th[k] = (1.0 - tau) * lo_th[k] + tau * hi_th[k];
      return th;
    };
    const std::size_t S = std::max<std::size_t>(options.sweep_points, 3);
    std::vector<double> targets(S), values(S);
    std::size_t arg = 0;
    for (std::size_t i = 0; i < S; ++i) {
      targets[i] = -s_max + 2.0 * s_max * static_cast<double>(i) / static_cast<double>(S - 1);
      values[i] = objective(solve_target(targets[i]), nullptr);
      if (values[i] > values[arg]) arg = i;
    }
    // Golden refinement around the best sweep point.
    const double a = targets[arg == 0 ? 0 : arg - 1];
    const double b = targets[std::min(arg + 1, S - 1)];
    const double refined = golden_max([&](double s) { return objective(solve_target(s), nullptr); }, a, b);
    for (double target : {targets[arg], refined}) {
      const std::vector<Vec> th = solve_target(target);
      out.sweep_value = std::max(out.sweep_value, offer(th));
    }
  }

  // Multi-start projected gradient ascent on the same objective.
  out.pgd_value = kNegInf;
  if (K > 0 && mu > 0.0) {
    auto grad_G = [&](double t, const Vec& th) {
      Vec g = Vec::Zero(d);
      if (G.kind() == GeneratorKind::hyperbolic) {
        const double kappa = G.generator().kappa;
        g = -th / std::sqrt(std::max(kappa * kappa - th.squaredNorm(), 1e-12));
      } else if (G.kind() == GeneratorKind::user) {
        G.evaluate(t, th.head(n), th.tail(d - n), &g);
      }
      return g;
    };
    auto project = [&](std::vector<Vec>& th) {
      for (auto& v : th) v = v.cwiseMax(-mu).cwiseMin(mu);
    };
    auto rng = stream_rng(options.seed, 0);
    std::uniform_real_distribution<double> unif(-mu, mu);
    for (std::size_t start = 0; start < options.pgd_starts; ++start) {
      std::vector<Vec> th(K);
      for (std::size_t k = 0; k < K; ++k) {
        if (start == 0) {
          th[k] = stacked(theta_ref, k);
        } else if (start <= 2) {
          const Vec dir = W[k].transpose() * (c0.squaredNorm() > 0 ? c0 : Vec::Ones(n));
          th[k] = (start == 1 ? mu : -mu) * dir.unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
        } else {
          th[k] = Vec(d);
          for (Eigen::Index i = 0; i < d; ++i) th[k](i) = unif(rng);
        }
      }
      project(th);
      Vec e;
      double f = objective(th, &e);
      double step = 1.0;
      for (std::size_t it = 0; it < options.pgd_iterations; ++it) {
        std::vector<Vec> grad(K);
        for (std::size_t k = 0; k < K; ++k) grad[k] = 2.0 * W[k].transpose() * e + dt * grad_G(grid.time(k), th[k]);
        bool moved = false;
        for (int bt = 0; bt < 40; ++bt) {
          std::vector<Vec> trial(K);
          double lin = 0.0;
          for (std::size_t k = 0; k < K; ++k) trial[k] = th[k] + step * grad[k];
          project(trial);
          for (std::size_t k = 0; k < K; ++k) lin += grad[k].dot(trial[k] - th[k]);
          Vec e_trial;
          const double f_trial = objective(trial, &e_trial);
          if (std::isfinite(f_trial) && f_trial >= f + 1e-4 * lin && lin > 0.0) {
            th.swap(trial);
            e = e_trial;
            moved = f_trial - f > 1e-15 * (1.0 + std::abs(f));
            f = f_trial;
            step *= 2.0;
            break;
          }
          step *= 0.5;
        }
        if (!moved) break;
      }
      out.pgd_value = std::max(out.pgd_value, offer(th));
    }
  }

  std::vector<Vec> full(grid.points());
  for (std::size_t k = 0; k < grid.points(); ++k) full[k] = k < K ? best[k] : stacked(theta_ref, k);
  out.theta = from_stacked(full, model.n);
  Vec e;
  out.value = objective(best, &e);
  out.bias = e.norm();
  return out;
}

SaddleReport certify_saddle(const RobustProblem& problem, const Mat* observations, const UpperOptions& options) {
  const RiccatiSolution ric = riccati_solve(problem.model, problem.grid);
  const std::size_t K = problem.grid.index_of(problem.t_star);
  SaddleReport rep;
  rep.theta_star = worst_case_theta(problem);
  rep.variance = ric.P[K].trace();
  rep.penalty = penalty_eval(rep.theta_star, problem.G, problem.grid, problem.t_star).alpha;
  rep.lower_value = rep.variance + rep.penalty;
  const UpperValue up = upper_value(problem, rep.theta_star, ric, options);
  rep.upper_value = up.value;
  rep.upper_theta = up.theta;
  rep.gap = rep.upper_value - rep.lower_value;
  if (observations) rep.estimator = robust_filter(problem.model, problem.grid, rep.theta_star, *observations, ric);
  return rep;
}

Mat decomposition(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta_star,
                  const FilterOutput& classical, Propagator propagator) {
  require_stored(theta_star, grid, "decomposition");
  const auto n = static_cast<Eigen::Index>(model.n);
  if (classical.x_hat.cols() != static_cast<Eigen::Index>(grid.points()) || classical.x_hat.rows() != n) {
    throw Error(ErrorCode::grid_mismatch, "classical filter output does not match the grid");
  }
  const RiccatiSolution& ric = classical.riccati;
  Mat out = classical.x_hat;
  if (propagator == Propagator::continuous) {
    std::vector<Vec> d1(grid.steps()), d2(grid.steps());
    for (std::size_t k = 0; k < grid.steps(); ++k) {
      d1[k] = -theta_star.theta1()[k];
      d2[k] = -theta_star.theta2()[k];
    }
    out.row(0) += quadrature_propagate(model, grid, ric, d1, d2).transpose();
    return out;
  }
  // Euler propagator matching the filter step: the correction c obeys
  // c_{k+1} = c_k + (B - K H) c_k dt + (K theta2 - theta1) dt.
  const CoefficientCache cache = CoefficientCache::build(model);
  const double dt = grid.dt();
  Vec c = Vec::Zero(n);
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const Mat gain = ric.P[k] * model.H[k].transpose() * cache.R_inv[k];
    c += ((model.B[k] - gain * model.H[k]) * c + gain * theta_star.theta2()[k] - theta_star.theta1()[k]) * dt;
    out.col(static_cast<Eigen::Index>(k + 1)) += c;
  }
  return out;
}

GeneralFilterOutput general_filter(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta,
                                   std::size_t n_particles, std::uint64_t seed, const Mat& observations) {
  if (model.n != 1 || model.m != 1) throw Error(ErrorCode::dimension_mismatch, "general_filter handles scalar models");
  if (n_particles < 2) throw Error(ErrorCode::invalid_value, "general_filter needs at least two particles");
  if (observations.rows() != 1 || observations.cols() != static_cast<Eigen::Index>(grid.points())) {
    throw Error(ErrorCode::grid_mismatch, "observations do not match the grid");
  }
  const std::size_t N = grid.steps();
  const double dt = grid.dt();
  const auto np = static_cast<Eigen::Index>(N + 1);
  GeneralFilterOutput out;
  out.x_hat.resize(np);
  out.x_hat_se.resize(np);
  out.particle_var.resize(np);
  out.particle_var_se.resize(np);
  out.ode_var.resize(np);
  out.cov_x_theta2.resize(np);
  out.ess.resize(np);

  auto rng = stream_rng(seed, 0);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto P = static_cast<Eigen::Index>(n_particles);
  Vec x = Vec::Constant(P, model.x0(0));
  Vec w = Vec::Constant(P, 1.0 / static_cast<double>(n_particles));
  Vec th1(P), th2(P), logw(P);
  Vec one(1);
  double ode_P = 0.0;

  for (std::size_t k = 0; k <= N; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double t = grid.time(k);
    const std::size_t kc = std::min(k, N - 1);
    const Vec m_now = observations.col(kk);
    for (Eigen::Index i = 0; i < P; ++i) {
      one(0) = x(i);
      const ThetaValue v = theta.at(kc, t, one, m_now);
      th1(i) = v.theta1(0);
      th2(i) = v.theta2(0);
    }
    // Weighted moments at t_k given observations up to t_k.
    const double mean = w.dot(x);
    const Vec dx = x.array() - mean;
    const double var = w.dot(dx.cwiseProduct(dx));
    const double m4 = w.dot(dx.array().pow(4).matrix());
    const double ess = 1.0 / w.squaredNorm();
    const double c1 = w.dot(dx.cwiseProduct(Vec(th1.array() - w.dot(th1))));
    const double c2 = w.dot(dx.cwiseProduct(Vec(th2.array() - w.dot(th2))));
    out.x_hat(kk) = mean;
    out.x_hat_se(kk) = std::sqrt(var / ess);
    out.particle_var(kk) = var;
    out.particle_var_se(kk) = std::sqrt(std::max(m4 - var * var, 0.0) / ess);
    out.ode_var(kk) = ode_P;
    out.cov_x_theta2(kk) = c2;
    out.ess(kk) = ess;
    if (k == N) break;

    const double B = model.B[k](0, 0), H = model.H[k](0, 0), b = model.b[k](0), h = model.h[k](0);
    const double Q = model.Q[k](0, 0), R = model.R[k](0, 0);
    // Variance equation with particle-estimated conditional covariances.
    const double gain_term = ode_P * H - c2;
    ode_P += (-gain_term * gain_term / R - 2.0 * c1 + 2.0 * B * ode_P + Q) * dt;

    // Weight update with the observation increment over [t_k, t_{k+1}].
    const double dm = observations(0, kk + 1) - observations(0, kk);
    for (Eigen::Index i = 0; i < P; ++i) {
      const double r = dm - (H * x(i) + h - th2(i)) * dt;
      logw(i) = std::log(w(i)) - r * r / (2.0 * R * dt);
    }
    logw.array() -= logw.maxCoeff();
    w = logw.array().exp();
    w /= w.sum();

    // Systematic resampling when the effective sample size halves.
    if (1.0 / w.squaredNorm() < 0.5 * static_cast<double>(n_particles)) {
      Vec xs(P), t1s(P);
      const double u0 = unif(rng) / static_cast<double>(n_particles);
      double cum = w(0);
      Eigen::Index j = 0;
      for (Eigen::Index i = 0; i < P; ++i) {
        const double u = u0 + static_cast<double>(i) / static_cast<double>(n_particles);
        while (u > cum && j < P - 1) cum += w(++j);
        xs(i) = x(j);
        t1s(i) = th1(j);
      }
      x = xs;
      th1 = t1s;
      w.setConstant(1.0 / static_cast<double>(n_particles));
      ++out.resamples;
    }
    const double sq = std::sqrt(Q * dt);
    for (Eigen::Index i = 0; i < P; ++i) x(i) += (B * x(i) + b - th1(i)) * dt + sq * gauss(rng);
  }
  return out;
}

}  // namespace rkb
