// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// all of them pass.
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "rkb/gexp.hpp"
#include "rkb/kalman.hpp"
#include "rkb/mmse.hpp"
#include "rkb/robust.hpp"
#include "rkb/sde.hpp"

using namespace rkb;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string num(double v) { return fmt("%.6g", v); }

ModelCoefficients scalar_model(const TimeGrid& grid, double B = 0.0) {
  return ModelCoefficients::scalar(grid, B, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0);
}

ThetaPath const_theta(double a, double b, const TimeGrid& grid) {
  return ThetaPath::constant(Vec::Constant(1, a), Vec::Constant(1, b), grid.points());
}

std::vector<std::size_t> checkpoints(const TimeGrid& grid) {
  std::vector<std::size_t> ks;
  for (std::size_t i = 1; i <= 10; ++i) ks.push_back(i * grid.steps() / 10);
  return ks;
}

// 1. Classical reduction and discrete oracle agreement.
Outcome classical_reduction() {
  Outcome o;
  const TimeGrid fine(1.0, 2000);
  const ModelCoefficients fine_model = ModelCoefficients::scalar(fine, -0.5, 1.0, 0.2, 0.0, 1.0, 1.0, 1.0);
  const PathBatch batch = simulate_paths(fine_model, fine, ThetaPath::zero(1, 1, fine.points()), 1, 101);
  const Mat& fine_obs = batch.paths[0].m_obs;

  // Zero ambiguity with the zero generator: the saddle estimator is the classical filter.
  const TimeGrid grid(1.0, 1000);
  const ModelCoefficients model = subsample(fine_model, 2);
  const Mat obs = subsample(fine_obs, 2);
  const RobustProblem problem = make_problem(model, grid, concave_dual(zero_generator(), 1, 1), 0.0, 1.0);
  const SaddleReport rep = certify_saddle(problem, &obs);
  const bool bitwise = rep.estimator->x_hat == classical_filter(model, grid, obs).x_hat;

  std::vector<double> C;
  for (std::size_t N : {500u, 1000u, 2000u}) {
    const std::size_t stride = 2000 / N;
    const TimeGrid g(1.0, N);
    const ModelCoefficients mc = subsample(fine_model, stride);
    const Mat y = subsample(fine_obs, stride);
    const double diff = (classical_filter(mc, g, y).x_hat - discrete_kalman_oracle(mc, g, y)).cwiseAbs().maxCoeff();
    C.push_back(diff / g.dt());
  }
  double mean = 0.0;
  for (double c : C) mean += c / 3.0;
  double spread = 0.0;
  for (double c : C) spread = std::max(spread, std::abs(c - mean) / mean);
  o.pass = bitwise && spread <= 0.2;
  o.detail = std::string("robust==classical bitwise: ") + (bitwise ? "yes" : "no") + "; C(N=500,1000,2000) = " +
             num(C[0]) + ", " + num(C[1]) + ", " + num(C[2]) + " (max deviation from mean " + num(100 * spread) + "%)";
  return o;
}

// 2. Riccati against tanh.
Outcome riccati_accuracy() {
  const TimeGrid grid(1.0, 1000);
  const RiccatiSolution ric = riccati_solve(scalar_model(grid), grid);
  const double err = std::abs(ric.P.back()(0, 0) - std::tanh(1.0));
  return {err <= 1e-6, "|P(1) - tanh(1)| = " + num(err)};
}

// 3. Filter error variance under P^theta.
Outcome variance_claim() {
  const TimeGrid grid(1.0, 1000);
  const ModelCoefficients model = ModelCoefficients::scalar(grid, -0.3, 1.0, 0.0, 0.0, 1.0, 1.0, 0.5);
  const ThetaPath theta = const_theta(0.3, -0.2, grid);
  const std::size_t n_paths = 10000;
  const PathBatch batch = simulate_paths(model, grid, theta, n_paths, 303);
  const RiccatiSolution ric = riccati_solve(model, grid);
  const auto ks = checkpoints(grid);
  std::vector<std::vector<double>> sq(ks.size(), std::vector<double>(n_paths));
  const auto count = static_cast<std::int64_t>(n_paths);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < count; ++p) {
    const SamplePath& path = batch.paths[static_cast<std::size_t>(p)];
    const FilterOutput f = robust_filter(model, grid, theta, path.m_obs, ric);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const double e = path.x(0, static_cast<Eigen::Index>(ks[i])) - f.x_hat(0, static_cast<Eigen::Index>(ks[i]));
      sq[i][static_cast<std::size_t>(p)] = e * e;
    }
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const Estimate e = estimate(sq[i]);
    worst = std::max(worst, std::abs(e.mean - ric.P[ks[i]](0, 0)) / e.std_error);
  }
  return {worst <= 3.0, "10 checkpoints, 1e4 paths, worst |MSE - P| = " + num(worst) + " standard errors"};
}

// 4. Decomposition against the robust filter.
Outcome decomposition_check() {
  const TimeGrid grid(1.0, 1000);
  const ModelCoefficients model = ModelCoefficients::scalar(grid, -0.3, 1.0, 0.1, 0.0, 1.0, 1.0, 0.5);
  const ThetaPath theta = const_theta(0.3, -0.2, grid);
  const PathBatch batch = simulate_paths(model, grid, theta, 20, 404);
  double worst = 0.0, worst_cont = 0.0;
  for (const SamplePath& path : batch.paths) {
    const FilterOutput classical = classical_filter(model, grid, path.m_obs);
    const Mat robust = robust_filter(model, grid, theta, path.m_obs).x_hat;
    worst = std::max(worst, (decomposition(model, grid, theta, classical) - robust).cwiseAbs().maxCoeff());
    worst_cont = std::max(
        worst_cont, (decomposition(model, grid, theta, classical, Propagator::continuous) - robust).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-6, "20 paths, max |decomposition - robust| = " + num(worst) +
                             " (quadrature propagator: " + num(worst_cont) + ")"};
}

// 5. BSDE value against the dual lower bound.
Outcome duality_sandwich() {
  const double kappa = 1.0;
  const TimeGrid grid(1.0, 100);
  const ModelCoefficients model = scalar_model(grid);
  const Generator g = hyperbolic_generator(kappa);
  const ConcaveDual G = concave_dual(g, 1, 1);
  const Terminal xi = [](double x, double) { return x; };
  const std::size_t n_paths = 20000;
  const BsdeResult y = bsde_solve(g, xi, model, grid, n_paths, 505);
  bool sandwich = true, monotone = true;
  std::string detail = "bsde " + num(y.y0) + " +- " + num(y.std_error) + " (exact " + num((std::sqrt(2.0) - 1.0) * kappa) +
                       "); gaps:";
  double prev_gap = INFINITY, prev_se = 0.0;
  for (double spacing : {kappa / 2, kappa / 4, kappa / 8}) {
    const DualValue d = dual_value(xi, G, model, grid, constant_theta_family(G, grid, kappa, spacing), n_paths, 505);
    const double se = std::hypot(y.std_error, d.std_error);
    const double gap = y.y0 - d.value;
    sandwich = sandwich && d.value <= y.y0 + 4.0 * se;
    monotone = monotone && gap <= prev_gap + 3.0 * std::hypot(se, prev_se);
    prev_gap = gap;
    prev_se = se;
    detail += " " + num(gap);
  }
  return {sandwich && monotone, detail};
}

// 6. Concavity of the penalty along mixtures.
Outcome penalty_concavity() {
  const TimeGrid grid(1.0, 200);
  const ModelCoefficients model = scalar_model(grid);
  const ConcaveDual G = concave_dual(hyperbolic_generator(1.0), 1, 1);
  const PathBatch batch = simulate_paths(model, grid, ThetaPath::zero(1, 1, grid.points()), 2000, 606);
  auto rng = stream_rng(606, 1u << 20);
  std::uniform_real_distribution<double> u(-0.6, 0.6), ul(0.0, 1.0);
  auto random_path = [&] {
    // Piecewise constant on four pieces, inside the disc of radius 0.85.
    std::vector<Vec> t1(grid.points()), t2(grid.points());
    Vec a1(4), a2(4);
    for (int j = 0; j < 4; ++j) {
      a1(j) = u(rng);
      a2(j) = u(rng);
    }
    for (std::size_t k = 0; k < grid.points(); ++k) {
      const auto j = static_cast<Eigen::Index>(std::min<std::size_t>(3, 4 * k / grid.points()));
      t1[k] = Vec::Constant(1, a1(j));
      t2[k] = Vec::Constant(1, a2(j));
    }
    return ThetaPath::deterministic(t1, t2);
  };
  std::vector<ConcavityTriple> triples;
  for (int i = 0; i < 50; ++i) {
    ThetaPath a = random_path();
    ThetaPath b = random_path();
    triples.push_back({a, b, ul(rng)});
  }
  const ConcavityReport rep = penalty_concavity_check(model, G, triples, 1.0, batch);
  return {rep.max_score <= 3.0, "50 triples, worst violation " + num(rep.max_violation) + " (" + num(rep.max_score) +
                                    " standard errors)"};
}

// 7. Exponential moment of the Girsanov exponent.
Outcome girsanov_bound() {
  bool pass = true;
  std::string detail;
  for (auto [c, alpha, t] : {std::tuple{1.0, 2.0, 1.0}, std::tuple{0.5, 3.0, 2.0}}) {
    const MomentCheck m = girsanov_moment_check(c, alpha, t, 1000000, 707);
    const double z = std::abs(m.estimate - m.upper_bound) / m.std_error;
    pass = pass && z <= 4.0;
    detail += "(c,alpha,t)=(" + num(c) + "," + num(alpha) + "," + num(t) + "): " + num(m.estimate) + " vs " +
              num(m.upper_bound) + " [" + num(z) + " se]; ";
  }
  return {pass, detail};
}

// Per-step grid oracle for the worst-case theta: brute force over the box,
// least norm among the maximizers. Odd P keeps the corners and the origin on the grid.
Vec grid_oracle(const ConcaveDual& G, double t, double mu, int P = 201) {
  std::vector<std::tuple<double, double, double>> pts;
  double best = -INFINITY;
  for (int i = 0; i < P; ++i) {
    for (int j = 0; j < P; ++j) {
      const double a = -mu + 2.0 * mu * i / (P - 1), b = -mu + 2.0 * mu * j / (P - 1);
      const double v = G(t, Vec::Constant(1, a), Vec::Constant(1, b));
      pts.emplace_back(v, a, b);
      best = std::max(best, v);
    }
  }
  Vec arg = Vec::Zero(2);
  double best_norm = INFINITY;
  for (auto [v, a, b] : pts) {
    if (v >= best - 1e-12 && std::hypot(a, b) < best_norm) {
      best_norm = std::hypot(a, b);
      arg << a, b;
    }
  }
  return arg;
}

// 8. Saddle certification over mu.
Outcome saddle_certification() {
  const TimeGrid grid(1.0, 1000);
  const ModelCoefficients model = scalar_model(grid);
  const ConcaveDual G = concave_dual(hyperbolic_generator(1.0), 1, 1);
  std::vector<double> gaps;
  bool nonneg = true;
  double oracle_err = 0.0;
  for (double mu : {0.3, 0.1, 0.03}) {
    const SaddleReport rep = certify_saddle(make_problem(model, grid, G, mu, 1.0));
    nonneg = nonneg && rep.gap >= -1e-8;
    gaps.push_back(rep.gap);
    for (std::size_t k = 0; k < grid.points(); k += 100) {
      Vec th(2);
      th << rep.theta_star.theta1()[k](0), rep.theta_star.theta2()[k](0);
      oracle_err = std::max(oracle_err, (th - grid_oracle(G, grid.time(k), mu)).cwiseAbs().maxCoeff());
    }
  }
  // A tilted user generator g(t, z) = hyperbolic(z) + <a(t), z> whose worst case sits on the box boundary.
  const Generator tilted = user_generator(
      [](double t, const Vec& z1, const Vec& z2) {
        return 2.0 * (std::sqrt(1.0 + z1.squaredNorm() + z2.squaredNorm()) - 1.0) + (0.5 + 0.2 * t) * z1(0) -
               (0.4 + 0.1 * t) * z2(0);
      },
      2.7, "tilted-hyperbolic", true);
  const ConcaveDual Gt = concave_dual(tilted, 1, 1);
  const TimeGrid coarse(1.0, 50);
  const ModelCoefficients cmodel = scalar_model(coarse);
  double user_gap = 0.0;
  {
    const SaddleReport rep = certify_saddle(make_problem(cmodel, coarse, Gt, 0.3, 1.0));
    nonneg = nonneg && rep.gap >= -1e-8;
    user_gap = rep.gap;
    for (std::size_t k = 0; k < coarse.points(); k += 5) {
      Vec th(2);
      th << rep.theta_star.theta1()[k](0), rep.theta_star.theta2()[k](0);
      oracle_err = std::max(oracle_err, (th - grid_oracle(Gt, coarse.time(k), 0.3, 41)).cwiseAbs().maxCoeff());
    }
  }
  const bool monotone = gaps[1] <= gaps[0] + 1e-10 && gaps[2] <= gaps[1] + 1e-10;
  return {nonneg && monotone && oracle_err <= 1e-8,
          "gap(mu=0.3,0.1,0.03) = " + num(gaps[0]) + ", " + num(gaps[1]) + ", " + num(gaps[2]) +
              "; tilted user generator gap " + num(user_gap) + "; max |theta* - grid oracle| = " + num(oracle_err)};
}

// 9. Finite MMSE existence and uniqueness.
Outcome finite_mmse() {
  double worst_ratio = 0.0, worst_exact = 0.0, worst_unique = 0.0, worst_saddle = 0.0, worst_excess = -INFINITY;
  int exact = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    auto rng = stream_rng(909, i);
    const Instance inst = random_instance(rng, 8, 4, 3);
    MmseOptions opt;
    opt.seed = i;
    const MmseResult r = conditional_mmse(inst.op, inst.xi, inst.C, opt);
    const BruteForceResult bf = brute_force_mmse(inst.op, inst.xi, inst.C);
    // Every block constant in xi: the grid is a single point and eta is exact there.
    const double dist = (r.eta_hat - bf.eta).cwiseAbs().maxCoeff();
    if (bf.resolution == 0.0) {
      ++exact;
      worst_exact = std::max(worst_exact, dist);
    } else {
      worst_ratio = std::max(worst_ratio, dist / bf.resolution);
    }
    worst_excess = std::max(worst_excess, r.value - bf.value);
    worst_unique = std::max(worst_unique, uniqueness_probe(inst.op, inst.xi, inst.C, 20, 1000 + i));
    worst_saddle = std::max(worst_saddle, saddle_check(inst.op, inst.xi, inst.C, r, 100, i).max_violation);
  }
  return {worst_ratio <= 10.0 && worst_exact <= 1e-12 && worst_excess <= 1e-12 && worst_unique <= 1e-6 && worst_saddle <= 1e-8,
          "50 instances: max |eta - brute force| = " + num(worst_ratio) + " grid steps (" +
              std::to_string(exact) + " degenerate instances, max error " + num(worst_exact) +
              "), max value excess over brute force " +
              num(worst_excess) + ", uniqueness spread " +
              num(worst_unique) + ", saddle violation " + num(worst_saddle)};
}

// 10. Properties (i)-(iv) of the conditional estimator.
Outcome property_suite_check() {
  PropertyReport worst;
  int failures = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto rng = stream_rng(1010, i);
    const Instance inst = random_instance(rng, 8, 4, 3);
    const PropertyReport r = property_suite(inst.op, inst.C, i, 1, 1e-8);
    failures += r.all() ? 0 : 1;
    worst.bounds_error = std::max(worst.bounds_error, r.bounds_error);
    worst.symmetry_error = std::max(worst.symmetry_error, r.symmetry_error);
    worst.translation_error = std::max(worst.translation_error, r.translation_error);
    worst.independence_error = std::max(worst.independence_error, r.independence_error);
  }
  return {failures == 0, "100 instances, " + std::to_string(failures) + " failing; worst errors (i) " +
                             num(worst.bounds_error) + " (ii) " + num(worst.symmetry_error) + " (iii) " +
                             num(worst.translation_error) + " (iv) " + num(worst.independence_error)};
}

// 11. Particle filter against the robust filter and the variance equation.
Outcome general_filter_check() {
  const TimeGrid grid(1.0, 500);
  const ModelCoefficients model = ModelCoefficients::scalar(grid, -0.3, 1.0, 0.0, 0.0, 1.0, 1.0, 0.5);
  const ThetaPath theta =
      ThetaPath::feedback(Adaptedness::observation_feedback, 1, 1, [](std::size_t, double, const Vec&) {
        return ThetaValue{Vec::Constant(1, 0.3), Vec::Constant(1, -0.2)};
      });
  const ThetaPath stored = const_theta(0.3, -0.2, grid);
  const PathBatch batch = simulate_paths(model, grid, stored, 1, 1111);
  const Mat& obs = batch.paths[0].m_obs;
  const GeneralFilterOutput pf = general_filter(model, grid, theta, 4000, 1111, obs);
  const FilterOutput kf = robust_filter(model, grid, stored, obs);
  double worst_mean = 0.0, worst_var = 0.0;
  for (std::size_t k : checkpoints(grid)) {
    const auto kk = static_cast<Eigen::Index>(k);
    worst_mean = std::max(worst_mean, std::abs(pf.x_hat(kk) - kf.x_hat(0, kk)) / pf.x_hat_se(kk));
    worst_var = std::max(worst_var, std::abs(pf.particle_var(kk) - pf.ode_var(kk)) / pf.particle_var_se(kk));
  }
  return {worst_mean <= 4.0 && worst_var <= 4.0, "10 checkpoints: worst mean deviation " + num(worst_mean) +
                                                      " se, worst variance deviation " + num(worst_var) + " se"};
}

}  // namespace

// Optional arguments select criteria by number; no arguments runs all of them.
int main(int argc, char** argv) {
  omp_set_num_threads(1);
  std::vector<std::size_t> selected;
  for (int a = 1; a < argc; ++a) selected.push_back(std::stoul(argv[a]));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"classical reduction", classical_reduction},
      {"riccati accuracy", riccati_accuracy},
      {"filter error variance", variance_claim},
      {"estimator decomposition", decomposition_check},
      {"duality sandwich", duality_sandwich},
      {"penalty concavity", penalty_concavity},
      {"girsanov moment", girsanov_bound},
      {"saddle certification", saddle_certification},
      {"finite mmse existence and uniqueness", finite_mmse},
      {"conditional estimator properties", property_suite_check},
      {"general filter consistency", general_filter_check},
  };
  int failed = 0;
  std::size_t ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), i + 1) == selected.end()) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s [%zu] %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%zu/%zu criteria passed\n", ran - static_cast<std::size_t>(failed), ran);
  return failed == 0 ? 0 : 1;
}
