#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "rkb/error.hpp"
#include "rkb/robust.hpp"
#include "rkb/stats.hpp"

using namespace rkb;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

ModelCoefficients scalar(const TimeGrid& grid) {
  return ModelCoefficients::scalar(grid, -0.5, 1.0, 0.2, 0.0, 1.0, 1.0, 1.0);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an exception");
  return ErrorCode::io;
}

Mat observe(const ModelCoefficients& mc, const TimeGrid& grid, std::uint64_t seed) {
  return simulate_paths(mc, grid, ThetaPath::zero(1, 1, grid.points()), 1, seed).paths[0].m_obs;
}

// g = 2 (sqrt(1 + |z|^2) - 1) + <a(t), z>; its dual is the hyperbolic one shifted by a(t).
Generator tilted() {
  return user_generator(
      [](double t, const Vec& z1, const Vec& z2) {
        return 2.0 * (std::sqrt(1.0 + z1.squaredNorm() + z2.squaredNorm()) - 1.0) + (0.5 + 0.2 * t) * z1(0) -
               (0.4 + 0.1 * t) * z2(0);
      },
      2.7, "tilted", true);
}

}  // namespace

TEST_CASE("tilted argmax beats random box points") {
  const ConcaveDual H = concave_dual(hyperbolic_generator(1.0), 1, 1);
  const ConcaveDual N = concave_dual(scaled_norm_generator(0.6), 1, 1);
  auto rng = stream_rng(1, 0);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (const Vec& v : {Vec((Vec(2) << 0.2, -0.1).finished()), Vec((Vec(2) << 3.0, 0.4).finished()),
                       Vec((Vec(2) << -2.0, -5.0).finished())}) {
    for (const ConcaveDual* G : {&H, &N}) {
      const Vec th = tilted_argmax(*G, 0.0, v, 0.5);
      CHECK(th.cwiseAbs().maxCoeff() <= 0.5 + 1e-15);
      const double best = (*G)(0.0, th.head(1), th.tail(1)) + v.dot(th);
      for (int i = 0; i < 500; ++i) {
        const Vec p = (Vec(2) << u(rng), u(rng)).finished();
        CHECK(best >= (*G)(0.0, p.head(1), p.tail(1)) + v.dot(p) - 1e-12);
      }
    }
  }
  const Vec small = (Vec(2) << 0.2, -0.1).finished();
  CHECK((tilted_argmax(H, 0.0, small, 0.5) - small / std::sqrt(1.05)).norm() < 1e-12);
  CHECK(tilted_argmax(N, 0.0, (Vec(2) << 0.0, -1.0).finished(), 0.5) == (Vec(2) << 0.0, -0.5).finished());
  CHECK(tilted_argmax(H, 0.0, small, 0.0).isZero(0.0));
}

TEST_CASE("tilted argmax of a user generator follows the closed form") {
  const ConcaveDual exact = concave_dual(hyperbolic_generator(1.0), 1, 1);
  const ConcaveDual user = concave_dual(
      user_generator([](double, const Vec& a, const Vec& b) { return std::sqrt(1.0 + a.squaredNorm() + b.squaredNorm()) - 1.0; },
                     1.0),
      1, 1);
  for (const Vec& v : {Vec((Vec(2) << 0.2, -0.1).finished()), Vec((Vec(2) << 3.0, 0.4).finished())}) {
    CHECK((tilted_argmax(user, 0.0, v, 0.5) - tilted_argmax(exact, 0.0, v, 0.5)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("worst case prior") {
  const TimeGrid grid(1.0, 10);
  for (const Generator& g : {hyperbolic_generator(1.0), scaled_norm_generator(0.5), zero_generator()}) {
    const ConcaveDual G = concave_dual(g, 1, 1);
    const auto th = worst_case_theta(make_problem(scalar(grid), grid, G, g.kind == GeneratorKind::zero ? 0.0 : 0.3, 1.0));
    for (std::size_t k = 0; k <= 10; ++k) {
      CHECK(th.theta1()[k](0) == 0.0);
      CHECK(th.theta2()[k](0) == 0.0);
    }
  }
  // The tilted dual peaks at theta = -a(t), outside the box, so the corner (-mu, mu) wins.
  const auto th = worst_case_theta(make_problem(scalar(grid), grid, concave_dual(tilted(), 1, 1), 0.3, 1.0));
  for (std::size_t k = 0; k <= 10; ++k) {
    CHECK(th.theta1()[k](0) == doctest::Approx(-0.3).epsilon(1e-10));
    CHECK(th.theta2()[k](0) == doctest::Approx(0.3).epsilon(1e-10));
  }
}

TEST_CASE("problem construction errors") {
  const TimeGrid grid(1.0, 10);
  const ConcaveDual G = concave_dual(hyperbolic_generator(1.0), 1, 1);
  CHECK(code_of([&] { make_problem(scalar(grid), grid, G, 0.3, 0.33); }) == ErrorCode::grid_mismatch);
  CHECK(code_of([&] { make_problem(scalar(grid), grid, G, 0.8, 1.0); }) == ErrorCode::domain_violation);
  CHECK(code_of([&] { make_problem(scalar(grid), grid, G, -0.1, 1.0); }) == ErrorCode::invalid_value);
  CHECK(code_of([&] { make_problem(scalar(grid), grid, concave_dual(hyperbolic_generator(1.0), 2, 1), 0.3, 1.0); }) ==
        ErrorCode::dimension_mismatch);
}

TEST_CASE("bias equation and its quadrature form agree") {
  const TimeGrid grid(1.0, 1000);
  const auto mc = scalar(grid);
  const auto ric = riccati_solve(mc, grid);
  std::vector<Vec> a, b;
  for (std::size_t k = 0; k <= 1000; ++k) {
    a.push_back(v1(0.3 * std::sin(3.0 * grid.time(k))));
    b.push_back(v1(-0.2 + 0.1 * grid.time(k)));
  }
  const auto theta = ThetaPath::deterministic(a, b);
  const auto ref = ThetaPath::zero(1, 1, grid.points());
  const Mat e = bias_ode(mc, grid, theta, ref, ric);
  const Vec q = bias_quadrature(mc, grid, theta, ref, ric);
  CHECK((e.row(0).transpose() - q).cwiseAbs().maxCoeff() < 1e-5);
  const auto constant = ThetaPath::constant(v1(0.3), v1(-0.2), grid.points());
  CHECK((bias_ode(mc, grid, constant, ref, ric).row(0).transpose() - bias_quadrature(mc, grid, constant, ref, ric))
            .cwiseAbs()
            .maxCoeff() < 1e-6);
  CHECK(bias_ode(mc, grid, theta, theta, ric).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decomposition reproduces the robust filter") {
  const TimeGrid grid(1.0, 400);
  const auto mc = scalar(grid);
  const Mat obs = observe(mc, grid, 3);
  const ConcaveDual G = concave_dual(hyperbolic_generator(1.0), 1, 1);
  std::vector<Vec> a, b;
  for (std::size_t k = 0; k <= 400; ++k) {
    a.push_back(v1(0.2 * std::cos(grid.time(k))));
    b.push_back(v1(-0.1 * grid.time(k)));
  }
  const auto theta = ThetaPath::deterministic(a, b);
  const auto classical = classical_filter(mc, grid, obs);
  const Mat d = decomposition(mc, grid, theta, classical);
  CHECK((d - robust_filter(mc, grid, theta, obs).x_hat).cwiseAbs().maxCoeff() < 1e-10);
  const Mat c = decomposition(mc, grid, theta, classical, Propagator::continuous);
  CHECK((c - d).cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("saddle certificate") {
  const TimeGrid grid(1.0, 200);
  const auto mc = scalar(grid);
  const Mat obs = observe(mc, grid, 4);
  const ConcaveDual G = concave_dual(hyperbolic_generator(1.0), 1, 1);

  const auto zero = certify_saddle(make_problem(mc, grid, G, 0.0, 1.0), &obs);
  CHECK(zero.gap == 0.0);
  REQUIRE(zero.estimator.has_value());
  CHECK(zero.estimator->x_hat == classical_filter(mc, grid, obs).x_hat);

  const auto problem = make_problem(mc, grid, G, 0.3, 1.0);
  const auto rep = certify_saddle(problem, &obs);
  CHECK(rep.gap >= -1e-8);
  CHECK(rep.upper_value >= rep.lower_value - 1e-8);
  CHECK(rep.lower_value == doctest::Approx(inner_value(problem, rep.theta_star)));
  CHECK(rep.lower_value == doctest::Approx(rep.variance + rep.penalty));
  CHECK(rep.variance == doctest::Approx(riccati_solve(mc, grid).P[200](0, 0)));
}

TEST_CASE("certified value against a per-step grid search") {
  // The lower value separates over steps: P(t*) + sum_k max_theta G(t_k, theta) dt.
  const TimeGrid grid(1.0, 16);
  const auto mc = scalar(grid);
  const ConcaveDual G = concave_dual(tilted(), 1, 1);
  const double mu = 0.3;
  const auto rep = certify_saddle(make_problem(mc, grid, G, mu, 1.0));
  double brute = riccati_solve(mc, grid).P[16](0, 0);
  for (std::size_t k = 0; k < 16; ++k) {
    double best = -INFINITY;
    for (int i = 0; i < 41; ++i) {
      for (int j = 0; j < 41; ++j) best = std::max(best, G(grid.time(k), v1(-mu + mu * i / 20.0), v1(-mu + mu * j / 20.0)));
    }
    brute += best * grid.dt();
  }
  CHECK(std::abs(rep.lower_value - brute) < 1e-4);
  CHECK(rep.gap >= -1e-8);
}

TEST_CASE("saddle gap is stable under grid refinement") {
  const ConcaveDual G = concave_dual(hyperbolic_generator(1.0), 1, 1);
  std::vector<double> gaps;
  for (std::size_t N : {500u, 1000u}) {
    const TimeGrid grid(1.0, N);
    gaps.push_back(certify_saddle(make_problem(scalar(grid), grid, G, 0.3, 1.0)).gap);
  }
  CHECK(std::abs(gaps[0] - gaps[1]) < 1e-3);
}

TEST_CASE("particle filter agrees with the Kalman filter for a constant prior") {
  const TimeGrid grid(1.0, 200);
  const auto mc = ModelCoefficients::scalar(grid, -0.5, 1.0, 0.0, 0.0, 1.0, 1.0, 0.5);
  const auto theta = ThetaPath::constant(v1(0.3), v1(-0.2), grid.points());
  const Mat obs = simulate_paths(mc, grid, theta, 1, 6).paths[0].m_obs;
  const auto pf = general_filter(mc, grid, theta, 3000, 7, obs);
  const auto kf = robust_filter(mc, grid, theta, obs);
  const auto ric = riccati_solve(mc, grid);
  for (std::size_t k = 20; k <= 200; k += 20) {
    const auto kk = static_cast<Eigen::Index>(k);
    CHECK(std::abs(pf.x_hat(kk) - kf.x_hat(0, kk)) < 4.0 * pf.x_hat_se(kk) + 1e-3);
    CHECK(std::abs(pf.particle_var(kk) - ric.P[k](0, 0)) < 4.0 * pf.particle_var_se(kk) + 1e-3);
  }
  CHECK(code_of([&] { general_filter(mc, grid, theta, 1, 7, obs); }) == ErrorCode::invalid_value);
}
