#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <omp.h>

#include <cmath>

#include "rkb/error.hpp"
#include "rkb/sde.hpp"

using namespace rkb;

namespace {

ModelCoefficients scalar(const TimeGrid& grid, double B = 0.0, double b = 0.0, double x0 = 0.5) {
  return ModelCoefficients::scalar(grid, B, 1.0, b, 0.0, 1.0, 1.0, x0);
}

ThetaPath const_theta(double a, double b, const TimeGrid& grid) {
  return ThetaPath::constant(Vec::Constant(1, a), Vec::Constant(1, b), grid.points());
}

ModelCoefficients two_dim(const TimeGrid& grid) {
  Mat B(2, 2), H(1, 2), Q(2, 2), R(1, 1);
  B << -1.0, 0.5, 0.0, -0.2;
  H << 1.0, 0.3;
  Q << 1.0, 0.2, 0.2, 0.5;
  R << 0.3;
  return ModelCoefficients::constant(grid, B, H, Vec::Constant(2, 0.1), Vec::Zero(1), Q, R, Vec::Ones(2));
}

}  // namespace

TEST_CASE("path invariants") {
  const TimeGrid grid(1.0, 50);
  const auto batch = simulate_paths(scalar(grid), grid, const_theta(0.3, -0.2, grid), 20, 1);
  for (const auto& p : batch.paths) {
    CHECK(p.f_theta(0) == 1.0);
    CHECK(p.f_theta.minCoeff() > 0.0);
    CHECK(p.x(0, 0) == 0.5);
    CHECK(p.m_obs(0, 0) == 0.0);
    CHECK(p.theta1(0, 10) == 0.3);
  }
}

TEST_CASE("batches are reproducible, prefix stable and independent of threads") {
  const TimeGrid grid(1.0, 40);
  for (const ModelCoefficients& mc : {scalar(grid), two_dim(grid)}) {
    const auto theta = ThetaPath::zero(mc.n, mc.m, grid.points());
    SimulationOptions serial;
    serial.execution = Execution::serial;
    const auto a = simulate_paths(mc, grid, theta, 16, 9, serial);
    omp_set_num_threads(4);
    const auto b = simulate_paths(mc, grid, theta, 16, 9);
    omp_set_num_threads(1);
    const auto c = simulate_paths(mc, grid, theta, 24, 9);
    const auto d = simulate_paths(mc, grid, theta, 16, 10);
    for (std::size_t p = 0; p < 16; ++p) {
      CHECK(a.paths[p].x == b.paths[p].x);
      CHECK(a.paths[p].m_obs == c.paths[p].m_obs);
      CHECK(a.paths[p].f_theta == b.paths[p].f_theta);
    }
    CHECK(a.paths[0].x != d.paths[0].x);
  }
}

TEST_CASE("terminal storage keeps the last column of the full path") {
  const TimeGrid grid(1.0, 40);
  SimulationOptions opt;
  opt.storage = PathStorage::terminal;
  const auto theta = const_theta(0.2, 0.1, grid);
  const auto full = simulate_paths(scalar(grid), grid, theta, 5, 3);
  const auto term = simulate_paths(scalar(grid), grid, theta, 5, 3, opt);
  for (std::size_t p = 0; p < 5; ++p) {
    CHECK(term.paths[p].x(0, 0) == full.paths[p].x(0, 40));
    CHECK(term.paths[p].f_theta(0) == full.paths[p].f_theta(40));
  }
}

TEST_CASE("signal mean under a constant prior") {
  // B = 0: E x(t) = x0 + (b - theta1) t; E m(t) = E int (x + h - theta2) ds.
  const TimeGrid grid(1.0, 100);
  const double x0 = 0.5, b = 0.1, t1 = 0.4, t2 = -0.3;
  const auto batch = simulate_paths(scalar(grid, 0.0, b, x0), grid, const_theta(t1, t2, grid), 20000, 5);
  std::vector<double> xs, ms;
  for (const auto& p : batch.paths) {
    xs.push_back(p.x(0, 100));
    ms.push_back(p.m_obs(0, 100));
  }
  const Estimate ex = estimate(xs), em = estimate(ms);
  const double mx = x0 + (b - t1);
  // Euler: m(T) = sum_k (x_k - theta2) dt + noise, x_k = x0 + (b - theta1) t_k.
  const double mm = x0 - t2 + (b - t1) * 0.5 * (1.0 - grid.dt());
  CHECK(std::abs(ex.mean - mx) < 4.0 * ex.std_error);
  CHECK(std::abs(em.mean - mm) < 4.0 * em.std_error);
}

TEST_CASE("density has unit mean and reweights the reference measure") {
  const TimeGrid grid(1.0, 100);
  const auto mc = scalar(grid, -0.5, 0.0, 0.0);
  const auto theta = const_theta(0.4, -0.3, grid);
  const auto ref = simulate_paths(mc, grid, ThetaPath::zero(1, 1, grid.points()), 20000, 7);
  const auto f = density_path(mc, theta, ref);
  std::vector<double> w, wx;
  for (std::size_t p = 0; p < ref.paths.size(); ++p) {
    w.push_back(f[p](100));
    wx.push_back(f[p](100) * ref.paths[p].x(0, 100));
  }
  const Estimate ew = estimate(w), ewx = estimate(wx);
  CHECK(std::abs(ew.mean - 1.0) < 4.0 * ew.std_error);

  const auto direct = simulate_paths(mc, grid, theta, 20000, 8);
  std::vector<double> xs;
  for (const auto& p : direct.paths) xs.push_back(p.x(0, 100));
  const Estimate ex = estimate(xs);
  CHECK(std::abs(ewx.mean - ex.mean) < 4.0 * std::hypot(ewx.std_error, ex.std_error));
}

TEST_CASE("density of the zero prior is identically one") {
  const TimeGrid grid(1.0, 30);
  const auto mc = two_dim(grid);
  const auto ref = simulate_paths(mc, grid, ThetaPath::zero(2, 1, grid.points()), 4, 1);
  for (const Vec& f : density_path(mc, ThetaPath::zero(2, 1, grid.points()), ref)) CHECK(f == Vec::Ones(31));
}

TEST_CASE("exponential moment of the Girsanov exponent") {
  for (auto [c, alpha, t] : {std::tuple{1.0, 2.0, 1.0}, std::tuple{0.5, 3.0, 2.0}, std::tuple{0.8, 1.5, 0.5}}) {
    const auto m = girsanov_moment_check(c, alpha, t, 200000, 4);
    CHECK(m.upper_bound == doctest::Approx(std::exp((alpha * alpha - alpha) * t * c * c / 2)));
    CHECK(std::abs(m.estimate - m.upper_bound) < 4.0 * m.std_error);
  }
  CHECK_THROWS_AS(girsanov_moment_check(1.0, 0.5, 1.0, 10, 1), Error);
}

TEST_CASE("prior bound is enforced") {
  const TimeGrid grid(1.0, 10);
  SimulationOptions opt;
  opt.mu = 0.5;
  try {
    simulate_paths(scalar(grid), grid, const_theta(0.6, 0.0, grid), 2, 1, opt);
    FAIL("expected a bound violation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::bound_violation);
  }
  const auto fb = ThetaPath::feedback(Adaptedness::observation_feedback, 1, 1, [](std::size_t, double, const Vec& m) {
    return ThetaValue{Vec::Constant(1, 10.0 * m(0)), Vec::Zero(1)};
  });
  CHECK_THROWS_AS(simulate_paths(scalar(grid), grid, fb, 4, 1, opt), Error);
  CHECK_NOTHROW(simulate_paths(scalar(grid), grid, const_theta(0.5, -0.5, grid), 2, 1, opt));
}

TEST_CASE("feedback priors see the observation or the signal") {
  const TimeGrid grid(1.0, 20);
  const auto on_obs = ThetaPath::feedback(Adaptedness::observation_feedback, 1, 1, [](std::size_t, double, const Vec& s) {
    return ThetaValue{Vec::Constant(1, std::tanh(s(0))), Vec::Zero(1)};
  });
  const auto batch = simulate_paths(scalar(grid), grid, on_obs, 3, 2);
  for (const auto& p : batch.paths) {
    for (Eigen::Index k = 0; k < 20; ++k) CHECK(p.theta1(0, k) == std::tanh(p.m_obs(0, k)));
  }
  CHECK(on_obs.z_adapted());
  const auto on_sig = ThetaPath::feedback(Adaptedness::signal_feedback, 1, 1, [](std::size_t, double, const Vec& s) {
    return ThetaValue{Vec::Constant(1, 0.1 * s(0)), Vec::Zero(1)};
  });
  CHECK_FALSE(on_sig.z_adapted());
  const auto b2 = simulate_paths(scalar(grid), grid, on_sig, 2, 2);
  CHECK(b2.paths[0].theta1(0, 5) == 0.1 * b2.paths[0].x(0, 5));
}

TEST_CASE("mixture of identical priors and endpoint weights") {
  const TimeGrid grid(1.0, 20);
  const auto mc = scalar(grid);
  const auto ref = simulate_paths(mc, grid, ThetaPath::zero(1, 1, grid.points()), 5, 3);
  const auto a = const_theta(0.2, 0.1, grid), b = const_theta(-0.3, 0.0, grid);
  const auto same = mixture_theta(mc, a, a, 0.3, ref);
  CHECK(same[0].theta1()[4](0) == 0.2);
  const auto only_a = mixture_theta(mc, a, b, 1.0, ref);
  CHECK(only_a[2].theta1()[7](0) == doctest::Approx(0.2));
  CHECK_FALSE(only_a[2].z_adapted());
  CHECK_THROWS_AS(mixture_theta(mc, a, b, 1.5, ref), Error);
}

TEST_CASE("dimension checks") {
  const TimeGrid grid(1.0, 10);
  CHECK_THROWS_AS(simulate_paths(scalar(grid), grid, ThetaPath::zero(2, 1, grid.points()), 1, 1), Error);
  CHECK_THROWS_AS(simulate_paths(scalar(TimeGrid(1.0, 5)), grid, ThetaPath::zero(1, 1, grid.points()), 1, 1), Error);
}
