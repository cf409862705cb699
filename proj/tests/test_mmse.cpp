#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rkb/error.hpp"
#include "rkb/mmse.hpp"
#include "rkb/stats.hpp"

using namespace rkb;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an exception");
  return ErrorCode::io;
}

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Two points, uniform P, densities tilted towards either point.
FiniteConvexOperator two_point(double alpha2) {
  FiniteConvexOperator op;
  op.prob = vec({0.5, 0.5});
  op.densities = {vec({1.5, 0.5}), vec({0.5, 1.5})};
  op.penalties = vec({0.0, alpha2});
  return op;
}

}  // namespace

TEST_CASE("operator evaluation and invariants") {
  const auto op = two_point(0.5);
  CHECK(op.proper());
  CHECK(rho_eval(op, vec({1.0, -1.0})) == doctest::Approx(0.5));
  CHECK(concave_penalties(op) == vec({0.0, -0.5}));

  auto bad = op;
  bad.densities[1] = vec({0.0, 2.0});
  CHECK_FALSE(bad.proper());
  CHECK_NOTHROW(bad.validate());
  CHECK(code_of([&] { bad.validate(true); }) == ErrorCode::not_proper);
  CHECK(code_of([&] { conditional_mmse(bad, vec({1.0, 0.0}), Partition::trivial(2)); }) == ErrorCode::not_proper);
  bad = op;
  bad.penalties = vec({0.1, 0.5});
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::invalid_value);
  bad = op;
  bad.densities[0] = vec({1.0, 0.5});
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::invalid_value);
  CHECK(code_of([&] { rho_eval(op, vec({1.0})); }) == ErrorCode::dimension_mismatch);
}

TEST_CASE("partitions") {
  const auto p = Partition::from_labels({2, 0, 2, 1});
  CHECK(p.blocks.size() == 3);
  CHECK(p.size() == 4);
  CHECK_NOTHROW(p.validate(4));
  CHECK(code_of([&] { p.validate(5); }) == ErrorCode::invalid_value);
  CHECK(Partition::trivial(3).labels() == std::vector<std::size_t>{0, 0, 0});
  Partition overlap{{{0, 1}, {1}}};
  CHECK(code_of([&] { overlap.validate(2); }) == ErrorCode::invalid_value);
}

TEST_CASE("two-point problem solved by hand") {
  // E_1 (xi - c)^2 = 1 + c^2 - c, E_2 (xi - c)^2 = 1 + c^2 + c for xi = (1, -1).
  const Vec xi = vec({1.0, -1.0});
  const auto sym = conditional_mmse(two_point(0.0), xi, Partition::trivial(2));
  CHECK(sym.value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sym.eta_hat.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(sym.lambda_star(0) == doctest::Approx(0.5));
  // With alpha_2 = 1/2 the two branches cross at c = 1/4.
  const auto tilt = conditional_mmse(two_point(0.5), xi, Partition::trivial(2));
  CHECK(tilt.value == doctest::Approx(0.8125).epsilon(1e-12));
  CHECK(tilt.eta_hat(0) == doctest::Approx(0.25));
  CHECK(tilt.eta_hat(1) == doctest::Approx(0.25));
  CHECK(saddle_check(two_point(0.5), xi, Partition::trivial(2), tilt).max_violation <= 1e-8);
}

TEST_CASE("extreme partitions") {
  auto rng = stream_rng(11, 0);
  const auto inst = random_instance(rng, 6, 3, 3);
  const std::size_t n = inst.op.size();
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i;
  const auto fine = conditional_mmse(inst.op, inst.xi, Partition::from_labels(labels));
  CHECK((fine.eta_hat - inst.xi).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(fine.value) < 1e-12);

  FiniteConvexOperator single;
  single.prob = inst.op.prob;
  single.densities = {Vec::Ones(static_cast<Eigen::Index>(n))};
  single.penalties = Vec::Zero(1);
  const auto r = conditional_mmse(single, inst.xi, Partition::trivial(n));
  const double mean = single.prob.dot(inst.xi);
  CHECK((r.eta_hat.array() - mean).abs().maxCoeff() < 1e-12);
  CHECK(r.value == doctest::Approx(single.prob.dot((inst.xi.array() - mean).square().matrix())));
}

TEST_CASE("solver agrees with brute force and certifies its saddle") {
  for (std::uint64_t i = 0; i < 8; ++i) {
    auto rng = stream_rng(21, i);
    const auto inst = random_instance(rng, 7, 4, 3);
    const auto r = conditional_mmse(inst.op, inst.xi, inst.C);
    const auto bf = brute_force_mmse(inst.op, inst.xi, inst.C);
    CHECK(r.value <= bf.value + 1e-12);
    CHECK((r.eta_hat - bf.eta).cwiseAbs().maxCoeff() <= 10.0 * bf.resolution + 1e-12);
    CHECK(saddle_check(inst.op, inst.xi, inst.C, r).max_violation <= 1e-8);
    CHECK(uniqueness_probe(inst.op, inst.xi, inst.C, 5, i) <= 1e-6);
    CHECK(r.value == doctest::Approx(dual_objective(inst.op, inst.xi, inst.C, r.lambda_star)).epsilon(1e-10));
  }
}

TEST_CASE("results are reproducible for a fixed seed") {
  auto rng = stream_rng(5, 3);
  const auto inst = random_instance(rng);
  MmseOptions opt;
  opt.seed = 9;
  const auto a = conditional_mmse(inst.op, inst.xi, inst.C, opt);
  const auto b = conditional_mmse(inst.op, inst.xi, inst.C, opt);
  CHECK(a.eta_hat == b.eta_hat);
  CHECK(a.start_index == b.start_index);
}

TEST_CASE("brute force refuses more than three blocks") {
  FiniteConvexOperator big;
  big.prob = Vec::Constant(4, 0.25);
  big.densities = {Vec::Ones(4)};
  big.penalties = Vec::Zero(1);
  CHECK(code_of([&] { brute_force_mmse(big, vec({1, 2, 3, 4}), Partition::from_labels({0, 1, 2, 3})); }) ==
        ErrorCode::too_many_blocks);
}

TEST_CASE("convex hull distance") {
  const std::vector<Vec> tri = {vec({0.0, 0.0}), vec({1.0, 0.0}), vec({0.0, 1.0})};
  CHECK(hull_distance(tri, vec({0.2, 0.3})) < 1e-12);
  CHECK(hull_distance(tri, vec({1.0, 1.0})) == doctest::Approx(std::sqrt(0.5)));
  Vec w;
  CHECK(hull_distance(tri, vec({-1.0, 0.5}), &w) == doctest::Approx(1.0));
  CHECK(w.sum() == doctest::Approx(1.0));
}

TEST_CASE("stability") {
  auto rng = stream_rng(31, 0);
  const auto ind = independence_instance(rng);
  CHECK(check_stability(ind.op, ind.C).stable);
  // f1 does not average to one on the blocks, so f1 / f1_C is a new density.
  FiniteConvexOperator op;
  op.prob = Vec::Constant(4, 0.25);
  op.densities = {Vec::Ones(4), vec({1.6, 1.0, 0.7, 0.7}), vec({1.0, 1.0, 0.3, 1.7})};
  op.penalties = vec({0.0, 0.1, 0.2});
  const auto C = Partition::from_labels({0, 0, 1, 1});
  const auto rep = check_stability(op, C);
  CHECK_FALSE(rep.stable);
  const auto closed = stabilize(op, C);
  CHECK(closed.count() > op.count());
  CHECK(check_stability(closed, C).stable);
}

TEST_CASE("estimator properties") {
  for (std::uint64_t i = 0; i < 5; ++i) {
    auto rng = stream_rng(41, i);
    const auto inst = random_instance(rng);
    CHECK(property_suite(inst.op, inst.C, i, 2, 1e-8).all());
  }
}

TEST_CASE("moment and restriction bounds") {
  auto rng = stream_rng(51, 0);
  const auto inst = random_instance(rng);
  const auto mb = moment_bound_check(inst.op, inst.xi, 2.0);
  CHECK(mb.holds);
  CHECK(mb.lhs <= mb.rhs + 1e-12);
  CHECK(code_of([&] { moment_bound_check(inst.op, inst.xi, 1.0); }) == ErrorCode::invalid_value);
  const auto r = conditional_mmse(inst.op, inst.xi, inst.C);
  const auto rb = restriction_bound(inst.op, inst.xi, inst.C, r.eta_hat);
  CHECK(rb.norm <= rb.bound + 1e-12);
}
