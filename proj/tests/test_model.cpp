#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <functional>

#include "rkb/error.hpp"
#include "rkb/model.hpp"

using namespace rkb;

namespace {

const char* kScalar = R"({
  "n": 1, "m": 1, "T": 1.0, "N": 10,
  "B": 0.0, "H": 1.0, "b": 0.0, "h": 0.0, "Q": 1.0, "R": 1.0, "x0": 0.0,
  "mu": 0.5, "epsilon": 0.5, "generator": "hyperbolic:1", "seed": 3
})";

ModelCoefficients two_dim(const TimeGrid& grid) {
  Mat B(2, 2), H(1, 2), Q(2, 2), R(1, 1);
  B << -1.0, 0.5, 0.0, -0.2;
  H << 1.0, 0.0;
  Q << 1.0, 0.2, 0.2, 0.5;
  R << 0.3;
  return ModelCoefficients::constant(grid, B, H, Vec::Zero(2), Vec::Zero(1), Q, R, Vec::Ones(2));
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

}  // namespace

TEST_CASE("time grid spacing and index lookup") {
  const TimeGrid grid(2.0, 8);
  CHECK(grid.points() == 9);
  CHECK(grid.dt() == doctest::Approx(0.25));
  CHECK(grid.time(8) == 2.0);
  CHECK(grid.index_of(0.75) == 3);
  CHECK(code_of([&] { (void)grid.index_of(0.3); }) == ErrorCode::grid_mismatch);
  CHECK(code_of([] { TimeGrid(1.0, 1); }) == ErrorCode::invalid_value);
  CHECK(code_of([] { TimeGrid(-1.0, 5); }) == ErrorCode::invalid_value);
}

TEST_CASE("valid models produce no violations") {
  const TimeGrid grid(1.0, 5);
  CHECK(validate(ModelCoefficients::scalar(grid, 0, 1, 0, 0, 1, 1, 0), grid).empty());
  CHECK(validate(two_dim(grid), grid).empty());
}

TEST_CASE("negative eigenvalue of Q is reported once with its value") {
  const TimeGrid grid(1.0, 5);
  ModelCoefficients mc = two_dim(grid);
  Mat Q(2, 2);
  Q << 1.0, 0.0, 0.0, -0.1;
  for (std::size_t k = 2; k < grid.points(); ++k) mc.Q[k] = Q;
  const auto v = validate(mc, grid);
  REQUIRE(v.size() == 1);
  CHECK(v[0].field == "Q");
  CHECK(v[0].grid_index == 2);
  CHECK(v[0].magnitude == doctest::Approx(-0.1));
}

TEST_CASE("asymmetric R is a single violation") {
  const TimeGrid grid(1.0, 5);
  Mat R(2, 2);
  R << 1.0, 0.3, 0.0, 1.0;
  Mat H = Mat::Identity(2, 1);
  const auto mc = ModelCoefficients::constant(grid, Mat::Zero(1, 1), H, Vec::Zero(1), Vec::Zero(2), Mat::Ones(1, 1), R,
                                              Vec::Zero(1));
  const auto v = validate(mc, grid);
  REQUIRE(v.size() == 1);
  CHECK(v[0].field == "R");
}

TEST_CASE("R below the definiteness floor and oversized coefficients") {
  const TimeGrid grid(1.0, 4);
  auto mc = ModelCoefficients::scalar(grid, 0, 1, 0, 0, 1, 1e-12, 0);
  auto v = validate(mc, grid);
  REQUIRE(v.size() == 1);
  CHECK(v[0].field == "R");
  mc = ModelCoefficients::scalar(grid, 2e6, 1, 0, 0, 1, 1, 0);
  v = validate(mc, grid);
  REQUIRE(v.size() == 1);
  CHECK(v[0].field == "B");
}

TEST_CASE("shape errors are reported") {
  const TimeGrid grid(1.0, 4);
  auto mc = ModelCoefficients::scalar(grid, 0, 1, 0, 0, 1, 1, 0);
  mc.H[1] = Mat::Zero(2, 1);
  const auto v = validate(mc, grid);
  REQUIRE(v.size() == 1);
  CHECK(v[0].field == "H");
  CHECK(v[0].grid_index == 1);
}

TEST_CASE("validation is pure") {
  const TimeGrid grid(1.0, 5);
  auto mc = two_dim(grid);
  mc.Q[3](1, 1) = -0.4;
  const auto a = validate(mc, grid);
  const auto b = validate(mc, grid);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].field == b[i].field);
    CHECK(a[i].magnitude == b[i].magnitude);
    CHECK(a[i].message == b[i].message);
  }
}

TEST_CASE("config load and serialize round trip") {
  const Config cfg = load_config(kScalar);
  CHECK(cfg.grid.steps() == 10);
  CHECK(cfg.ambiguity.mu == 0.5);
  CHECK(cfg.settings.seed.value() == 3);
  CHECK(load_config(serialize_config(cfg)) == cfg);

  Config two = cfg;
  two.model = two_dim(cfg.grid);
  two.model.b[4] = Vec::Constant(2, 0.7);  // time-varying entry
  two.settings.generator = "norm:1";
  CHECK(load_config(serialize_config(two)) == two);
}

TEST_CASE("config errors") {
  std::string text = kScalar;
  CHECK(code_of([&] { load_config(std::string(text).replace(text.find("\"R\": 1.0"), 8, "\"R\": 0.0")); }) ==
        ErrorCode::not_positive_definite);
  CHECK(code_of([&] { load_config(std::string(text).replace(text.find("\"Q\": 1.0,"), 9, "")); }) ==
        ErrorCode::missing_key);
  CHECK(code_of([&] { load_config(std::string(text).replace(text.find("\"mu\": 0.5"), 9, "\"mu\": 0.9")); }) ==
        ErrorCode::invalid_value);
  CHECK(code_of([] { load_config("{not json"); }) == ErrorCode::invalid_value);
  CHECK(code_of([] { load_config_file("/nonexistent/config.json"); }) == ErrorCode::io);
}

TEST_CASE("bundled configuration loads") {
  const Config cfg = load_config_file(std::string(RKB_DATA_DIR) + "/scalar.json");
  CHECK(cfg.model.n == 1);
  CHECK(cfg.grid.steps() == 1000);
  CHECK(cfg.settings.seed.has_value());
}

TEST_CASE("coefficient cache factorizations") {
  const TimeGrid grid(1.0, 3);
  const auto mc = two_dim(grid);
  const auto c = CoefficientCache::build(mc);
  for (std::size_t k = 0; k < grid.points(); ++k) {
    CHECK((c.Q_sqrt[k] * c.Q_sqrt[k] - mc.Q[k]).norm() < 1e-12);
    CHECK((c.Q_inv_sqrt[k] * mc.Q[k] * c.Q_inv_sqrt[k] - Mat::Identity(2, 2)).norm() < 1e-12);
    CHECK((c.R_inv[k] * mc.R[k] - Mat::Identity(1, 1)).norm() < 1e-12);
  }
}
