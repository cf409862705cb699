#include "rkb/kalman.hpp"

#include "rkb/error.hpp"

namespace rkb {

namespace {

Mat riccati_rhs(const Mat& P, const Mat& B, const Mat& H, const Mat& R_inv, const Mat& Q) {
  const Mat PHt = P * H.transpose();
  return B * P + P * B.transpose() - PHt * R_inv * PHt.transpose() + Q;
}

Mat rk4_step(const Mat& P, double h, const Mat& B, const Mat& H, const Mat& R_inv, const Mat& Q) {
  const Mat k1 = riccati_rhs(P, B, H, R_inv, Q);
  const Mat k2 = riccati_rhs(P + 0.5 * h * k1, B, H, R_inv, Q);
  const Mat k3 = riccati_rhs(P + 0.5 * h * k2, B, H, R_inv, Q);
  const Mat k4 = riccati_rhs(P + h * k3, B, H, R_inv, Q);
  Mat next = P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  return 0.5 * (next + next.transpose());
}

void check_observations(const ModelCoefficients& model, const TimeGrid& grid, const Mat& obs) {
  if (model.B.size() != grid.points()) {
    throw Error(ErrorCode::grid_mismatch, "model coefficients do not match the time grid");
  }
  if (obs.rows() != static_cast<Eigen::Index>(model.m) || obs.cols() != static_cast<Eigen::Index>(grid.points())) {
    throw Error(ErrorCode::grid_mismatch, "observations are " + std::to_string(obs.rows()) + "x" +
                                              std::to_string(obs.cols()) + ", expected " + std::to_string(model.m) +
                                              "x" + std::to_string(grid.points()));
  }
}

}  // namespace

RiccatiSolution riccati_solve(const ModelCoefficients& model, const TimeGrid& grid) {
  if (model.B.size() != grid.points()) {
    throw Error(ErrorCode::grid_mismatch, "model coefficients do not match the time grid");
  }
  const CoefficientCache cache = CoefficientCache::build(model);
  const auto n = static_cast<Eigen::Index>(model.n);
  const double dt = grid.dt();
  RiccatiSolution sol;
  sol.P.reserve(grid.points());
  sol.P_half.reserve(grid.steps());
  sol.P.push_back(Mat::Zero(n, n));
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const Mat& P = sol.P.back();
    sol.P_half.push_back(rk4_step(P, 0.5 * dt, model.B[k], model.H[k], cache.R_inv[k], model.Q[k]));
    sol.P.push_back(rk4_step(P, dt, model.B[k], model.H[k], cache.R_inv[k], model.Q[k]));
  }
  return sol;
}

FilterOutput classical_filter(const ModelCoefficients& model, const TimeGrid& grid, const Mat& observations) {
  return classical_filter(model, grid, observations, riccati_solve(model, grid));
}

FilterOutput classical_filter(const ModelCoefficients& model, const TimeGrid& grid, const Mat& observations,
                              const RiccatiSolution& riccati) {
  return robust_filter(model, grid, ThetaPath::zero(model.n, model.m, grid.points()), observations, riccati);
}

FilterOutput robust_filter(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta,
                           const Mat& observations) {
  return robust_filter(model, grid, theta, observations, riccati_solve(model, grid));
}

FilterOutput robust_filter(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta,
                           const Mat& observations, const RiccatiSolution& riccati) {
  check_observations(model, grid, observations);
  if (!theta.z_adapted()) {
    throw Error(ErrorCode::not_adapted, "robust_filter needs a theta adapted to the observation filtration");
  }
  if (theta.n() != model.n || theta.m() != model.m) {
    throw Error(ErrorCode::dimension_mismatch, "theta dimensions do not match the model");
  }
  const CoefficientCache cache = CoefficientCache::build(model);
  const auto n = static_cast<Eigen::Index>(model.n);
  const auto m = static_cast<Eigen::Index>(model.m);
  const std::size_t N = grid.steps();
  const double dt = grid.dt();

  FilterOutput out;
  out.riccati = riccati;
  out.x_hat.resize(n, static_cast<Eigen::Index>(N + 1));
  out.innovations.resize(m, static_cast<Eigen::Index>(N));
  Vec x = model.x0;
  out.x_hat.col(0) = x;
  Vec dI(m), drift(n);
  for (std::size_t k = 0; k < N; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const ThetaValue th = theta.at(k, grid.time(k), x, observations.col(kk));
    dI = observations.col(kk + 1) - observations.col(kk);
    dI.noalias() -= (model.H[k] * x + model.h[k] - th.theta2) * dt;
    const Mat gain = riccati.P[k] * model.H[k].transpose() * cache.R_inv[k];
    drift.noalias() = model.B[k] * x;
    drift += model.b[k] - th.theta1;
    x += drift * dt + gain * dI;
    out.x_hat.col(kk + 1) = x;
    out.innovations.col(kk) = dI;
  }
  return out;
}

Mat discrete_kalman_oracle(const ModelCoefficients& model, const TimeGrid& grid, const Mat& observations) {
  check_observations(model, grid, observations);
  const auto n = static_cast<Eigen::Index>(model.n);
  const std::size_t N = grid.steps();
  const double dt = grid.dt();
  const Mat I = Mat::Identity(n, n);

  Mat out(n, static_cast<Eigen::Index>(N + 1));
  Vec x = model.x0;
  Mat S = Mat::Zero(n, n);
  out.col(0) = x;
  for (std::size_t k = 0; k < N; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    // Update with y_k = (H x_k + h) dt + v_k, cov(v_k) = R dt.
    const Mat Hd = model.H[k] * dt;
    const Mat innov_cov = Hd * S * Hd.transpose() + model.R[k] * dt;
    const Mat K = S * Hd.transpose() * innov_cov.llt().solve(Mat::Identity(innov_cov.rows(), innov_cov.cols()));
    const Vec y = observations.col(kk + 1) - observations.col(kk);
    x += K * (y - Hd * x - model.h[k] * dt);
    S = (I - K * Hd) * S;
    // Predict with x_{k+1} = (I + B dt) x_k + b dt + w_k, cov(w_k) = Q dt.
    const Mat F = I + model.B[k] * dt;
    x = F * x + model.b[k] * dt;
    S = F * S * F.transpose() + model.Q[k] * dt;
    S = 0.5 * (S + S.transpose());
    out.col(kk + 1) = x;
  }
  return out;
}

Mat subsample(const Mat& path, std::size_t stride) {
  if (stride == 0 || (path.cols() - 1) % static_cast<Eigen::Index>(stride) != 0) {
    throw Error(ErrorCode::grid_mismatch, "stride does not divide the grid");
  }
  const Eigen::Index cols = (path.cols() - 1) / static_cast<Eigen::Index>(stride) + 1;
  Mat out(path.rows(), cols);
  for (Eigen::Index c = 0; c < cols; ++c) out.col(c) = path.col(c * static_cast<Eigen::Index>(stride));
  return out;
}

ModelCoefficients subsample(const ModelCoefficients& model, std::size_t stride) {
  if (stride == 0 || (model.B.size() - 1) % stride != 0) {
    throw Error(ErrorCode::grid_mismatch, "stride does not divide the grid");
  }
  ModelCoefficients out;
  out.n = model.n;
  out.m = model.m;
  out.x0 = model.x0;
  for (std::size_t k = 0; k < model.B.size(); k += stride) {
    out.B.push_back(model.B[k]);
    out.H.push_back(model.H[k]);
    out.b.push_back(model.b[k]);
    out.h.push_back(model.h[k]);
    out.Q.push_back(model.Q[k]);
    out.R.push_back(model.R[k]);
  }
  return out;
}

}  // namespace rkb
