#pragma once

#include <vector>

#include "rkb/model.hpp"
#include "rkb/sde.hpp"

namespace rkb {

struct RiccatiSolution {
  std::vector<Mat> P;       // P(t_k), k = 0..N
  std::vector<Mat> P_half;  // P(t_k + dt/2), k = 0..N-1
};

struct FilterOutput {
  Mat x_hat;        // n x (N+1)
  RiccatiSolution riccati;
  Mat innovations;  // m x N, dI_k
};

// RK4 on dP/dt = BP + PB' - PH'R^{-1}HP + Q, P(0) = 0, symmetrized every step.
RiccatiSolution riccati_solve(const ModelCoefficients& model, const TimeGrid& grid);

// Euler scheme for the Kalman-Bucy filter on observations m (m x (N+1)).
FilterOutput classical_filter(const ModelCoefficients& model, const TimeGrid& grid, const Mat& observations);
FilterOutput classical_filter(const ModelCoefficients& model, const TimeGrid& grid, const Mat& observations,
                              const RiccatiSolution& riccati);

// Filter of the theta-shifted system: drift b - theta1, innovation against
// H x + h - theta2. theta = 0 reproduces classical_filter bitwise.
FilterOutput robust_filter(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta,
                           const Mat& observations);
FilterOutput robust_filter(const ModelCoefficients& model, const TimeGrid& grid, const ThetaPath& theta,
                           const Mat& observations, const RiccatiSolution& riccati);

// Textbook predict/update recursion on the Euler-discretized system with
// y_k = m(t_{k+1}) - m(t_k). Returns the one-step predictions x(t_k | y_0..y_{k-1}).
Mat discrete_kalman_oracle(const ModelCoefficients& model, const TimeGrid& grid, const Mat& observations);

// Observations sampled every `stride` points of a finer grid.
Mat subsample(const Mat& path, std::size_t stride);
ModelCoefficients subsample(const ModelCoefficients& model, std::size_t stride);

}  // namespace rkb
