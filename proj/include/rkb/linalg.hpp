#pragma once

#include <Eigen/Dense>

namespace rkb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

double min_eigenvalue(const Mat& symmetric);
double asymmetry(const Mat& m);

// Principal square root of a symmetric PSD matrix (negative eigenvalues clamped).
Mat sym_sqrt(const Mat& symmetric);

// Moore-Penrose inverse square root; eigenvalues below `cutoff` map to zero.
Mat sym_inv_sqrt(const Mat& symmetric, double cutoff = 1e-14);

// Inverse of an SPD matrix through its Cholesky factor.
Mat spd_inverse(const Mat& spd);

}  // namespace rkb
