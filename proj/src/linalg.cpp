#include "rkb/linalg.hpp"

#include <Eigen/Eigenvalues>

#include "rkb/error.hpp"

namespace rkb {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::missing_key: return "MissingKey";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::not_positive_definite: return "NotPositiveDefinite";
    case ErrorCode::invalid_value: return "InvalidValue";
    case ErrorCode::bound_violation: return "BoundViolation";
    case ErrorCode::grid_mismatch: return "GridMismatch";
    case ErrorCode::domain_violation: return "DomainViolation";
    case ErrorCode::not_adapted: return "NotAdapted";
    case ErrorCode::not_proper: return "NotProper";
    case ErrorCode::too_many_blocks: return "TooManyBlocks";
    case ErrorCode::unknown_subcommand: return "UnknownSubcommand";
    case ErrorCode::io: return "IoError";
  }
  return "Error";
}

double min_eigenvalue(const Mat& symmetric) {
  if (symmetric.size() == 0) return 0.0;
  if (symmetric.size() == 1) return symmetric(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (symmetric + symmetric.transpose()),
                                        Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double asymmetry(const Mat& m) {
  if (m.rows() != m.cols()) return std::numeric_limits<double>::infinity();
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

Mat sym_sqrt(const Mat& symmetric) {
  if (symmetric.size() == 1) {
    Mat out(1, 1);
    out(0, 0) = std::sqrt(std::max(symmetric(0, 0), 0.0));
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (symmetric + symmetric.transpose()));
  Vec d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Mat sym_inv_sqrt(const Mat& symmetric, double cutoff) {
  if (symmetric.size() == 1) {
    Mat out(1, 1);
    const double v = symmetric(0, 0);
    out(0, 0) = v > cutoff ? 1.0 / std::sqrt(v) : 0.0;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (symmetric + symmetric.transpose()));
  Vec d = es.eigenvalues();
  for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = d(i) > cutoff ? 1.0 / std::sqrt(d(i)) : 0.0;
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Mat spd_inverse(const Mat& spd) {
  Eigen::LLT<Mat> llt(spd);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::not_positive_definite, "Cholesky factorization failed");
  }
  return llt.solve(Mat::Identity(spd.rows(), spd.cols()));
}

}  // namespace rkb
