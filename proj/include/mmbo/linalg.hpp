#ifndef MMBO_LINALG_HPP
#define MMBO_LINALG_HPP

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace mmbo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a covariance matrix stays indefinite after jitter escalation.
class FactorizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CholeskyFactor {
  Matrix lower;
  double jitter_used = 0.0;  // absolute amount added to the diagonal
};

inline std::optional<Matrix> try_cholesky(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    return std::nullopt;
  }
  Matrix lower = llt.matrixL();
  if (!lower.allFinite()) {
    return std::nullopt;
  }
  return lower;
}

/// Cholesky factor of a symmetric PSD matrix. The relative jitter is escalated
/// by decades from `min_relative_jitter` to `max_relative_jitter` (scaled by
/// `jitter_scale`, or the mean diagonal when that is zero) until the
/// factorization succeeds.
inline CholeskyFactor robust_cholesky(const Matrix& a, double min_relative_jitter = 0.0,
                                      double max_relative_jitter = 1e-6, double jitter_scale = 0.0) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("robust_cholesky: matrix is not square");
  }
  if (a.rows() == 0) {
    return {Matrix(0, 0), 0.0};
  }
  if (!a.allFinite()) {
    throw FactorizationError("robust_cholesky: non-finite matrix entries");
  }
  const double scale = jitter_scale > 0.0 ? jitter_scale : std::max(a.diagonal().mean(), 1e-300);
  double rel = min_relative_jitter;
  while (true) {
    Matrix jittered = a;
    if (rel > 0.0) {
      jittered.diagonal().array() += rel * scale;
    }
    if (auto lower = try_cholesky(jittered)) {
      return {std::move(*lower), rel * scale};
    }
    if (rel >= max_relative_jitter) {
      break;
    }
    rel = rel == 0.0 ? 1e-10 : rel * 10.0;
    if (rel > max_relative_jitter) {
      rel = max_relative_jitter;
    }
  }
  throw FactorizationError("robust_cholesky: matrix not positive definite up to relative jitter " +
                           std::to_string(max_relative_jitter));
}

/// log|A| from its Cholesky factor.
inline double log_det_from_cholesky(const Matrix& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline double min_eigenvalue(const Matrix& a) {
  if (a.rows() == 0) {
    return 0.0;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrized(a), Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

}  // namespace mmbo

#endif  // MMBO_LINALG_HPP
