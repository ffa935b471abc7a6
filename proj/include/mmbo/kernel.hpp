#ifndef MMBO_KERNEL_HPP
#define MMBO_KERNEL_HPP

#include "mmbo/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmbo {

/// Axis-aligned design box. Kernels operate on inputs mapped to the unit cube.
class Box {
 public:
  Box(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() == 0 || lower_.size() != upper_.size()) {
      throw std::invalid_argument("Box: bounds must be non-empty and of equal dimension");
    }
    if (!((upper_ - lower_).array() > 0.0).all()) {
      throw std::invalid_argument("Box: every upper bound must exceed its lower bound");
    }
  }

  static Box unit(Eigen::Index dims) { return Box(Vector::Zero(dims), Vector::Ones(dims)); }

  [[nodiscard]] Eigen::Index dims() const { return lower_.size(); }
  [[nodiscard]] const Vector& lower() const { return lower_; }
  [[nodiscard]] const Vector& upper() const { return upper_; }
  [[nodiscard]] Vector widths() const { return upper_ - lower_; }

  [[nodiscard]] Vector to_unit(const Vector& x) const {
    return ((x - lower_).array() / (upper_ - lower_).array()).matrix();
  }
  [[nodiscard]] Vector from_unit(const Vector& u) const {
    return (lower_.array() + u.array() * (upper_ - lower_).array()).matrix();
  }
  [[nodiscard]] Matrix rows_to_unit(const Matrix& x) const {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = to_unit(x.row(i).transpose()).transpose();
    return out;
  }
  [[nodiscard]] Matrix rows_from_unit(const Matrix& u) const {
    Matrix out(u.rows(), u.cols());
    for (Eigen::Index i = 0; i < u.rows(); ++i) out.row(i) = from_unit(u.row(i).transpose()).transpose();
    return out;
  }
  [[nodiscard]] bool contains(const Vector& x, double tol = 1e-12) const {
    return x.size() == dims() && ((x - lower_).array() >= -tol).all() &&
           ((upper_ - x).array() >= -tol).all();
  }
  [[nodiscard]] Vector clamp(const Vector& x) const { return x.cwiseMax(lower_).cwiseMin(upper_); }

 private:
  Vector lower_;
  Vector upper_;
};

enum class KernelKind { squared_exponential, matern52 };

inline std::string_view to_string(KernelKind kind) {
  return kind == KernelKind::squared_exponential ? "squared_exponential" : "matern52";
}

inline KernelKind kernel_kind_from_string(std::string_view name) {
  if (name == "squared_exponential" || name == "se") return KernelKind::squared_exponential;
  if (name == "matern52") return KernelKind::matern52;
  throw std::invalid_argument("unknown kernel kind '" + std::string(name) + "'");
}

/// Stationary ARD kernel hyperparameters.
struct KernelParams {
  Vector lengthscales;
  double signal_variance = 1.0;
  KernelKind kind = KernelKind::squared_exponential;

  KernelParams() = default;
  KernelParams(Vector ls, double variance, KernelKind k = KernelKind::squared_exponential)
      : lengthscales(std::move(ls)), signal_variance(variance), kind(k) {
    validate();
  }

  void validate() const {
    if (lengthscales.size() == 0 || !(lengthscales.array() > 0.0).all() || !lengthscales.allFinite()) {
      throw std::invalid_argument("KernelParams: lengthscales must be positive and finite");
    }
    if (!(signal_variance > 0.0) || !std::isfinite(signal_variance)) {
      throw std::invalid_argument("KernelParams: signal_variance must be positive");
    }
  }
};

/// Relative diagonal jitter applied before every Gram factorization.
inline constexpr double gram_jitter = 1e-10;

namespace detail {

inline void check_dims(Eigen::Index a, Eigen::Index b, Eigen::Index ls) {
  if (a != b || a != ls) {
    throw std::invalid_argument("kernel: dimension mismatch (" + std::to_string(a) + ", " +
                                std::to_string(b) + ", lengthscales " + std::to_string(ls) + ")");
  }
}

// Unit-variance correlation at scaled squared distance r2 = sum (d_i / l_i)^2.
inline double correlation_from_r2(double r2, KernelKind kind) {
  if (kind == KernelKind::squared_exponential) {
    return std::exp(-0.5 * r2);
  }
  const double z = std::sqrt(5.0 * r2);
  return (1.0 + z + z * z / 3.0) * std::exp(-z);
}

// d corr / d r2, expressed so that it stays finite at r2 = 0.
inline double dcorrelation_dr2(double r2, KernelKind kind) {
  if (kind == KernelKind::squared_exponential) {
    return -0.5 * std::exp(-0.5 * r2);
  }
  const double z = std::sqrt(5.0 * r2);
  return -(5.0 / 6.0) * (1.0 + z) * std::exp(-z);
}

template <typename A, typename B>
double scaled_r2(const A& a, const B& b, const Vector& lengthscales) {
  return ((a - b).array() / lengthscales.array()).square().sum();
}

}  // namespace detail

inline double kernel_eval(const Vector& a, const Vector& b, const KernelParams& params) {
  detail::check_dims(a.size(), b.size(), params.lengthscales.size());
  return params.signal_variance *
         detail::correlation_from_r2(detail::scaled_r2(a, b, params.lengthscales), params.kind);
}

/// Unit-variance correlation matrix between the rows of `a` and `b`.
inline Matrix correlation_matrix(const Matrix& a, const Matrix& b, const Vector& lengthscales,
                                 KernelKind kind) {
  if (a.rows() > 0 && b.rows() > 0) {
    detail::check_dims(a.cols(), b.cols(), lengthscales.size());
  }
  Matrix out(a.rows(), b.rows());
  const Matrix as = a.array().rowwise() / lengthscales.transpose().array();
  const Matrix bs = b.array().rowwise() / lengthscales.transpose().array();
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      out(i, j) = detail::correlation_from_r2((as.row(i) - bs.row(j)).squaredNorm(), kind);
    }
  }
  return out;
}

inline Matrix kernel_matrix(const Matrix& a, const Matrix& b, const KernelParams& params) {
  return params.signal_variance * correlation_matrix(a, b, params.lengthscales, params.kind);
}

/// Derivatives of the symmetric correlation matrix over the rows of `x` with
/// respect to each lengthscale.
inline std::vector<Matrix> correlation_lengthscale_gradients(const Matrix& x, const Vector& lengthscales,
                                                              KernelKind kind) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = lengthscales.size();
  std::vector<Matrix> grads(static_cast<std::size_t>(d), Matrix::Zero(n, n));
  const Vector inv_l3 = lengthscales.array().cube().inverse();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const auto diff = (x.row(i) - x.row(j)).array();
      const double r2 = (diff / lengthscales.transpose().array()).square().sum();
      const double dc = detail::dcorrelation_dr2(r2, kind);
      for (Eigen::Index k = 0; k < d; ++k) {
        // d r2 / d l_k = -2 diff_k^2 / l_k^3
        const double g = dc * (-2.0 * diff(k) * diff(k) * inv_l3(k));
        grads[static_cast<std::size_t>(k)](i, j) = g;
        grads[static_cast<std::size_t>(k)](j, i) = g;
      }
    }
  }
  return grads;
}

/// Two-source coregionalization parameters.
struct CoregMatrix {
  double sigma_hf = 1.0;
  double sigma_lf = 1.0;
  double rho = 0.0;

  void validate() const {
    if (!(sigma_hf > 0.0) || !(sigma_lf > 0.0)) {
      throw std::invalid_argument("CoregMatrix: sigmas must be positive");
    }
    if (!(rho >= 0.0 && rho < 1.0)) {
      throw std::invalid_argument("CoregMatrix: rho must lie in [0, 1)");
    }
  }
};

inline Eigen::Matrix2d coreg_B(const CoregMatrix& c) {
  c.validate();
  const double off = c.rho * c.sigma_hf * c.sigma_lf;
  Eigen::Matrix2d b;
  b << c.sigma_hf * c.sigma_hf, off, off, c.sigma_lf * c.sigma_lf;
  return b;
}

/// Index 0 is the high-fidelity (preference) source, index 1 the low-fidelity one.
enum class Fidelity { hf = 1, lf = 2 };

inline Eigen::Index fidelity_index(Fidelity f) { return f == Fidelity::hf ? 0 : 1; }

struct AugmentedInput {
  Vector xi;  // unit-cube coordinates
  Fidelity fidelity = Fidelity::hf;
};

/// ICM augmented kernel [B]_{h h'} k(xi, xi'). The base kernel's signal
/// variance multiplies B.
inline double icm_kernel(const AugmentedInput& a, const AugmentedInput& b, const CoregMatrix& c,
                         const KernelParams& params) {
  const Eigen::Matrix2d bm = coreg_B(c);
  return bm(fidelity_index(a.fidelity), fidelity_index(b.fidelity)) * kernel_eval(a.xi, b.xi, params);
}

/// ICM Gram matrix between two augmented input sets given as (inputs, fidelity
/// index per row).
inline Matrix icm_gram(const Matrix& a, const std::vector<Eigen::Index>& a_fid, const Matrix& b,
                       const std::vector<Eigen::Index>& b_fid, const Eigen::Matrix2d& bm,
                       const KernelParams& params) {
  Matrix k = kernel_matrix(a, b, params);
  for (Eigen::Index j = 0; j < k.cols(); ++j) {
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
      k(i, j) *= bm(a_fid[static_cast<std::size_t>(i)], b_fid[static_cast<std::size_t>(j)]);
    }
  }
  return k;
}

}  // namespace mmbo

#endif  // MMBO_KERNEL_HPP
