#ifndef MMBO_GP_REGRESSION_HPP
#define MMBO_GP_REGRESSION_HPP

#include "mmbo/kernel.hpp"
#include "mmbo/normal.hpp"
#include "mmbo/optimize.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>

namespace mmbo {

using MeanFunction = std::function<double(const Vector&)>;

struct GaussianPrediction {
  Vector mean;
  Matrix covariance;
};

struct NumericalDataset {
  Matrix inputs;  // one row per observation, unit-cube coordinates
  Vector targets;
  double noise_sd = 0.1;

  void validate() const {
    if (inputs.rows() != targets.size()) {
      throw std::invalid_argument("NumericalDataset: input rows and target count differ");
    }
    if (!(noise_sd > 0.0)) {
      throw std::invalid_argument("NumericalDataset: noise_sd must be positive");
    }
  }
  [[nodiscard]] Eigen::Index size() const { return targets.size(); }
};

namespace detail {

inline Vector evaluate_mean(const MeanFunction& mean_fn, const Matrix& x) {
  Vector out = Vector::Zero(x.rows());
  if (mean_fn) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = mean_fn(x.row(i).transpose());
  }
  return out;
}

inline GaussianPrediction prior_prediction(const KernelParams& params, const MeanFunction& mean_fn,
                                           const Matrix& test) {
  return {evaluate_mean(mean_fn, test), kernel_matrix(test, test, params)};
}

// Shared conditioning step: `train_cov` already carries any noise term.
inline GaussianPrediction condition_on(const Matrix& train, const Vector& centered, Matrix train_cov,
                                       const KernelParams& params, const MeanFunction& mean_fn,
                                       const Matrix& test) {
  train_cov.diagonal().array() += gram_jitter * params.signal_variance;
  const CholeskyFactor chol = robust_cholesky(train_cov);
  const auto lower = chol.lower.triangularView<Eigen::Lower>();
  const Matrix cross = kernel_matrix(train, test, params);
  const Vector alpha = lower.transpose().solve(lower.solve(centered));
  const Matrix v = lower.solve(cross);
  GaussianPrediction out;
  out.mean = evaluate_mean(mean_fn, test) + cross.transpose() * alpha;
  out.covariance = kernel_matrix(test, test, params) - v.transpose() * v;
  return out;
}

}  // namespace detail

/// Closed-form posterior under Gaussian noise, Sigma_y = k(X, X) + noise_sd^2 I.
inline GaussianPrediction condition_closed_form(const NumericalDataset& data, const KernelParams& params,
                                                const MeanFunction& mean_fn, const Matrix& test) {
  data.validate();
  params.validate();
  if (data.size() == 0) {
    return detail::prior_prediction(params, mean_fn, test);
  }
  Matrix sigma_y = kernel_matrix(data.inputs, data.inputs, params);
  sigma_y.diagonal().array() += data.noise_sd * data.noise_sd;
  const Vector centered = data.targets - detail::evaluate_mean(mean_fn, data.inputs);
  return detail::condition_on(data.inputs, centered, std::move(sigma_y), params, mean_fn, test);
}

/// Noise-free conditioning on latent values g at the training inputs.
inline GaussianPrediction conditional_at_test(const Matrix& train_inputs, const Vector& latent,
                                              const KernelParams& params, const Matrix& test,
                                              const MeanFunction& mean_fn = {}) {
  params.validate();
  if (train_inputs.rows() != latent.size()) {
    throw std::invalid_argument("conditional_at_test: latent length differs from training input count");
  }
  if (latent.size() == 0) {
    return detail::prior_prediction(params, mean_fn, test);
  }
  const Vector centered = latent - detail::evaluate_mean(mean_fn, train_inputs);
  return detail::condition_on(train_inputs, centered, kernel_matrix(train_inputs, train_inputs, params), params,
                              mean_fn, test);
}

inline double log_marginal_likelihood(const NumericalDataset& data, const KernelParams& params,
                                      const MeanFunction& mean_fn = {}) {
  data.validate();
  params.validate();
  if (data.size() == 0) {
    throw std::invalid_argument("log_marginal_likelihood: empty dataset");
  }
  Matrix sigma_y = kernel_matrix(data.inputs, data.inputs, params);
  sigma_y.diagonal().array() += data.noise_sd * data.noise_sd + gram_jitter * params.signal_variance;
  const CholeskyFactor chol = robust_cholesky(sigma_y);
  const Vector r = data.targets - detail::evaluate_mean(mean_fn, data.inputs);
  const Vector w = chol.lower.triangularView<Eigen::Lower>().solve(r);
  return -0.5 * w.squaredNorm() - 0.5 * log_det_from_cholesky(chol.lower) -
         static_cast<double>(data.size()) * log_sqrt_2pi;
}

struct EvidenceSearchConfig {
  int starts = 8;
  int max_evaluations = 400;
  KernelKind kind = KernelKind::squared_exponential;
  double min_lengthscale = 0.01;
  double max_lengthscale = 10.0;
  double min_signal_sd = 1e-3;
  double max_signal_sd = 100.0;
  double min_noise_sd = 1e-3;
  double max_noise_sd = 10.0;
  std::uint64_t seed = 0;
};

struct PointEstimate {
  KernelParams params;
  double noise_sd = 0.1;
  double log_evidence = -std::numeric_limits<double>::infinity();
};

/// Evidence maximization by multistart Nelder-Mead over log lengthscales, log
/// signal SD and log noise SD. The first start is the prior-centered default,
/// the rest are log-uniform draws inside the search box.
inline PointEstimate fit_point_estimate(const NumericalDataset& data, const EvidenceSearchConfig& config = {}) {
  if (data.size() < 2) {
    throw std::invalid_argument("fit_point_estimate: need at least two observations");
  }
  const Eigen::Index d = data.inputs.cols();
  const Eigen::Index k = d + 2;
  Vector lower(k), upper(k);
  lower.head(d).setConstant(std::log(config.min_lengthscale));
  upper.head(d).setConstant(std::log(config.max_lengthscale));
  lower(d) = std::log(config.min_signal_sd);
  upper(d) = std::log(config.max_signal_sd);
  lower(d + 1) = std::log(config.min_noise_sd);
  upper(d + 1) = std::log(config.max_noise_sd);

  auto unpack = [&](const Vector& v) {
    PointEstimate p;
    p.params.lengthscales = v.head(d).array().exp();
    p.params.signal_variance = std::exp(2.0 * v(d));
    p.params.kind = config.kind;
    p.noise_sd = std::exp(v(d + 1));
    return p;
  };
  auto negative_evidence = [&](const Vector& v) {
    const PointEstimate p = unpack(v);
    NumericalDataset trial{data.inputs, data.targets, p.noise_sd};
    try {
      return -log_marginal_likelihood(trial, p.params);
    } catch (const FactorizationError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointEstimate best;
  bool any = false;
  for (int s = 0; s < config.starts; ++s) {
    Vector start(k);
    if (s == 0) {
      start.head(d).setConstant(std::log(0.3));
      start(d) = 0.0;
      start(d + 1) = std::log(0.1);
    } else {
      for (Eigen::Index i = 0; i < k; ++i) start(i) = lower(i) + unit(rng) * (upper(i) - lower(i));
    }
    const NelderMeadResult r = nelder_mead(negative_evidence, start, lower, upper, 0.5, config.max_evaluations);
    if (std::isfinite(r.value) && (!any || -r.value > best.log_evidence)) {
      best = unpack(r.x);
      best.log_evidence = -r.value;
      any = true;
    }
  }
  if (!any) {
    throw FactorizationError("fit_point_estimate: every start failed to factorize");
  }
  return best;
}

/// Closed-form GP on standardized targets (zero prior mean after subtracting the
/// empirical mean and dividing by the empirical SD). All predictions are in
/// standardized units unless stated otherwise.
class FittedGp {
 public:
  FittedGp() = default;

  FittedGp(const Matrix& inputs, const Vector& targets, const EvidenceSearchConfig& config = {})
      : inputs_(inputs) {
    if (inputs.rows() != targets.size()) {
      throw std::invalid_argument("FittedGp: input rows and target count differ");
    }
    if (targets.size() < 2) {
      throw std::invalid_argument("FittedGp: need at least two observations");
    }
    offset_ = targets.mean();
    const double var = (targets.array() - offset_).square().sum() / static_cast<double>(targets.size() - 1);
    scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
    standardized_ = (targets.array() - offset_) / scale_;
    estimate_ = fit_point_estimate({inputs_, standardized_, 0.1}, config);
    factorize();
  }

  FittedGp(const Matrix& inputs, const Vector& targets, PointEstimate estimate, double offset, double scale)
      : inputs_(inputs), offset_(offset), scale_(scale), estimate_(std::move(estimate)) {
    standardized_ = (targets.array() - offset_) / scale_;
    factorize();
  }

  [[nodiscard]] const PointEstimate& estimate() const { return estimate_; }
  [[nodiscard]] const KernelParams& params() const { return estimate_.params; }
  [[nodiscard]] double noise_sd() const { return estimate_.noise_sd; }
  [[nodiscard]] double offset() const { return offset_; }
  [[nodiscard]] double scale() const { return scale_; }
  [[nodiscard]] const Matrix& inputs() const { return inputs_; }
  [[nodiscard]] const Vector& standardized_targets() const { return standardized_; }
  [[nodiscard]] Vector targets() const { return (standardized_.array() * scale_ + offset_).matrix(); }
  [[nodiscard]] double standardize(double y) const { return (y - offset_) / scale_; }

  [[nodiscard]] Vector mean(const Matrix& test) const {
    return kernel_matrix(inputs_, test, estimate_.params).transpose() * alpha_;
  }

  /// L^{-1} k(X, test): the whitened cross-covariance.
  [[nodiscard]] Matrix whitened_cross(const Matrix& test) const {
    return chol_.triangularView<Eigen::Lower>().solve(kernel_matrix(inputs_, test, estimate_.params));
  }

  [[nodiscard]] Vector variance(const Matrix& test) const {
    const Matrix v = whitened_cross(test);
    return (Vector::Constant(test.rows(), estimate_.params.signal_variance) - v.colwise().squaredNorm().transpose())
        .cwiseMax(0.0);
  }

  [[nodiscard]] GaussianPrediction predict(const Matrix& test) const {
    const Matrix v = whitened_cross(test);
    return {mean(test), kernel_matrix(test, test, estimate_.params) - v.transpose() * v};
  }

  /// Posterior covariance between every row of `a` and every row of `b`.
  [[nodiscard]] Matrix cross_covariance(const Matrix& a, const Matrix& b) const {
    return kernel_matrix(a, b, estimate_.params) - whitened_cross(a).transpose() * whitened_cross(b);
  }

 private:
  void factorize() {
    Matrix sigma_y = kernel_matrix(inputs_, inputs_, estimate_.params);
    sigma_y.diagonal().array() +=
        estimate_.noise_sd * estimate_.noise_sd + gram_jitter * estimate_.params.signal_variance;
    chol_ = robust_cholesky(sigma_y).lower;
    const auto lower = chol_.triangularView<Eigen::Lower>();
    alpha_ = chol_.transpose().triangularView<Eigen::Upper>().solve(lower.solve(standardized_));
  }

  Matrix inputs_;
  Vector standardized_;
  double offset_ = 0.0;
  double scale_ = 1.0;
  PointEstimate estimate_;
  Matrix chol_;
  Vector alpha_;
};

}  // namespace mmbo

#endif  // MMBO_GP_REGRESSION_HPP
