#ifndef MMBO_PREDICTIVE_HPP
#define MMBO_PREDICTIVE_HPP

#include "mmbo/gp_regression.hpp"
#include "mmbo/hmc.hpp"
#include "mmbo/latent_gp.hpp"

#include <random>
#include <vector>

namespace mmbo {

/// One joint draw from N(mean, cov). The factorization escalates jitter
/// relative to `scale` and throws FactorizationError when that is exhausted.
inline Vector draw_gaussian(const Vector& mean, const Matrix& cov, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector eps(mean.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = n(rng);
  if (mean.size() == 0) return mean;
  const CholeskyFactor chol = robust_cholesky(symmetrized(cov), 1e-10, 1e-6, scale);
  return mean + chol.lower.triangularView<Eigen::Lower>() * eps;
}

struct PredictiveDraws {
  Matrix draws;     // one row per retained posterior sample
  int dropped = 0;  // samples whose conditional covariance could not be factorized
};

/// Posterior-predictive sampling for single-output latent GPs: for each
/// posterior sample (g, theta), condition on g at the training inputs and draw
/// once from the conditional at the test inputs. Hyperparameter columns follow
/// SingleOutputLayout.
inline PredictiveDraws posterior_predictive(const PosteriorSampleSet& samples, const Matrix& train_inputs,
                                           const Matrix& test_inputs, KernelKind kind, std::uint64_t seed = 0) {
  if (samples.latent_draws.cols() != train_inputs.rows()) {
    throw std::invalid_argument("posterior_predictive: latent draw length differs from training input count");
  }
  const SingleOutputLayout layout{train_inputs.cols() > 0 ? train_inputs.cols() : test_inputs.cols()};
  std::mt19937_64 rng(seed);
  PredictiveDraws out;
  std::vector<Vector> rows;
  for (Eigen::Index s = 0; s < samples.size(); ++s) {
    const Vector theta = samples.hyper_draws.row(s).transpose();
    const KernelParams params = layout.kernel(theta, kind);
    try {
      const GaussianPrediction cond =
          conditional_at_test(train_inputs, samples.latent_draws.row(s).transpose(), params, test_inputs);
      rows.push_back(draw_gaussian(cond.mean, cond.covariance, params.signal_variance, rng));
    } catch (const FactorizationError&) {
      ++out.dropped;
    }
  }
  out.draws.resize(static_cast<Eigen::Index>(rows.size()), test_inputs.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) out.draws.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return out;
}

}  // namespace mmbo

#endif  // MMBO_PREDICTIVE_HPP
