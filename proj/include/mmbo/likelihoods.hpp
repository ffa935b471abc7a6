#ifndef MMBO_LIKELIHOODS_HPP
#define MMBO_LIKELIHOODS_HPP

#include "mmbo/linalg.hpp"
#include "mmbo/normal.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmbo {

/// The decision maker preferred row `winner` over row `loser`.
struct Comparison {
  Eigen::Index winner = 0;
  Eigen::Index loser = 0;

  friend bool operator==(const Comparison&, const Comparison&) = default;
};

struct MixedDataset {
  Matrix hf_inputs;  // unit-cube rows referenced by comparisons
  std::vector<Comparison> comparisons;
  Matrix lf_inputs;
  Vector lf_targets;

  [[nodiscard]] Eigen::Index n_hf() const { return hf_inputs.rows(); }
  [[nodiscard]] Eigen::Index n_lf() const { return lf_inputs.rows(); }
  [[nodiscard]] Eigen::Index dims() const {
    return hf_inputs.cols() > 0 ? hf_inputs.cols() : lf_inputs.cols();
  }

  void validate() const {
    for (const auto& c : comparisons) {
      if (c.winner == c.loser) {
        throw std::invalid_argument("MixedDataset: comparison with identical winner and loser");
      }
      if (c.winner < 0 || c.loser < 0 || c.winner >= n_hf() || c.loser >= n_hf()) {
        throw std::out_of_range("MixedDataset: comparison index out of range");
      }
    }
    if (lf_targets.size() != lf_inputs.rows()) {
      throw std::invalid_argument("MixedDataset: lf target count differs from lf input rows");
    }
    if (n_hf() > 0 && n_lf() > 0 && hf_inputs.cols() != lf_inputs.cols()) {
      throw std::invalid_argument("MixedDataset: hf and lf inputs differ in dimension");
    }
  }
};

/// log Phi((g_winner - g_loser) / sqrt(2 noise_sd^2)).
inline double probit_pref_loglik(double g_winner, double g_loser, double noise_sd) {
  if (!(noise_sd > 0.0)) {
    throw std::invalid_argument("probit_pref_loglik: noise_sd must be positive");
  }
  return log_normal_cdf((g_winner - g_loser) / (std::numbers::sqrt2 * noise_sd));
}

/// Value and partial derivatives of probit_pref_loglik.
struct ProbitTerm {
  double value;
  double d_winner;
  double d_noise_sd;
};

inline ProbitTerm probit_term(double g_winner, double g_loser, double noise_sd) {
  const double denom = std::numbers::sqrt2 * noise_sd;
  const double z = (g_winner - g_loser) / denom;
  const double r = d_log_normal_cdf(z);
  return {log_normal_cdf(z), r / denom, -r * z / noise_sd};
}

/// Sum of probit terms over comparisons (on the first n_hf latents) plus
/// Gaussian log densities N(y_i; g_lf_i, noise_sd^2) over numerical data.
inline double joint_multimodal_loglik(const Vector& latents, const MixedDataset& data, double noise_sd) {
  if (latents.size() != data.n_hf() + data.n_lf()) {
    throw std::invalid_argument("joint_multimodal_loglik: latent length must equal n_hf + n_lf");
  }
  if (!(noise_sd > 0.0)) {
    throw std::invalid_argument("joint_multimodal_loglik: noise_sd must be positive");
  }
  data.validate();
  double total = 0.0;
  for (const auto& c : data.comparisons) {
    total += probit_pref_loglik(latents(c.winner), latents(c.loser), noise_sd);
  }
  for (Eigen::Index i = 0; i < data.n_lf(); ++i) {
    total += normal_logpdf(data.lf_targets(i), latents(data.n_hf() + i), noise_sd);
  }
  return total;
}

/// Comparison likelihood of the hierarchical model with the low-fidelity
/// process integrated out:
///   log Phi((d_w + m_w - d_l - m_l) / sqrt(lf_var_diff + 2 noise_sd^2)).
inline double ar1_comparison_loglik(double delta_winner, double delta_loser, double lf_mean_winner,
                                    double lf_mean_loser, double lf_var_diff, double noise_sd) {
  if (lf_var_diff < 0.0) {
    throw std::invalid_argument("ar1_comparison_loglik: negative variance of the lf difference");
  }
  if (!(noise_sd > 0.0)) {
    throw std::invalid_argument("ar1_comparison_loglik: noise_sd must be positive");
  }
  const double z = (delta_winner + lf_mean_winner - delta_loser - lf_mean_loser) /
                   std::sqrt(lf_var_diff + 2.0 * noise_sd * noise_sd);
  return log_normal_cdf(z);
}

struct Ar1Term {
  double value;
  double d_winner;  // derivative w.r.t. delta_winner (negated for the loser)
  double d_noise_sd;
};

inline Ar1Term ar1_term(double delta_winner, double delta_loser, double lf_mean_winner, double lf_mean_loser,
                        double lf_var_diff, double noise_sd) {
  const double s2 = lf_var_diff + 2.0 * noise_sd * noise_sd;
  const double s = std::sqrt(s2);
  const double z = (delta_winner + lf_mean_winner - delta_loser - lf_mean_loser) / s;
  const double r = d_log_normal_cdf(z);
  // dz/dsigma_n = -z * 2 sigma_n / s^2
  return {log_normal_cdf(z), r / s, -r * z * 2.0 * noise_sd / s2};
}

}  // namespace mmbo

#endif  // MMBO_LIKELIHOODS_HPP
