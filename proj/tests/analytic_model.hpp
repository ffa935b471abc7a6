#pragma once

#include "mmbo/gp_regression.hpp"
#include "mmbo/surrogates.hpp"

// A single-component Gaussian-process posterior with a closed form. Lets the
// acquisition tests pin down exact moments without running MCMC.
struct AnalyticGp {
  mmbo::KernelParams params;
  mmbo::MeanFunction mean_fn;
  mmbo::NumericalDataset data{mmbo::Matrix(0, 1), mmbo::Vector(0), 0.1};

  [[nodiscard]] Eigen::Index sample_count(mmbo::Fidelity) const { return 1; }

  [[nodiscard]] mmbo::GaussianPrediction predict(const mmbo::Matrix& x) const {
    mmbo::NumericalDataset d = data;
    if (d.inputs.cols() != x.cols()) d.inputs.resize(0, x.cols());
    return mmbo::condition_closed_form(d, params, mean_fn, x);
  }

  [[nodiscard]] mmbo::SampleMoments moments(const mmbo::Matrix& x, mmbo::Fidelity = mmbo::Fidelity::hf) const {
    const auto p = predict(x);
    return {p.mean.transpose(), p.covariance.diagonal().transpose()};
  }

  [[nodiscard]] mmbo::Matrix cross_covariance(Eigen::Index, const mmbo::Matrix& a, const mmbo::Matrix& b,
                                              mmbo::Fidelity = mmbo::Fidelity::hf) const {
    mmbo::Matrix both(a.rows() + b.rows(), a.cols());
    both << a, b;
    return predict(both).covariance.block(0, a.rows(), a.rows(), b.rows());
  }

  [[nodiscard]] double noise_sd(Eigen::Index, mmbo::Fidelity = mmbo::Fidelity::hf) const { return data.noise_sd; }
};
