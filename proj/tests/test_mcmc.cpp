#include "mmbo/predictive.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace mmbo;

namespace {

Matrix random_inputs(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

void expect_gradients(const LatentGpDensity& dens, std::uint64_t seed, int points = 20) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  const auto model = dens.model();
  for (int k = 0; k < points; ++k) {
    Vector p = dens.initialize(rng);
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += n(rng);
    EXPECT_LT(gradient_relative_error(model, p), 1e-4) << "point " << k;
  }
}

// Independent Gaussian target with given means and SDs.
LogDensityModel gaussian_target(Vector mean, Vector sd) {
  LogDensityModel m;
  m.dimension = mean.size();
  m.value_and_gradient = [mean, sd](const Vector& x, Vector& g) {
    const Vector z = (x - mean).cwiseQuotient(sd);
    g = -z.cwiseQuotient(sd);
    return -0.5 * z.squaredNorm();
  };
  return m;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  return lo + 1 < v.size() ? v[lo] * (1 - frac) + v[lo + 1] * frac : v[lo];
}

}  // namespace

TEST(LatentGpGradient, PrefGp) {
  std::mt19937_64 rng(3);
  const Matrix x = random_inputs(6, 2, rng);
  std::vector<Comparison> c{{0, 1}, {2, 3}, {4, 5}, {1, 2}};
  expect_gradients(make_pref_gp_density(x, c, KernelKind::squared_exponential, PriorConfig{}), 1);
  expect_gradients(make_pref_gp_density(x, c, KernelKind::matern52, PriorConfig{}), 2);
}

TEST(LatentGpGradient, GaussianLatent) {
  std::mt19937_64 rng(4);
  const Matrix x = random_inputs(5, 1, rng);
  Vector y = x.col(0).array().sin();
  expect_gradients(make_gaussian_latent_density(x, y, KernelKind::squared_exponential, PriorConfig{}), 3);
}

TEST(LatentGpGradient, Ar1Delta) {
  std::mt19937_64 rng(5);
  const Matrix x = random_inputs(5, 2, rng);
  const Vector mean = Vector::LinSpaced(5, -1, 1);
  const Matrix b = random_inputs(5, 5, rng);
  const Matrix cov = 0.1 * b * b.transpose();
  std::vector<Comparison> c{{0, 1}, {3, 2}, {4, 0}};
  expect_gradients(make_ar1_delta_density(x, c, mean, cov, KernelKind::matern52, PriorConfig{}), 4);
}

TEST(LatentGpGradient, IcmMixed) {
  std::mt19937_64 rng(6);
  MixedDataset d;
  d.hf_inputs = random_inputs(4, 2, rng);
  d.comparisons = {{0, 1}, {2, 3}, {1, 3}};
  d.lf_inputs = random_inputs(5, 2, rng);
  d.lf_targets = d.lf_inputs.col(0).array().cos();
  expect_gradients(make_icm_density(d, KernelKind::squared_exponential, PriorConfig{}), 5);
  expect_gradients(make_icm_density(d, KernelKind::matern52, PriorConfig{}), 6);
}

TEST(LatentGpGradient, IcmSingleModality) {
  std::mt19937_64 rng(7);
  MixedDataset lf_only;
  lf_only.hf_inputs.resize(0, 2);
  lf_only.lf_inputs = random_inputs(6, 2, rng);
  lf_only.lf_targets = lf_only.lf_inputs.col(1).array().square();
  const auto a = make_icm_density(lf_only, KernelKind::squared_exponential, PriorConfig{});
  EXPECT_EQ(a.n_latent(), 0);
  expect_gradients(a, 7);

  MixedDataset hf_only;
  hf_only.hf_inputs = random_inputs(4, 2, rng);
  hf_only.comparisons = {{0, 1}, {2, 1}};
  hf_only.lf_inputs.resize(0, 2);
  expect_gradients(make_icm_density(hf_only, KernelKind::squared_exponential, PriorConfig{}), 8);
}

TEST(LatentGpGradient, IcmCrowdedHfInputs) {
  // near-duplicate hf rows make the conditional covariance jitter-dominated
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.005, 0.005);
  MixedDataset d;
  d.lf_inputs = random_inputs(20, 2, rng);
  d.lf_targets = (3 * d.lf_inputs.col(0)).array().sin() + d.lf_inputs.col(1).array();
  d.hf_inputs = Matrix(12, 2);
  for (Eigen::Index i = 0; i < 12; ++i) d.hf_inputs.row(i) << 0.95 + u(rng), 0.9 + u(rng);
  d.comparisons = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}, {10, 11}, {1, 2}};
  const auto dens = make_icm_density(d, KernelKind::squared_exponential, PriorConfig{});
  const auto model = dens.model();
  std::mt19937_64 init(10);
  for (int k = 0; k < 20; ++k) {
    const Vector p = dens.initialize(init);
    EXPECT_LT(gradient_relative_error(model, p, 1e-4), 1e-4) << "point " << k;
  }
}

TEST(LatentGpDensity, CollapsedEvidenceMatchesClosedForm) {
  // With no latents the density is the log evidence plus the log prior.
  std::mt19937_64 rng(8);
  MixedDataset d;
  d.hf_inputs.resize(0, 1);
  d.lf_inputs = random_inputs(5, 1, rng);
  d.lf_targets = d.lf_inputs.col(0).array().sin();
  const auto dens = make_icm_density(d, KernelKind::squared_exponential, PriorConfig{});
  const Vector u = dens.initialize(rng);
  const Vector theta = dens.hyper_values(u);
  const IcmLayout layout{1};
  KernelParams p = layout.kernel(theta, KernelKind::squared_exponential);
  p.signal_variance = theta(layout.sigma_lf()) * theta(layout.sigma_lf());
  const double noise = theta(layout.noise());
  const double evidence = log_marginal_likelihood({d.lf_inputs, d.lf_targets, noise}, p);
  double log_prior = 0.0;
  for (std::size_t k = 0; k < dens.hypers().size(); ++k) {
    log_prior += detail::log_prior_unconstrained(dens.hypers()[k], u(static_cast<Eigen::Index>(k))).first;
  }
  Vector g(u.size());
  EXPECT_NEAR(dens.value_and_gradient(u, g), evidence + log_prior, 1e-8);
}

TEST(Hmc, StandardGaussian2D) {
  const auto model = gaussian_target(Vector::Zero(2), Vector::Ones(2));
  HmcConfig cfg;
  cfg.seed = 11;
  const auto s = hmc_sample(model, cfg);
  ASSERT_EQ(s.size(), 2000);
  const Matrix& d = s.hyper_draws;
  const Vector mean = d.colwise().mean();
  const Matrix centered = d.rowwise() - d.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(d.rows() - 1);
  EXPECT_LT(mean.norm(), 0.1);
  EXPECT_LT((cov - Matrix::Identity(2, 2)).norm(), 0.15);
  EXPECT_LE(s.diagnostics.max_rhat(), 1.05);
  for (double a : s.diagnostics.acceptance_rate) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
}

TEST(Hmc, OneDimensionalQuantiles) {
  const auto model = gaussian_target(Vector::Constant(1, 3.0), Vector::Constant(1, 2.0));
  HmcConfig cfg;
  cfg.seed = 12;
  const auto s = hmc_sample(model, cfg);
  std::vector<double> v(s.hyper_draws.data(), s.hyper_draws.data() + s.hyper_draws.size());
  EXPECT_NEAR(quantile(v, 0.25), 3.0 - 2.0 * 0.6744897501960817, 0.2);
  EXPECT_NEAR(quantile(v, 0.5), 3.0, 0.2);
  EXPECT_NEAR(quantile(v, 0.75), 3.0 + 2.0 * 0.6744897501960817, 0.2);
}

TEST(Hmc, FlatCoordinateReproducesPrior) {
  // Lengthscale of a GP with no likelihood: its marginal is the prior.
  Matrix x(3, 1);
  x << 0.1, 0.5, 0.9;
  const auto dens = make_pref_gp_density(x, {}, KernelKind::squared_exponential, PriorConfig{});
  HmcConfig cfg;
  cfg.seed = 13;
  const auto s = hmc_sample(dens.model(), cfg);
  std::vector<double> u;
  for (Eigen::Index i = 0; i < s.size(); ++i) u.push_back(std::log(s.hyper_draws(i, 0)));
  std::sort(u.begin(), u.end());
  const double mu = std::log(0.3);
  double ks = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double f = normal_cdf((u[i] - mu) / 0.7);
    const double n = static_cast<double>(u.size());
    ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
  }
  EXPECT_LT(ks, 0.1);
}

TEST(Hmc, DeterministicUnderSeed) {
  std::mt19937_64 rng(14);
  const Matrix x = random_inputs(4, 1, rng);
  const auto dens = make_pref_gp_density(x, {{0, 1}, {2, 3}}, KernelKind::squared_exponential, PriorConfig{});
  HmcConfig cfg{2, 100, 50};
  cfg.seed = 99;
  const auto a = hmc_sample(dens.model(), cfg);
  const auto b = hmc_sample(dens.model(), cfg);
  EXPECT_EQ(a.latent_draws, b.latent_draws);
  EXPECT_EQ(a.hyper_draws, b.hyper_draws);
  cfg.seed = 100;
  const auto c = hmc_sample(dens.model(), cfg);
  EXPECT_NE(a.latent_draws, c.latent_draws);
}

TEST(Hmc, RejectsBadConfigAndDensity) {
  const auto model = gaussian_target(Vector::Zero(1), Vector::Ones(1));
  HmcConfig cfg;
  cfg.draws = 0;
  EXPECT_THROW(hmc_sample(model, cfg), std::invalid_argument);
  LogDensityModel broken = model;
  broken.value_and_gradient = [](const Vector& x, Vector& g) {
    g = Vector::Zero(x.size());
    return std::numeric_limits<double>::quiet_NaN();
  };
  EXPECT_THROW(hmc_sample(broken, HmcConfig{1, 10, 10}), SamplerError);
  LogDensityModel wrong_gradient = model;
  wrong_gradient.initialize = [](std::mt19937_64&) { return Vector::Constant(1, 0.7); };
  wrong_gradient.value_and_gradient = [](const Vector& x, Vector& g) {
    g = x;  // wrong sign
    return -0.5 * x.squaredNorm();
  };
  EXPECT_THROW(hmc_sample(wrong_gradient, HmcConfig{1, 10, 10}), std::invalid_argument);
}

TEST(SplitRhat, DetectsDisagreeingChains) {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n(0, 1);
  Matrix a(200, 1), b(200, 1);
  for (int i = 0; i < 200; ++i) {
    a(i, 0) = n(rng);
    b(i, 0) = n(rng) + 3.0;
  }
  EXPECT_GT(split_rhat({a, b})(0), 1.5);
  for (int i = 0; i < 200; ++i) b(i, 0) = n(rng);
  EXPECT_LT(split_rhat({a, b})(0), 1.05);
}

TEST(PosteriorPredictive, InterpolatesAtTrainingInputs) {
  std::mt19937_64 rng(16);
  const Matrix x = random_inputs(4, 2, rng);
  const auto dens = make_pref_gp_density(x, {{0, 1}, {2, 3}}, KernelKind::squared_exponential, PriorConfig{});
  HmcConfig cfg{2, 100, 50};
  const auto s = hmc_sample(dens.model(), cfg);
  const auto pred = posterior_predictive(s, x, x.topRows(2), KernelKind::squared_exponential, 3);
  ASSERT_EQ(pred.draws.rows(), s.size());
  EXPECT_EQ(pred.dropped, 0);
  EXPECT_LT((pred.draws - s.latent_draws.leftCols(2)).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(PosteriorPredictive, SingleSampleReducesToConditional) {
  std::mt19937_64 rng(17);
  const Matrix x = random_inputs(3, 1, rng);
  PosteriorSampleSet s;
  s.latent_draws = Matrix(1, 3);
  s.latent_draws << 0.3, -0.2, 0.5;
  s.hyper_draws = Matrix(1, 3);
  s.hyper_draws << 0.4, 1.2, 0.1;
  const Matrix test = random_inputs(2, 1, rng);
  const auto pred = posterior_predictive(s, x, test, KernelKind::squared_exponential, 5);
  const KernelParams p = SingleOutputLayout{1}.kernel(s.hyper_draws.row(0).transpose(), KernelKind::squared_exponential);
  const auto cond = conditional_at_test(x, s.latent_draws.row(0).transpose(), p, test);
  std::mt19937_64 same(5);
  const Vector expected = draw_gaussian(cond.mean, cond.covariance, p.signal_variance, same);
  EXPECT_LT((pred.draws.row(0).transpose() - expected).norm(), 1e-12);
  EXPECT_THROW(posterior_predictive(s, random_inputs(4, 1, rng), test, KernelKind::squared_exponential),
               std::invalid_argument);
}

TEST(PosteriorPredictive, GaussianToyMatchesClosedForm) {
  Matrix x(5, 1);
  x << 0.05, 0.3, 0.5, 0.7, 0.95;
  const Vector y = (6.0 * x.col(0).array()).sin();
  Matrix test(3, 1);
  test << 0.2, 0.6, 0.85;
  const KernelParams p{Vector::Constant(1, 0.3), 1.0, KernelKind::squared_exponential};
  const double noise = 0.2;
  const auto dens = make_gaussian_latent_density(x, y, KernelKind::squared_exponential, PriorConfig{},
                                                 {0.3, 1.0, noise});
  HmcConfig cfg;
  cfg.seed = 21;
  const auto s = hmc_sample(dens.model(), cfg);
  const auto pred = posterior_predictive(s, x, test, KernelKind::squared_exponential, 22);
  const auto exact = condition_closed_form({x, y, noise}, p, {}, test);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const Vector col = pred.draws.col(j);
    const double m = col.mean();
    const double sd = std::sqrt((col.array() - m).square().sum() / static_cast<double>(col.size() - 1));
    EXPECT_NEAR(m, exact.mean(j), 0.05);
    EXPECT_NEAR(sd, std::sqrt(exact.covariance(j, j)), 0.10);
  }
}
