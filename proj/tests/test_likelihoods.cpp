#include "mmbo/likelihoods.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace mmbo;

TEST(NormalCdf, LogTailIsFiniteAndContinuous) {
  EXPECT_NEAR(log_normal_cdf(0.0), std::log(0.5), 1e-15);
  EXPECT_NEAR(log_normal_cdf(-8.0 + 1e-9), log_normal_cdf(-8.0 - 1e-9), 1e-7);
  // log Phi(-40) from the asymptotic expansion: -x^2/2 - log(-x) - log sqrt(2 pi) + log(1 - 1/x^2 + 3/x^4)
  const double x = -40.0;
  const double ref = -0.5 * x * x - std::log(-x) - log_sqrt_2pi + std::log(1 - 1 / (x * x) + 3 / std::pow(x, 4));
  EXPECT_NEAR(log_normal_cdf(x), ref, 1e-8);
  EXPECT_TRUE(std::isfinite(log_normal_cdf(-1e3)));
  EXPECT_NEAR(d_log_normal_cdf(-1e3), 1e3, 1.0);
}

TEST(Probit, SubstitutionCases) {
  EXPECT_NEAR(probit_pref_loglik(0.4, 0.4, 0.3), std::log(0.5), 1e-15);
  const double s = 0.25;
  EXPECT_NEAR(probit_pref_loglik(std::numbers::sqrt2 * s, 0.0, s), std::log(0.8413447460685429), 1e-12);
  EXPECT_THROW(probit_pref_loglik(0.0, 1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(probit_pref_loglik(0.0, 1.0, -1.0), std::invalid_argument);
}

TEST(Probit, MatchesSimulatedChoiceProbabilities) {
  // Frozen 10^6-draw simulations of P(g_i + e_i >= g_j + e_j); standard error <= 5e-4.
  struct Case {
    double gi, gj, s, mc;
  };
  for (const Case& c : {Case{0.3, 0.1, 0.2, 0.759962}, Case{-0.5, 0.2, 0.7, 0.239236}, Case{1.0, 1.4, 0.3, 0.172469}}) {
    const double p = std::exp(probit_pref_loglik(c.gi, c.gj, c.s));
    const double se = std::sqrt(p * (1 - p) / 1e6);
    EXPECT_NEAR(p, c.mc, 3 * se);
  }
}

TEST(Probit, ComplementarityAndMonotonicity) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 3);
  std::uniform_real_distribution<double> u(0.01, 2);
  for (int k = 0; k < 1000; ++k) {
    const double a = n(rng);
    const double b = n(rng);
    const double s = u(rng);
    EXPECT_NEAR(std::exp(probit_pref_loglik(a, b, s)) + std::exp(probit_pref_loglik(b, a, s)), 1.0, 1e-12);
    // strict while Phi(-z) is representable, non-decreasing beyond
    if (std::abs(a - b) / (std::numbers::sqrt2 * s) < 30.0) {
      EXPECT_LT(probit_pref_loglik(a, b, s), probit_pref_loglik(a + 0.01, b, s));
      EXPECT_LT(probit_pref_loglik(a, b, s), 0.0);
    } else {
      EXPECT_LE(probit_pref_loglik(a, b, s), probit_pref_loglik(a + 0.01, b, s));
    }
  }
}

TEST(Probit, TermDerivatives) {
  const double h = 1e-6;
  for (double gw : {-2.0, 0.1, 3.0}) {
    const auto t = probit_term(gw, 0.2, 0.4);
    EXPECT_NEAR(t.d_winner, (probit_pref_loglik(gw + h, 0.2, 0.4) - probit_pref_loglik(gw - h, 0.2, 0.4)) / (2 * h), 1e-6);
    EXPECT_NEAR(t.d_noise_sd, (probit_pref_loglik(gw, 0.2, 0.4 + h) - probit_pref_loglik(gw, 0.2, 0.4 - h)) / (2 * h), 1e-6);
  }
}

TEST(JointLoglik, Composition) {
  MixedDataset empty;
  empty.hf_inputs.resize(0, 1);
  empty.lf_inputs.resize(0, 1);
  EXPECT_EQ(joint_multimodal_loglik(Vector(0), empty, 1.0), 0.0);

  MixedDataset d;
  d.hf_inputs = Matrix::Zero(2, 1);
  d.comparisons = {{0, 1}};
  d.lf_inputs = Matrix::Zero(1, 1);
  d.lf_targets = Vector::Constant(1, 0.7);
  Vector g(3);
  g << 0.2, 0.2, 0.7;
  EXPECT_NEAR(joint_multimodal_loglik(g, d, 1.0), std::log(0.5) - log_sqrt_2pi, 1e-14);
}

TEST(JointLoglik, TermByTermAndOrderInvariant) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  MixedDataset d;
  d.hf_inputs = Matrix::Random(5, 2);
  d.comparisons = {{0, 1}, {2, 3}, {4, 0}, {1, 3}};
  d.lf_inputs = Matrix::Random(3, 2);
  d.lf_targets = Vector::Random(3);
  Vector g(8);
  for (auto& v : g) v = n(rng);
  const double s = 0.3;
  double expected = 0.0;
  for (const auto& c : d.comparisons) expected += probit_pref_loglik(g(c.winner), g(c.loser), s);
  for (int i = 0; i < 3; ++i) expected += normal_logpdf(d.lf_targets(i), g(5 + i), s);
  EXPECT_NEAR(joint_multimodal_loglik(g, d, s), expected, 1e-12);

  MixedDataset shuffled = d;
  std::reverse(shuffled.comparisons.begin(), shuffled.comparisons.end());
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(3);
  perm.indices() << 2, 0, 1;
  shuffled.lf_inputs = perm * d.lf_inputs;
  shuffled.lf_targets = perm * d.lf_targets;
  Vector gs = g;
  gs.tail(3) = perm * g.tail(3);
  EXPECT_NEAR(joint_multimodal_loglik(gs, shuffled, s), joint_multimodal_loglik(g, d, s), 1e-12);
}

TEST(JointLoglik, RejectsBadInput) {
  MixedDataset d;
  d.hf_inputs = Matrix::Zero(2, 1);
  d.comparisons = {{0, 5}};
  d.lf_inputs.resize(0, 1);
  EXPECT_THROW(joint_multimodal_loglik(Vector::Zero(2), d, 1.0), std::out_of_range);
  d.comparisons = {{0, 1}};
  EXPECT_THROW(joint_multimodal_loglik(Vector::Zero(3), d, 1.0), std::invalid_argument);
}

TEST(Ar1Loglik, DegenerateCases) {
  EXPECT_NEAR(ar1_comparison_loglik(0.3, 0.3, 0.5, 0.5, 0.7, 0.2), std::log(0.5), 1e-15);
  EXPECT_DOUBLE_EQ(ar1_comparison_loglik(0.3, -0.1, 0.5, 0.2, 0.0, 0.2), probit_pref_loglik(0.8, 0.1, 0.2));
  EXPECT_THROW(ar1_comparison_loglik(0, 0, 0, 0, -1e-3, 0.1), std::invalid_argument);
  EXPECT_THROW(ar1_comparison_loglik(0, 0, 0, 0, 0.1, 0.0), std::invalid_argument);
}

TEST(Ar1Loglik, MatchesSimulatedTripleIntegral) {
  // Frozen 10^6-draw simulations with g_lf drawn from its bivariate predictive.
  struct Case {
    double dw, dl, mw, ml, vw, vl, c, s, mc;
  };
  for (const Case& k : {Case{0.2, -0.1, 0.5, 0.7, 0.3, 0.2, 0.1, 0.15, 0.566619},
                       Case{-0.4, 0.3, 1.2, 0.1, 0.05, 0.5, -0.1, 0.4, 0.649903},
                       Case{0.0, 0.0, 0.0, 0.3, 1.0, 1.0, 0.9, 0.05, 0.253876}}) {
    const double p = std::exp(ar1_comparison_loglik(k.dw, k.dl, k.mw, k.ml, k.vw + k.vl - 2 * k.c, k.s));
    EXPECT_NEAR(p, k.mc, 3 * std::sqrt(p * (1 - p) / 1e6));
  }
}

TEST(Ar1Loglik, ShrinksTowardIndifference) {
  for (double gap : {-1.0, 0.4, 2.0}) {
    double previous = std::exp(ar1_comparison_loglik(gap, 0.0, 0.0, 0.0, 0.0, 0.2));
    for (double v = 0.1; v < 20; v *= 1.5) {
      const double p = std::exp(ar1_comparison_loglik(gap, 0.0, 0.0, 0.0, v, 0.2));
      EXPECT_LT(std::abs(p - 0.5), std::abs(previous - 0.5));
      previous = p;
    }
  }
}

TEST(Ar1Loglik, TermDerivatives) {
  const double h = 1e-6;
  const auto t = ar1_term(0.3, -0.2, 0.1, 0.4, 0.25, 0.3);
  auto f = [](double dw, double s) { return ar1_comparison_loglik(dw, -0.2, 0.1, 0.4, 0.25, s); };
  EXPECT_NEAR(t.value, f(0.3, 0.3), 1e-15);
  EXPECT_NEAR(t.d_winner, (f(0.3 + h, 0.3) - f(0.3 - h, 0.3)) / (2 * h), 1e-6);
  EXPECT_NEAR(t.d_noise_sd, (f(0.3, 0.3 + h) - f(0.3, 0.3 - h)) / (2 * h), 1e-6);
}
