#ifndef MMBO_HMC_HPP
#define MMBO_HMC_HPP

#include "mmbo/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmbo {

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Differentiable log density over an unconstrained space. `transform` maps an
/// unconstrained point to constrained values; its first `n_latent` outputs are
/// latent function values and the remainder hyperparameters.
struct LogDensityModel {
  Eigen::Index dimension = 0;
  Eigen::Index n_latent = 0;
  std::function<double(const Vector&, Vector&)> value_and_gradient;
  std::function<Vector(const Vector&)> transform;
  std::function<Vector(std::mt19937_64&)> initialize;  // optional
};

struct HmcConfig {
  int chains = 4;
  int warmup = 500;
  int draws = 500;
  double target_accept = 0.8;
  int leapfrog_steps = 32;
  double max_divergence_rate = 0.25;
  bool check_gradient = true;  // finite-difference check at one initial point
  std::uint64_t seed = 0;
};

struct SamplerDiagnostics {
  std::vector<double> acceptance_rate;  // per chain, post-warmup mean acceptance probability
  std::vector<double> step_size;        // per chain, adapted
  std::vector<int> divergences;         // per chain, post-warmup
  Vector split_rhat;                    // per unconstrained coordinate

  [[nodiscard]] int total_divergences() const {
    int total = 0;
    for (int d : divergences) total += d;
    return total;
  }
  [[nodiscard]] double max_rhat() const { return split_rhat.size() ? split_rhat.maxCoeff() : 1.0; }
};

struct PosteriorSampleSet {
  Matrix latent_draws;  // S x n_latent
  Matrix hyper_draws;   // S x n_hyper
  SamplerDiagnostics diagnostics;

  [[nodiscard]] Eigen::Index size() const { return std::max(latent_draws.rows(), hyper_draws.rows()); }
};

/// Split-R-hat of each column over a set of equally long chains.
inline Vector split_rhat(const std::vector<Matrix>& chains) {
  if (chains.empty()) return {};
  const Eigen::Index dim = chains.front().cols();
  const Eigen::Index half = chains.front().rows() / 2;
  Vector out = Vector::Ones(dim);
  if (half < 2) return out;
  const auto m = static_cast<double>(2 * chains.size());
  const auto n = static_cast<double>(half);
  for (Eigen::Index k = 0; k < dim; ++k) {
    std::vector<double> means;
    std::vector<double> vars;
    for (const auto& c : chains) {
      for (int part = 0; part < 2; ++part) {
        const auto seg = c.col(k).segment(part * half, half).array();
        const double mu = seg.mean();
        means.push_back(mu);
        vars.push_back((seg - mu).square().sum() / (n - 1.0));
      }
    }
    double grand = 0.0;
    for (double mu : means) grand += mu;
    grand /= m;
    double between = 0.0;
    for (double mu : means) between += (mu - grand) * (mu - grand);
    between *= n / (m - 1.0);
    double within = 0.0;
    for (double v : vars) within += v;
    within /= m;
    if (within <= 0.0) {
      out(k) = between <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
      continue;
    }
    const double var_plus = (n - 1.0) / n * within + between / n;
    out(k) = std::sqrt(var_plus / within);
  }
  return out;
}

namespace detail {

struct DualAveraging {
  double mu = 0.0;
  double h_bar = 0.0;
  double log_eps_bar = 0.0;
  int count = 0;
  static constexpr double gamma = 0.05;
  static constexpr double t0 = 10.0;
  static constexpr double kappa = 0.75;

  void restart(double eps) {
    mu = std::log(10.0 * eps);
    h_bar = 0.0;
    log_eps_bar = 0.0;
    count = 0;
  }

  double update(double accept, double target) {
    ++count;
    const double m = count;
    h_bar = (1.0 - 1.0 / (m + t0)) * h_bar + (target - accept) / (m + t0);
    const double log_eps = mu - std::sqrt(m) / gamma * h_bar;
    const double w = std::pow(m, -kappa);
    log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
    return std::exp(log_eps);
  }

  [[nodiscard]] double final_step() const { return std::exp(log_eps_bar); }
};

class Chain {
 public:
  Chain(const LogDensityModel& model, std::uint64_t seed) : model_(model), rng_(seed) {}

  void initialize() {
    grad_.resize(model_.dimension);
    for (int attempt = 0; attempt < 100; ++attempt) {
      if (model_.initialize) {
        q_ = model_.initialize(rng_);
      } else {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        q_.resize(model_.dimension);
        for (Eigen::Index i = 0; i < q_.size(); ++i) q_(i) = u(rng_);
      }
      logp_ = model_.value_and_gradient(q_, grad_);
      if (std::isfinite(logp_) && grad_.allFinite()) {
        inv_mass_ = Vector::Ones(model_.dimension);
        return;
      }
    }
    throw SamplerError("hmc_sample: non-finite log density at every initialization attempt");
  }

  double find_reasonable_step() {
    double eps = 0.1;
    const double h0 = -logp_;
    auto accept_log = [&](double e) {
      Vector p = sample_momentum();
      const double k0 = kinetic(p);
      Vector q = q_;
      Vector g = grad_;
      p += 0.5 * e * g;
      q += e * inv_mass_.cwiseProduct(p);
      const double lp = model_.value_and_gradient(q, g);
      p += 0.5 * e * g;
      const double h1 = -lp + kinetic(p);
      const double r = (h0 + k0) - h1;
      return std::isfinite(r) ? r : -std::numeric_limits<double>::infinity();
    };
    const double direction = accept_log(eps) > std::log(0.5) ? 1.0 : -1.0;
    for (int i = 0; i < 50; ++i) {
      const double r = accept_log(eps);
      if (direction > 0 ? !(r > std::log(0.5)) : !(r < std::log(0.5))) break;
      eps *= direction > 0 ? 2.0 : 0.5;
    }
    return std::clamp(eps, 1e-6, 10.0);
  }

  struct Transition {
    double accept;
    bool divergent;
  };

  Transition step(double eps, int steps) {
    Vector p = sample_momentum();
    const double h0 = -logp_ + kinetic(p);
    Vector q = q_;
    Vector g = grad_;
    double lp = logp_;
    bool divergent = false;
    for (int s = 0; s < steps; ++s) {
      p += 0.5 * eps * g;
      q += eps * inv_mass_.cwiseProduct(p);
      lp = model_.value_and_gradient(q, g);
      if (!std::isfinite(lp) || !g.allFinite()) {
        divergent = true;
        break;
      }
      p += 0.5 * eps * g;
      if (-lp + kinetic(p) - h0 > 1000.0) {
        divergent = true;
        break;
      }
    }
    if (divergent) return {0.0, true};
    const double h1 = -lp + kinetic(p);
    const double accept = std::min(1.0, std::exp(h0 - h1));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng_) < accept) {
      q_ = std::move(q);
      grad_ = std::move(g);
      logp_ = lp;
    }
    return {std::isfinite(accept) ? accept : 0.0, false};
  }

  [[nodiscard]] const Vector& position() const { return q_; }
  void set_inverse_mass(Vector inv_mass) { inv_mass_ = std::move(inv_mass); }
  std::mt19937_64& rng() { return rng_; }

 private:
  Vector sample_momentum() {
    std::normal_distribution<double> n(0.0, 1.0);
    Vector p(model_.dimension);
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = n(rng_) / std::sqrt(inv_mass_(i));
    return p;
  }
  [[nodiscard]] double kinetic(const Vector& p) const { return 0.5 * p.cwiseProduct(inv_mass_).dot(p); }

  const LogDensityModel& model_;
  std::mt19937_64 rng_;
  Vector q_;
  Vector grad_;
  Vector inv_mass_;
  double logp_ = 0.0;
};

struct ChainResult {
  Matrix draws;
  double acceptance = 0.0;
  double step_size = 0.0;
  int divergences = 0;
};

// Warmup: an initial fast window adapting only the step size, two slow windows
// that also estimate a diagonal inverse mass, and a terminal fast window.
inline ChainResult run_chain(const LogDensityModel& model, const HmcConfig& config, std::uint64_t seed) {
  Chain chain(model, seed);
  chain.initialize();
  double eps = chain.find_reasonable_step();
  DualAveraging adapt;
  adapt.restart(eps);

  const int warmup = config.warmup;
  std::vector<std::pair<int, int>> slow_windows;
  if (warmup >= 20) {
    const int start = static_cast<int>(0.15 * warmup);
    const int end = warmup - static_cast<int>(0.1 * warmup);
    const int mid = start + (end - start) / 3;
    slow_windows = {{start, mid}, {mid, end}};
  }

  Vector sum;
  Vector sum_sq;
  int window_count = 0;
  for (int it = 0; it < warmup; ++it) {
    const auto tr = chain.step(eps, config.leapfrog_steps);
    eps = adapt.update(tr.accept, config.target_accept);
    for (const auto& [begin, end] : slow_windows) {
      if (it >= begin && it < end) {
        const Vector& q = chain.position();
        if (window_count == 0) {
          sum = Vector::Zero(q.size());
          sum_sq = Vector::Zero(q.size());
        }
        sum += q;
        sum_sq += q.cwiseProduct(q);
        ++window_count;
        if (it == end - 1 && window_count >= 3) {
          const double n = window_count;
          const Vector mean = sum / n;
          const Vector var = ((sum_sq / n - mean.cwiseProduct(mean)) * (n / (n - 1.0))).cwiseMax(0.0);
          chain.set_inverse_mass((n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0)));
          window_count = 0;
          eps = chain.find_reasonable_step();
          adapt.restart(eps);
        }
      }
    }
  }
  if (warmup > 0) eps = adapt.final_step();

  ChainResult out;
  out.step_size = eps;
  out.draws.resize(config.draws, model.dimension);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  double accept_sum = 0.0;
  for (int it = 0; it < config.draws; ++it) {
    const auto tr = chain.step(eps * jitter(chain.rng()), config.leapfrog_steps);
    accept_sum += tr.accept;
    out.divergences += tr.divergent ? 1 : 0;
    out.draws.row(it) = chain.position().transpose();
  }
  out.acceptance = config.draws > 0 ? accept_sum / config.draws : 0.0;
  return out;
}

}  // namespace detail

/// Central finite-difference check of a model's gradient at `x`; returns the
/// largest relative error max|g - fd| / max(1, |fd|) over coordinates.
inline double gradient_relative_error(const LogDensityModel& model, const Vector& x, double h = 1e-5) {
  Vector grad(model.dimension);
  model.value_and_gradient(x, grad);
  Vector scratch(model.dimension);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x;
    Vector xm = x;
    xp(i) += h;
    xm(i) -= h;
    const double fd = (model.value_and_gradient(xp, scratch) - model.value_and_gradient(xm, scratch)) / (2.0 * h);
    worst = std::max(worst, std::abs(grad(i) - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

/// Adaptive HMC: dual-averaging step size, diagonal mass adaptation during
/// warmup and a fixed number of leapfrog steps per transition. Chains are
/// seeded independently from `config.seed`, so results are reproducible.
inline PosteriorSampleSet hmc_sample(const LogDensityModel& model, const HmcConfig& config) {
  if (config.chains < 1 || config.draws < 1 || config.warmup < 0 || config.leapfrog_steps < 1) {
    throw std::invalid_argument("hmc_sample: chains, draws and leapfrog steps must be positive");
  }
  if (model.dimension < 1 || !model.value_and_gradient) {
    throw std::invalid_argument("hmc_sample: model has no dimensions or no density");
  }
  if (config.check_gradient && model.initialize) {
    std::mt19937_64 probe_rng(config.seed ^ 0x5bd1e995ULL);
    const Vector probe = model.initialize(probe_rng);
    Vector g(model.dimension);
    // Ill-conditioned Grams make small steps roundoff-bound, so take the best of a few step sizes.
    auto best_error = [&] {
      double e = gradient_relative_error(model, probe, 1e-5);
      for (double h : {1e-4, 1e-3}) {
        if (e <= 1e-3) break;
        e = std::min(e, gradient_relative_error(model, probe, h));
      }
      return e;
    };
    if (std::isfinite(model.value_and_gradient(probe, g)) && best_error() > 1e-3) {
      throw std::invalid_argument("hmc_sample: model gradient disagrees with finite differences");
    }
  }
  std::vector<Matrix> chains;
  SamplerDiagnostics diag;
  std::seed_seq seq{config.seed, static_cast<std::uint64_t>(0x9e3779b97f4a7c15ULL)};
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(config.chains));
  seq.generate(seeds.begin(), seeds.end());
  for (int c = 0; c < config.chains; ++c) {
    auto result = detail::run_chain(model, config, seeds[static_cast<std::size_t>(c)]);
    diag.acceptance_rate.push_back(result.acceptance);
    diag.step_size.push_back(result.step_size);
    diag.divergences.push_back(result.divergences);
    chains.push_back(std::move(result.draws));
  }
  const double total = static_cast<double>(config.chains) * config.draws;
  if (diag.total_divergences() > config.max_divergence_rate * total) {
    throw SamplerError("hmc_sample: divergence rate " + std::to_string(diag.total_divergences() / total) +
                       " exceeds " + std::to_string(config.max_divergence_rate));
  }
  diag.split_rhat = split_rhat(chains);

  PosteriorSampleSet out;
  const Eigen::Index s = static_cast<Eigen::Index>(total);
  Matrix constrained;
  Eigen::Index row = 0;
  for (const auto& c : chains) {
    for (Eigen::Index i = 0; i < c.rows(); ++i, ++row) {
      const Vector v = model.transform ? model.transform(c.row(i).transpose()) : Vector(c.row(i).transpose());
      if (constrained.size() == 0) constrained.resize(s, v.size());
      constrained.row(row) = v.transpose();
    }
  }
  const Eigen::Index n_latent = std::min<Eigen::Index>(model.n_latent, constrained.cols());
  out.latent_draws = constrained.leftCols(n_latent);
  out.hyper_draws = constrained.rightCols(constrained.cols() - n_latent);
  out.diagnostics = std::move(diag);
  return out;
}

}  // namespace mmbo

#endif  // MMBO_HMC_HPP
