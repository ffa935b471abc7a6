#ifndef MMBO_LATENT_GP_HPP
#define MMBO_LATENT_GP_HPP

#include "mmbo/hmc.hpp"
#include "mmbo/kernel.hpp"
#include "mmbo/likelihoods.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mmbo {

enum class HyperTransform { log, logistic };

struct HyperPrior {
  enum class Kind { lognormal, beta };
  Kind kind = Kind::lognormal;
  double a = 0.0;  // lognormal: location of log value; beta: alpha
  double b = 1.0;  // lognormal: scale of log value; beta: beta

  static HyperPrior lognormal(double log_location, double log_scale) {
    return {Kind::lognormal, log_location, log_scale};
  }
  static HyperPrior beta(double alpha, double beta) { return {Kind::beta, alpha, beta}; }
};

struct HyperParameter {
  std::string name;
  HyperTransform transform = HyperTransform::log;
  HyperPrior prior;
  std::optional<double> fixed;
};

/// Default hyperparameter priors on the unit box and standardized scale.
struct PriorConfig {
  HyperPrior lengthscale = HyperPrior::lognormal(std::log(0.3), 0.7);
  HyperPrior signal_sd = HyperPrior::lognormal(0.0, 1.0);
  HyperPrior noise_sd = HyperPrior::lognormal(std::log(0.1), 0.5);
  HyperPrior rho = HyperPrior::beta(5.0, 2.0);
};

namespace detail {

inline double logistic(double u) { return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }

inline double to_constrained(const HyperParameter& h, double u) {
  return h.transform == HyperTransform::log ? std::exp(u) : logistic(u);
}

inline double to_unconstrained(const HyperParameter& h, double v) {
  return h.transform == HyperTransform::log ? std::log(v) : std::log(v / (1.0 - v));
}

// Log prior density of the unconstrained coordinate (Jacobian included) and
// its derivative.
inline std::pair<double, double> log_prior_unconstrained(const HyperParameter& h, double u) {
  if (h.prior.kind == HyperPrior::Kind::lognormal) {
    // lognormal on exp(u) with the log-Jacobian is a normal density on u
    const double z = (u - h.prior.a) / h.prior.b;
    return {-0.5 * z * z - std::log(h.prior.b) - log_sqrt_2pi, -z / h.prior.b};
  }
  const double alpha = h.prior.a;
  const double beta = h.prior.b;
  // log rho = -log1p(e^-u), log(1 - rho) = -log1p(e^u)
  const double log_rho = u >= 0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u));
  const double log_one_minus = u >= 0 ? -u - std::log1p(std::exp(-u)) : -std::log1p(std::exp(u));
  const double log_beta_fn = std::lgamma(alpha) + std::lgamma(beta) - std::lgamma(alpha + beta);
  const double rho = logistic(u);
  return {alpha * log_rho + beta * log_one_minus - log_beta_fn, alpha * (1.0 - rho) - beta * rho};
}

inline double dconstrained_du(const HyperParameter& h, double value) {
  return h.transform == HyperTransform::log ? value : value * (1.0 - value);
}

inline double sample_prior(const HyperParameter& h, std::mt19937_64& rng) {
  if (h.fixed) return *h.fixed;
  if (h.prior.kind == HyperPrior::Kind::lognormal) {
    std::normal_distribution<double> n(h.prior.a, h.prior.b);
    return std::exp(n(rng));
  }
  std::gamma_distribution<double> ga(h.prior.a, 1.0);
  std::gamma_distribution<double> gb(h.prior.b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return std::min(x / (x + y), 1.0 - 1e-12);
}

inline double prior_location(const HyperParameter& h) {
  if (h.prior.kind == HyperPrior::Kind::lognormal) return h.prior.a;
  return std::log(h.prior.a / h.prior.b);  // logit of the mean ratio
}

}  // namespace detail

/// Posterior over latent GP values and hyperparameters,
///   p(z, u | D) ∝ p(D | g = m + L(theta) z, theta) N(z; 0, I) p(u),
/// with the latents whitened by the Cholesky factor of the prior Gram matrix.
///
/// An optional observed block holds Gaussian observations y ~ N(f, noise^2)
/// of a jointly Gaussian process f that is integrated out analytically. The
/// Gram then spans the latent rows followed by the observed rows, the density
/// gains the evidence log N(y; 0, K_oo + noise^2 I), and the latents are
/// whitened by their conditional given y: g = mu(theta) + chol(C(theta)) z.
class LatentGpDensity {
 public:
  /// Fills K (jitter included) and, for every hyperparameter, dK/dtheta_k
  /// (an empty matrix when K does not depend on theta_k).
  using GramFn = std::function<void(const Vector& theta, Matrix& gram, std::vector<Matrix>* d_gram)>;
  /// Log likelihood with its gradient w.r.t. g and the direct gradient w.r.t.
  /// the constrained hyperparameters.
  using LikelihoodFn = std::function<double(const Vector& g, const Vector& theta, Vector& d_g, Vector& d_theta)>;

  struct ObservedBlock {
    Vector targets;
    Eigen::Index noise_index = 0;  // hyperparameter holding the observation noise SD
  };

  LatentGpDensity(Eigen::Index n_latent, std::vector<HyperParameter> hypers, GramFn gram, LikelihoodFn likelihood,
                  std::optional<ObservedBlock> observed = std::nullopt)
      : n_latent_(n_latent),
        hypers_(std::move(hypers)),
        gram_(std::move(gram)),
        likelihood_(std::move(likelihood)),
        observed_(std::move(observed)) {
    if (observed_ && observed_->targets.size() == 0) observed_.reset();
    for (std::size_t k = 0; k < hypers_.size(); ++k) {
      if (!hypers_[k].fixed) free_.push_back(k);
    }
  }

  [[nodiscard]] Eigen::Index n_latent() const { return n_latent_; }
  [[nodiscard]] Eigen::Index n_free() const { return static_cast<Eigen::Index>(free_.size()); }
  [[nodiscard]] Eigen::Index dimension() const { return n_latent_ + n_free(); }
  [[nodiscard]] const std::vector<HyperParameter>& hypers() const { return hypers_; }
  [[nodiscard]] const std::optional<ObservedBlock>& observed() const { return observed_; }

  [[nodiscard]] Vector hyper_values(const Vector& x) const {
    Vector theta(static_cast<Eigen::Index>(hypers_.size()));
    for (std::size_t k = 0; k < hypers_.size(); ++k) {
      if (hypers_[k].fixed) theta(static_cast<Eigen::Index>(k)) = *hypers_[k].fixed;
    }
    for (std::size_t f = 0; f < free_.size(); ++f) {
      const std::size_t k = free_[f];
      theta(static_cast<Eigen::Index>(k)) = detail::to_constrained(hypers_[k], x(n_latent_ + static_cast<Eigen::Index>(f)));
    }
    return theta;
  }

  [[nodiscard]] Matrix gram(const Vector& theta) const {
    Matrix k;
    gram_(theta, k, nullptr);
    return k;
  }

  /// Conditional prior of the latents given the observed block (the plain
  /// prior when there is none): mean and lower Cholesky factor.
  [[nodiscard]] std::optional<std::pair<Vector, Matrix>> latent_prior(const Vector& theta) const {
    Conditioned c;
    if (!condition(theta, gram(theta), c)) return std::nullopt;
    return std::make_pair(std::move(c.mu), std::move(c.lower));
  }

  double value_and_gradient(const Vector& x, Vector& grad) const {
    grad.setZero(dimension());
    const Vector theta = hyper_values(x);
    Matrix k;
    std::vector<Matrix> dk;
    gram_(theta, k, &dk);
    Conditioned c;
    if (!condition(theta, k, c)) return -std::numeric_limits<double>::infinity();
    const Matrix& lower = c.lower;
    const auto tri = lower.triangularView<Eigen::Lower>();
    const Vector z = x.head(n_latent_);
    const Vector g = c.mu + tri * z;

    Vector d_g = Vector::Zero(n_latent_);
    Vector d_theta = Vector::Zero(theta.size());
    const double loglik = n_latent_ > 0 ? likelihood_(g, theta, d_g, d_theta) : 0.0;
    if (!std::isfinite(loglik)) return -std::numeric_limits<double>::infinity();

    double value = loglik - 0.5 * z.squaredNorm() + c.log_evidence;
    grad.head(n_latent_) = tri.transpose() * d_g - z;

    if (!free_.empty()) {
      // Reverse-mode through g = L z: Lbar = tril(d_g z^T), A = L^T Lbar,
      // Kbar = L^{-T} Phi(A) L^{-1} with Phi = lower triangle, halved diagonal.
      // Column j of A is z_j * sum_{i >= j} d_g_i L(i, :)^T.
      Matrix kbar = Matrix::Zero(n_latent_, n_latent_);
      if (n_latent_ > 0) {
        Matrix a(n_latent_, n_latent_);
        Vector suffix = Vector::Zero(n_latent_);
        for (Eigen::Index j = n_latent_ - 1; j >= 0; --j) {
          suffix += d_g(j) * lower.row(j).transpose();
          a.col(j) = z(j) * suffix;
        }
        Matrix phi = a.triangularView<Eigen::Lower>();
        phi.diagonal() *= 0.5;
        kbar = lower.transpose().triangularView<Eigen::Upper>().solve(phi);
        kbar = lower.transpose().triangularView<Eigen::Upper>().solve(kbar.transpose()).transpose();  // (L^{-T} Phi) L^{-1}
      }
      double noise_adjoint = 0.0;
      if (observed_) kbar = observed_adjoint(kbar, d_g, c, noise_adjoint);
      for (std::size_t f = 0; f < free_.size(); ++f) {
        const std::size_t kidx = free_[f];
        const auto& h = hypers_[kidx];
        const double value_k = theta(static_cast<Eigen::Index>(kidx));
        const Eigen::Index u_index = n_latent_ + static_cast<Eigen::Index>(f);
        double d = d_theta(static_cast<Eigen::Index>(kidx));
        if (kidx < dk.size() && dk[kidx].size() > 0) d += (kbar.array() * dk[kidx].array()).sum();
        if (observed_ && static_cast<Eigen::Index>(kidx) == observed_->noise_index) d += noise_adjoint;
        const auto [lp, dlp] = detail::log_prior_unconstrained(h, x(u_index));
        value += lp;
        grad(u_index) = d * detail::dconstrained_du(h, value_k) + dlp;
      }
    } else {
      for (std::size_t f = 0; f < free_.size(); ++f) value += detail::log_prior_unconstrained(hypers_[free_[f]], x(n_latent_ + static_cast<Eigen::Index>(f))).first;
    }
    return value;
  }

  /// Constrained output [g; theta] for an unconstrained point.
  [[nodiscard]] Vector transform(const Vector& x) const {
    const Vector theta = hyper_values(x);
    Vector out(n_latent_ + theta.size());
    if (n_latent_ > 0) {
      Conditioned c;
      if (!condition(theta, gram(theta), c)) throw FactorizationError("LatentGpDensity: latent prior is not positive definite");
      out.head(n_latent_) = c.mu + c.lower.triangularView<Eigen::Lower>() * x.head(n_latent_);
    }
    out.tail(theta.size()) = theta;
    return out;
  }

  [[nodiscard]] Vector initialize(std::mt19937_64& rng) const {
    Vector x(dimension());
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (Eigen::Index i = 0; i < n_latent_; ++i) x(i) = u(rng);
    for (std::size_t f = 0; f < free_.size(); ++f) {
      x(n_latent_ + static_cast<Eigen::Index>(f)) = detail::prior_location(hypers_[free_[f]]) + u(rng);
    }
    return x;
  }

  /// Draws hyperparameters from their priors (used when there is no latent
  /// data to condition on).
  [[nodiscard]] Vector sample_hyper_prior(std::mt19937_64& rng) const {
    Vector theta(static_cast<Eigen::Index>(hypers_.size()));
    for (std::size_t k = 0; k < hypers_.size(); ++k) theta(static_cast<Eigen::Index>(k)) = detail::sample_prior(hypers_[k], rng);
    return theta;
  }

  /// Type-erased view; the density must outlive the returned model.
  [[nodiscard]] LogDensityModel model() const {
    LogDensityModel m;
    m.dimension = dimension();
    m.n_latent = n_latent_;
    m.value_and_gradient = [this](const Vector& x, Vector& g) { return value_and_gradient(x, g); };
    m.transform = [this](const Vector& x) { return transform(x); };
    m.initialize = [this](std::mt19937_64& rng) { return initialize(rng); };
    return m;
  }

 private:
  struct Conditioned {
    Vector mu;
    Matrix lower;         // factor of the (conditional) latent covariance
    double log_evidence = 0.0;
    Matrix a;             // Sigma^{-1} K_ol
    Vector beta;          // Sigma^{-1} y
    Matrix sigma_inv;
    double noise = 0.0;
  };

  bool condition(const Vector& theta, const Matrix& k, Conditioned& c) const {
    const Eigen::Index n = n_latent_;
    if (!observed_) {
      c.mu = Vector::Zero(n);
      if (n == 0) {
        c.lower.resize(0, 0);
        return true;
      }
      auto lower = try_cholesky(k);
      if (!lower) return false;
      c.lower = std::move(*lower);
      return true;
    }
    const Vector& y = observed_->targets;
    const Eigen::Index m = y.size();
    c.noise = theta(observed_->noise_index);
    Matrix sigma = k.bottomRightCorner(m, m);
    sigma.diagonal().array() += c.noise * c.noise;
    const auto ls = try_cholesky(sigma);
    if (!ls) return false;
    const auto tri = ls->triangularView<Eigen::Lower>();
    const auto tri_t = ls->transpose().triangularView<Eigen::Upper>();
    c.beta = tri_t.solve(tri.solve(y));
    c.log_evidence = -0.5 * y.dot(c.beta) - ls->diagonal().array().log().sum() - static_cast<double>(m) * log_sqrt_2pi;
    c.sigma_inv = tri_t.solve(tri.solve(Matrix::Identity(m, m)));
    c.a = c.sigma_inv * k.bottomLeftCorner(m, n);
    c.mu = c.a.transpose() * y;
    if (n == 0) {
      c.lower.resize(0, 0);
      return true;
    }
    Matrix cond = k.topLeftCorner(n, n) - k.topRightCorner(n, m) * c.a;
    cond = symmetrized(cond);
    cond.diagonal().array() += gram_jitter * std::max(k.topLeftCorner(n, n).diagonal().mean(), 1e-300);
    auto lower = try_cholesky(cond);
    if (!lower) return false;
    c.lower = std::move(*lower);
    return true;
  }

  // Lifts the adjoint of the conditional covariance (and the latent mean, via
  // d_g) to an adjoint of the full Gram; accumulates the noise-SD adjoint.
  Matrix observed_adjoint(const Matrix& cbar, const Vector& d_g, const Conditioned& c, double& noise_adjoint) const {
    const Eigen::Index n = n_latent_;
    const Eigen::Index m = observed_->targets.size();
    Matrix full = Matrix::Zero(n + m, n + m);
    const Matrix cs = 0.5 * (cbar + cbar.transpose());
    const Vector a_mu = c.a * d_g;
    full.topLeftCorner(n, n) = cs;
    // the conditional jitter scales with the mean of diag(K_hh)
    full.topLeftCorner(n, n).diagonal().array() += cs.trace() * gram_jitter / static_cast<double>(n);
    full.topRightCorner(n, m) = d_g * c.beta.transpose() - 2.0 * cs * c.a.transpose();
    Matrix sigma_bar = -a_mu * c.beta.transpose() + c.a * cs * c.a.transpose() +
                       0.5 * (c.beta * c.beta.transpose() - c.sigma_inv);
    full.bottomRightCorner(m, m) = sigma_bar;
    noise_adjoint = 2.0 * c.noise * sigma_bar.trace();
    return full;
  }

  Eigen::Index n_latent_;
  std::vector<HyperParameter> hypers_;
  std::vector<std::size_t> free_;
  GramFn gram_;
  LikelihoodFn likelihood_;
  std::optional<ObservedBlock> observed_;
};

/// Hyperparameter layout shared by every single-output latent GP:
/// [lengthscale_1..lengthscale_d, signal_sd, noise_sd].
struct SingleOutputLayout {
  Eigen::Index dims = 1;
  [[nodiscard]] Eigen::Index signal() const { return dims; }
  [[nodiscard]] Eigen::Index noise() const { return dims + 1; }
  [[nodiscard]] Eigen::Index size() const { return dims + 2; }

  [[nodiscard]] KernelParams kernel(const Vector& theta, KernelKind kind) const {
    KernelParams p;
    p.lengthscales = theta.head(dims);
    p.signal_variance = theta(signal()) * theta(signal());
    p.kind = kind;
    return p;
  }
};

/// ICM layout: [lengthscale_1..lengthscale_d, sigma_hf, sigma_lf, rho, noise_sd].
struct IcmLayout {
  Eigen::Index dims = 1;
  [[nodiscard]] Eigen::Index sigma_hf() const { return dims; }
  [[nodiscard]] Eigen::Index sigma_lf() const { return dims + 1; }
  [[nodiscard]] Eigen::Index rho() const { return dims + 2; }
  [[nodiscard]] Eigen::Index noise() const { return dims + 3; }
  [[nodiscard]] Eigen::Index size() const { return dims + 4; }

  [[nodiscard]] CoregMatrix coreg(const Vector& theta) const {
    return {theta(sigma_hf()), theta(sigma_lf()), theta(rho())};
  }
  [[nodiscard]] KernelParams kernel(const Vector& theta, KernelKind kind) const {
    KernelParams p;
    p.lengthscales = theta.head(dims);
    p.signal_variance = 1.0;
    p.kind = kind;
    return p;
  }
};

inline std::vector<HyperParameter> single_output_hypers(Eigen::Index dims, const PriorConfig& priors,
                                                        std::optional<double> fixed_noise = std::nullopt) {
  std::vector<HyperParameter> out;
  for (Eigen::Index i = 0; i < dims; ++i) {
    out.push_back({"lengthscale_" + std::to_string(i), HyperTransform::log, priors.lengthscale, std::nullopt});
  }
  out.push_back({"signal_sd", HyperTransform::log, priors.signal_sd, std::nullopt});
  out.push_back({"noise_sd", HyperTransform::log, priors.noise_sd, fixed_noise});
  return out;
}

/// Gram builder for a single-output stationary kernel, K = s^2 (C + jitter I).
inline LatentGpDensity::GramFn single_output_gram(Matrix inputs, KernelKind kind) {
  const SingleOutputLayout layout{inputs.cols()};
  return [inputs = std::move(inputs), kind, layout](const Vector& theta, Matrix& gram, std::vector<Matrix>* d_gram) {
    const Vector ls = theta.head(layout.dims);
    const double s = theta(layout.signal());
    Matrix corr = correlation_matrix(inputs, inputs, ls, kind);
    corr.diagonal().array() += gram_jitter;
    gram = s * s * corr;
    if (d_gram) {
      d_gram->assign(static_cast<std::size_t>(layout.size()), Matrix());
      auto dl = correlation_lengthscale_gradients(inputs, ls, kind);
      for (Eigen::Index i = 0; i < layout.dims; ++i) (*d_gram)[static_cast<std::size_t>(i)] = s * s * dl[static_cast<std::size_t>(i)];
      (*d_gram)[static_cast<std::size_t>(layout.signal())] = 2.0 * s * corr;
    }
  };
}

/// Probit preference GP over latent values at `hf_inputs`.
inline LatentGpDensity make_pref_gp_density(const Matrix& hf_inputs, std::vector<Comparison> comparisons,
                                            KernelKind kind, const PriorConfig& priors) {
  const SingleOutputLayout layout{hf_inputs.cols()};
  auto lik = [comparisons = std::move(comparisons), layout](const Vector& g, const Vector& theta, Vector& d_g,
                                                           Vector& d_theta) {
    const double noise = theta(layout.noise());
    double total = 0.0;
    for (const auto& c : comparisons) {
      const ProbitTerm t = probit_term(g(c.winner), g(c.loser), noise);
      total += t.value;
      d_g(c.winner) += t.d_winner;
      d_g(c.loser) -= t.d_winner;
      d_theta(layout.noise()) += t.d_noise_sd;
    }
    return total;
  };
  return {hf_inputs.rows(), single_output_hypers(hf_inputs.cols(), priors), single_output_gram(hf_inputs, kind),
          std::move(lik)};
}

/// Latent GP with a Gaussian likelihood N(y_i; g_i, noise_sd^2). Any entry of
/// `fixed` (same layout as SingleOutputLayout) pins that hyperparameter.
inline LatentGpDensity make_gaussian_latent_density(const Matrix& inputs, Vector targets, KernelKind kind,
                                                    const PriorConfig& priors,
                                                    const std::vector<std::optional<double>>& fixed = {}) {
  const SingleOutputLayout layout{inputs.cols()};
  auto hypers = single_output_hypers(inputs.cols(), priors);
  for (std::size_t k = 0; k < fixed.size() && k < hypers.size(); ++k) {
    if (fixed[k]) hypers[k].fixed = fixed[k];
  }
  auto lik = [targets = std::move(targets), layout](const Vector& g, const Vector& theta, Vector& d_g, Vector& d_theta) {
    const double noise = theta(layout.noise());
    const Vector r = targets - g;
    d_g += r / (noise * noise);
    d_theta(layout.noise()) += r.squaredNorm() / (noise * noise * noise) - static_cast<double>(r.size()) / noise;
    return -0.5 * r.squaredNorm() / (noise * noise) - static_cast<double>(r.size()) * (std::log(noise) + log_sqrt_2pi);
  };
  return {inputs.rows(), std::move(hypers), single_output_gram(inputs, kind), std::move(lik)};
}

/// Hierarchical correction GP: latent delta at `hf_inputs` with the
/// low-fidelity mean and covariance at the same inputs held fixed.
inline LatentGpDensity make_ar1_delta_density(const Matrix& hf_inputs, std::vector<Comparison> comparisons,
                                              Vector lf_mean, const Matrix& lf_cov, KernelKind kind,
                                              const PriorConfig& priors) {
  const SingleOutputLayout layout{hf_inputs.cols()};
  std::vector<double> var_diff;
  for (const auto& c : comparisons) {
    var_diff.push_back(std::max(0.0, lf_cov(c.winner, c.winner) + lf_cov(c.loser, c.loser) - 2.0 * lf_cov(c.winner, c.loser)));
  }
  auto lik = [comparisons = std::move(comparisons), lf_mean = std::move(lf_mean), var_diff = std::move(var_diff),
              layout](const Vector& delta, const Vector& theta, Vector& d_g, Vector& d_theta) {
    const double noise = theta(layout.noise());
    double total = 0.0;
    for (std::size_t k = 0; k < comparisons.size(); ++k) {
      const auto& c = comparisons[k];
      const Ar1Term t = ar1_term(delta(c.winner), delta(c.loser), lf_mean(c.winner), lf_mean(c.loser), var_diff[k], noise);
      total += t.value;
      d_g(c.winner) += t.d_winner;
      d_g(c.loser) -= t.d_winner;
      d_theta(layout.noise()) += t.d_noise_sd;
    }
    return total;
  };
  return {hf_inputs.rows(), single_output_hypers(hf_inputs.cols(), priors), single_output_gram(hf_inputs, kind),
          std::move(lik)};
}

inline std::vector<HyperParameter> icm_hypers(Eigen::Index dims, const PriorConfig& priors) {
  std::vector<HyperParameter> out;
  for (Eigen::Index i = 0; i < dims; ++i) {
    out.push_back({"lengthscale_" + std::to_string(i), HyperTransform::log, priors.lengthscale, std::nullopt});
  }
  out.push_back({"sigma_hf", HyperTransform::log, priors.signal_sd, std::nullopt});
  out.push_back({"sigma_lf", HyperTransform::log, priors.signal_sd, std::nullopt});
  out.push_back({"rho", HyperTransform::logistic, priors.rho, std::nullopt});
  out.push_back({"noise_sd", HyperTransform::log, priors.noise_sd, std::nullopt});
  return out;
}

/// Stacked augmented inputs: hf rows first, then lf rows.
struct AugmentedSet {
  Matrix inputs;
  std::vector<Eigen::Index> fidelity;  // 0 = hf, 1 = lf

  static AugmentedSet from(const MixedDataset& data) {
    AugmentedSet s;
    const Eigen::Index d = data.dims();
    s.inputs.resize(data.n_hf() + data.n_lf(), d);
    if (data.n_hf() > 0) s.inputs.topRows(data.n_hf()) = data.hf_inputs;
    if (data.n_lf() > 0) s.inputs.bottomRows(data.n_lf()) = data.lf_inputs;
    s.fidelity.assign(static_cast<std::size_t>(data.n_hf()), 0);
    s.fidelity.insert(s.fidelity.end(), static_cast<std::size_t>(data.n_lf()), 1);
    return s;
  }
  static AugmentedSet uniform(const Matrix& x, Fidelity f) {
    return {x, std::vector<Eigen::Index>(static_cast<std::size_t>(x.rows()), fidelity_index(f))};
  }
};

/// ICM Gram, K_ij = B[h_i, h_j] (C_ij + jitter delta_ij).
inline LatentGpDensity::GramFn icm_gram_builder(AugmentedSet set, KernelKind kind) {
  const IcmLayout layout{set.inputs.cols()};
  return [set = std::move(set), kind, layout](const Vector& theta, Matrix& gram, std::vector<Matrix>* d_gram) {
    const Vector ls = theta.head(layout.dims);
    const double shf = theta(layout.sigma_hf());
    const double slf = theta(layout.sigma_lf());
    const double rho = theta(layout.rho());
    Matrix corr = correlation_matrix(set.inputs, set.inputs, ls, kind);
    corr.diagonal().array() += gram_jitter;
    const Eigen::Index n = corr.rows();
    Matrix b_entries(n, n);
    Matrix d_shf(n, n), d_slf(n, n), d_rho(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto hi = set.fidelity[static_cast<std::size_t>(i)];
        const auto hj = set.fidelity[static_cast<std::size_t>(j)];
        if (hi == 0 && hj == 0) {
          b_entries(i, j) = shf * shf;
          d_shf(i, j) = 2.0 * shf;
          d_slf(i, j) = 0.0;
          d_rho(i, j) = 0.0;
        } else if (hi == 1 && hj == 1) {
          b_entries(i, j) = slf * slf;
          d_shf(i, j) = 0.0;
          d_slf(i, j) = 2.0 * slf;
          d_rho(i, j) = 0.0;
        } else {
          b_entries(i, j) = rho * shf * slf;
          d_shf(i, j) = rho * slf;
          d_slf(i, j) = rho * shf;
          d_rho(i, j) = shf * slf;
        }
      }
    }
    gram = b_entries.cwiseProduct(corr);
    if (d_gram) {
      d_gram->assign(static_cast<std::size_t>(layout.size()), Matrix());
      auto dl = correlation_lengthscale_gradients(set.inputs, ls, kind);
      for (Eigen::Index i = 0; i < layout.dims; ++i) {
        (*d_gram)[static_cast<std::size_t>(i)] = b_entries.cwiseProduct(dl[static_cast<std::size_t>(i)]);
      }
      (*d_gram)[static_cast<std::size_t>(layout.sigma_hf())] = d_shf.cwiseProduct(corr);
      (*d_gram)[static_cast<std::size_t>(layout.sigma_lf())] = d_slf.cwiseProduct(corr);
      (*d_gram)[static_cast<std::size_t>(layout.rho())] = d_rho.cwiseProduct(corr);
    }
  };
}

/// Multi-modal ICM posterior. The latents are g at the hf inputs; g at the lf
/// inputs enters only through the Gaussian observations, which share the
/// probit's noise_sd and are integrated out in closed form (the hf marginal of
/// the joint posterior is unchanged). `lf_targets` are expected standardized.
inline LatentGpDensity make_icm_density(const MixedDataset& data, KernelKind kind, const PriorConfig& priors) {
  const IcmLayout layout{data.dims()};
  auto lik = [comparisons = data.comparisons, layout](const Vector& g, const Vector& theta, Vector& d_g,
                                                     Vector& d_theta) {
    const double noise = theta(layout.noise());
    double total = 0.0;
    for (const auto& c : comparisons) {
      const ProbitTerm t = probit_term(g(c.winner), g(c.loser), noise);
      total += t.value;
      d_g(c.winner) += t.d_winner;
      d_g(c.loser) -= t.d_winner;
      d_theta(layout.noise()) += t.d_noise_sd;
    }
    return total;
  };
  std::optional<LatentGpDensity::ObservedBlock> observed;
  if (data.n_lf() > 0) observed = LatentGpDensity::ObservedBlock{data.lf_targets, layout.noise()};
  return {data.n_hf(), icm_hypers(data.dims(), priors), icm_gram_builder(AugmentedSet::from(data), kind), std::move(lik),
          std::move(observed)};
}

}  // namespace mmbo

#endif  // MMBO_LATENT_GP_HPP
