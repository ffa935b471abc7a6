#ifndef MMBO_SURROGATES_HPP
#define MMBO_SURROGATES_HPP

#include "mmbo/gp_regression.hpp"
#include "mmbo/hmc.hpp"
#include "mmbo/latent_gp.hpp"
#include "mmbo/predictive.hpp"

#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmbo {

enum class SurrogateKind { pref_gp, mm_icm, mm_ar1 };

inline std::string_view to_string(SurrogateKind kind) {
  switch (kind) {
    case SurrogateKind::pref_gp: return "pref-gp";
    case SurrogateKind::mm_icm: return "mm-icm";
    case SurrogateKind::mm_ar1: return "mm-ar1";
  }
  return "unknown";
}

inline SurrogateKind surrogate_kind_from_string(std::string_view name) {
  if (name == "pref-gp") return SurrogateKind::pref_gp;
  if (name == "mm-icm") return SurrogateKind::mm_icm;
  if (name == "mm-ar1") return SurrogateKind::mm_ar1;
  throw std::invalid_argument("unknown surrogate kind '" + std::string(name) + "'");
}

struct SurrogateConfig {
  KernelKind kernel = KernelKind::squared_exponential;
  PriorConfig priors;
  HmcConfig hmc;
  int predictive_samples = 256;  // posterior samples retained for prediction
  EvidenceSearchConfig lf_search;
  bool zero_delta = false;  // mm-ar1 diagnostic: drop the correction process
};

/// Per-sample state needed to condition on a posterior draw.
struct ConditionedSample {
  Vector theta;
  Matrix train_chol;  // Cholesky of the training Gram (jitter included)
  Vector alpha;       // K^{-1} g
};

/// Per-sample predictive means and variances at a set of test points.
struct SampleMoments {
  Matrix mean;      // S x m
  Matrix variance;  // S x m

  [[nodiscard]] Vector mixture_mean() const { return mean.colwise().mean().transpose(); }
  [[nodiscard]] Vector mixture_variance() const {
    const Vector mu = mixture_mean();
    const auto s = static_cast<double>(mean.rows());
    Vector within = variance.colwise().mean().transpose();
    Vector between = (mean.rowwise() - mu.transpose()).array().square().colwise().sum().transpose() / s;
    return within + between;
  }
};

/// A fitted surrogate behind one interface. Inputs are unit-cube coordinates;
/// numerical targets are standardized internally and predictions are on that
/// standardized scale.
class SurrogateModel {
 public:
  [[nodiscard]] SurrogateKind kind() const { return kind_; }
  [[nodiscard]] const MixedDataset& data() const { return data_; }
  [[nodiscard]] const PosteriorSampleSet& samples() const { return samples_; }
  [[nodiscard]] const SurrogateConfig& config() const { return config_; }
  [[nodiscard]] const std::optional<FittedGp>& lf_gp() const { return lf_gp_; }
  [[nodiscard]] Eigen::Index dims() const { return dims_; }
  [[nodiscard]] double lf_offset() const { return lf_offset_; }
  [[nodiscard]] double lf_scale() const { return lf_scale_; }

  /// Number of distinct predictive samples at fidelity `f`.
  [[nodiscard]] Eigen::Index sample_count(Fidelity f) const {
    if (kind_ == SurrogateKind::mm_ar1 && (f == Fidelity::lf || config_.zero_delta)) return 1;
    return static_cast<Eigen::Index>(conditioned_.size());
  }

  /// Standardized value of a raw low-fidelity observation.
  [[nodiscard]] double standardize_lf(double y) const { return (y - lf_offset_) / lf_scale_; }

  [[nodiscard]] SampleMoments moments(const Matrix& x, Fidelity f = Fidelity::hf) const {
    const Eigen::Index s_count = sample_count(f);
    SampleMoments out{Matrix(s_count, x.rows()), Matrix(s_count, x.rows())};
    if (kind_ == SurrogateKind::mm_ar1) {
      const Vector lf_mean = lf_mean_at(x);
      const Vector lf_var = lf_variance_at(x);
      if (f == Fidelity::lf || config_.zero_delta) {
        out.mean.row(0) = lf_mean.transpose();
        out.variance.row(0) = lf_var.transpose();
        return out;
      }
      for (Eigen::Index s = 0; s < s_count; ++s) {
        const auto [m, v] = component_moments(s, x, f);
        out.mean.row(s) = (lf_mean + m).transpose();
        out.variance.row(s) = (lf_var + v).transpose();
      }
      return out;
    }
    for (Eigen::Index s = 0; s < s_count; ++s) {
      const auto [m, v] = component_moments(s, x, f);
      out.mean.row(s) = m.transpose();
      out.variance.row(s) = v.transpose();
    }
    return out;
  }

  /// Posterior covariance between the rows of `a` and `b` under sample `s`.
  [[nodiscard]] Matrix cross_covariance(Eigen::Index s, const Matrix& a, const Matrix& b, Fidelity f = Fidelity::hf) const {
    if (kind_ == SurrogateKind::mm_ar1) {
      Matrix lf = lf_cross(a, b);
      if (f == Fidelity::lf || config_.zero_delta) return lf;
      return lf + component_cross(s, a, b, f);
    }
    return component_cross(s, a, b, f);
  }

  /// Per-sample joint Gaussian at `x`.
  [[nodiscard]] GaussianPrediction joint(Eigen::Index s, const Matrix& x, Fidelity f = Fidelity::hf) const {
    const SampleMoments m = moments_for_sample(s, x, f);
    return {m.mean.row(0).transpose(), cross_covariance(s, x, x, f)};
  }

  /// Observation noise SD (standardized scale) of sample `s` at fidelity `f`.
  [[nodiscard]] double noise_sd(Eigen::Index s, Fidelity f = Fidelity::hf) const {
    if (kind_ == SurrogateKind::mm_ar1 && (f == Fidelity::lf || config_.zero_delta)) return lf_gp_->noise_sd();
    const Vector& theta = conditioned_[static_cast<std::size_t>(s)].theta;
    return kind_ == SurrogateKind::mm_icm ? theta(IcmLayout{dims_}.noise()) : theta(SingleOutputLayout{dims_}.noise());
  }

  /// Prior variance scale used for jitter at fidelity `f` under sample `s`.
  [[nodiscard]] double prior_scale(Eigen::Index s, Fidelity f) const {
    if (kind_ == SurrogateKind::mm_ar1 && (f == Fidelity::lf || config_.zero_delta)) {
      return lf_gp_->params().signal_variance;
    }
    const Vector& theta = conditioned_[static_cast<std::size_t>(s)].theta;
    if (kind_ == SurrogateKind::mm_icm) {
      const IcmLayout layout{dims_};
      const double sd = f == Fidelity::hf ? theta(layout.sigma_hf()) : theta(layout.sigma_lf());
      return sd * sd;
    }
    const double sd = theta(SingleOutputLayout{dims_}.signal());
    const double base = sd * sd;
    return kind_ == SurrogateKind::mm_ar1 ? base + lf_gp_->params().signal_variance : base;
  }

  /// Mixture mean of the posterior predictive at `x` (the expectation of
  /// sample_at draws).
  [[nodiscard]] Vector posterior_mean(const Matrix& x, Fidelity f = Fidelity::hf) const {
    return moments(x, f).mixture_mean();
  }

  /// n_draws joint posterior-predictive draws at `x`; row i conditions on
  /// posterior sample i mod S.
  [[nodiscard]] Matrix sample_at(const Matrix& x, int n_draws, std::uint64_t seed, Fidelity f = Fidelity::hf) const {
    return sample_components(x, n_draws, seed, f).total;
  }

  struct ComponentDraws {
    Matrix total;
    Matrix lf;     // mm-ar1 only
    Matrix delta;  // mm-ar1 only
  };

  /// For mm-ar1 the high-fidelity draw is assembled as lf draw + delta draw and
  /// both parts are returned; other kinds only fill `total`.
  [[nodiscard]] ComponentDraws sample_components(const Matrix& x, int n_draws, std::uint64_t seed,
                                                 Fidelity f = Fidelity::hf) const {
    if (n_draws < 0) throw std::invalid_argument("sample_at: negative draw count");
    std::mt19937_64 rng(seed);
    ComponentDraws out;
    out.total.resize(n_draws, x.rows());
    const bool split = kind_ == SurrogateKind::mm_ar1 && f == Fidelity::hf;
    if (split) {
      out.lf.resize(n_draws, x.rows());
      out.delta.resize(n_draws, x.rows());
    }
    if (n_draws == 0) return out;
    const Eigen::Index s_count = sample_count(f);
    std::optional<GaussianPrediction> lf_pred;
    if (kind_ == SurrogateKind::mm_ar1) lf_pred = GaussianPrediction{lf_mean_at(x), lf_cross(x, x)};
    for (int i = 0; i < n_draws; ++i) {
      const Eigen::Index s = i % s_count;
      if (kind_ != SurrogateKind::mm_ar1) {
        const auto [m, v] = component_moments(s, x, f);
        (void)v;
        out.total.row(i) = draw_gaussian(m, component_cross(s, x, x, f), prior_scale(s, f), rng).transpose();
        continue;
      }
      const Vector lf_draw = draw_gaussian(lf_pred->mean, lf_pred->covariance, lf_gp_->params().signal_variance, rng);
      if (!split) {
        out.total.row(i) = lf_draw.transpose();
        continue;
      }
      Vector delta_draw = Vector::Zero(x.rows());
      if (!config_.zero_delta) {
        const auto [m, v] = component_moments(s, x, f);
        (void)v;
        const double scale = std::pow(conditioned_[static_cast<std::size_t>(s)].theta(SingleOutputLayout{dims_}.signal()), 2);
        delta_draw = draw_gaussian(m, component_cross(s, x, x, f), scale, rng);
      }
      out.lf.row(i) = lf_draw.transpose();
      out.delta.row(i) = delta_draw.transpose();
      out.total.row(i) = (lf_draw + delta_draw).transpose();
    }
    return out;
  }

  // Construction goes through the fit_* functions below.
  struct Parts {
    SurrogateKind kind;
    MixedDataset data;
    SurrogateConfig config;
    PosteriorSampleSet samples;
    std::optional<FittedGp> lf_gp;
    double lf_offset = 0.0;
    double lf_scale = 1.0;
  };

  explicit SurrogateModel(Parts parts)
      : kind_(parts.kind),
        data_(std::move(parts.data)),
        config_(std::move(parts.config)),
        samples_(std::move(parts.samples)),
        lf_gp_(std::move(parts.lf_gp)),
        lf_offset_(parts.lf_offset),
        lf_scale_(parts.lf_scale) {
    dims_ = data_.dims();
    train_ = kind_ == SurrogateKind::mm_icm ? AugmentedSet::from(data_) : AugmentedSet::uniform(data_.hf_inputs, Fidelity::hf);
    condition_samples();
  }

 private:
  [[nodiscard]] Matrix prior_cross(const Vector& theta, const Matrix& a, const std::vector<Eigen::Index>& fa,
                                   const Matrix& b, const std::vector<Eigen::Index>& fb) const {
    if (kind_ == SurrogateKind::mm_icm) {
      const IcmLayout layout{dims_};
      return icm_gram(a, fa, b, fb, coreg_B(layout.coreg(theta)), layout.kernel(theta, config_.kernel));
    }
    return kernel_matrix(a, b, SingleOutputLayout{dims_}.kernel(theta, config_.kernel));
  }

  [[nodiscard]] static std::vector<Eigen::Index> fid_vector(Eigen::Index n, Fidelity f) {
    return std::vector<Eigen::Index>(static_cast<std::size_t>(n), fidelity_index(f));
  }

  // The latent (pref-gp, mm-icm) or correction (mm-ar1) process.
  [[nodiscard]] std::pair<Vector, Vector> component_moments(Eigen::Index s, const Matrix& x, Fidelity f) const {
    const auto& cs = conditioned_[static_cast<std::size_t>(s)];
    const auto fx = fid_vector(x.rows(), f);
    Vector prior_var(x.rows());
    if (kind_ == SurrogateKind::mm_icm) {
      const Eigen::Matrix2d b = coreg_B(IcmLayout{dims_}.coreg(cs.theta));
      prior_var.setConstant(b(fidelity_index(f), fidelity_index(f)));
    } else {
      prior_var.setConstant(std::pow(cs.theta(SingleOutputLayout{dims_}.signal()), 2));
    }
    if (train_.inputs.rows() == 0) return {Vector::Zero(x.rows()), prior_var};
    const Matrix k_tx = prior_cross(cs.theta, train_.inputs, train_.fidelity, x, fx);
    const Matrix v = cs.train_chol.triangularView<Eigen::Lower>().solve(k_tx);
    return {k_tx.transpose() * cs.alpha, (prior_var - v.colwise().squaredNorm().transpose()).cwiseMax(0.0)};
  }

  [[nodiscard]] Matrix component_cross(Eigen::Index s, const Matrix& a, const Matrix& b, Fidelity f) const {
    const auto& cs = conditioned_[static_cast<std::size_t>(s)];
    const auto fa = fid_vector(a.rows(), f);
    const auto fb = fid_vector(b.rows(), f);
    Matrix prior = prior_cross(cs.theta, a, fa, b, fb);
    if (train_.inputs.rows() == 0) return prior;
    const auto tri = cs.train_chol.triangularView<Eigen::Lower>();
    const Matrix va = tri.solve(prior_cross(cs.theta, train_.inputs, train_.fidelity, a, fa));
    const Matrix vb = tri.solve(prior_cross(cs.theta, train_.inputs, train_.fidelity, b, fb));
    return prior - va.transpose() * vb;
  }

  [[nodiscard]] SampleMoments moments_for_sample(Eigen::Index s, const Matrix& x, Fidelity f) const {
    SampleMoments out{Matrix(1, x.rows()), Matrix(1, x.rows())};
    Vector mean = Vector::Zero(x.rows());
    Vector var = Vector::Zero(x.rows());
    if (kind_ == SurrogateKind::mm_ar1) {
      mean = lf_mean_at(x);
      var = lf_variance_at(x);
      if (f == Fidelity::hf && !config_.zero_delta) {
        const auto [m, v] = component_moments(s, x, f);
        mean += m;
        var += v;
      }
    } else {
      std::tie(mean, var) = component_moments(s, x, f);
    }
    out.mean.row(0) = mean.transpose();
    out.variance.row(0) = var.transpose();
    return out;
  }

  [[nodiscard]] Vector lf_mean_at(const Matrix& x) const { return lf_gp_->mean(x); }
  [[nodiscard]] Vector lf_variance_at(const Matrix& x) const { return lf_gp_->variance(x); }
  [[nodiscard]] Matrix lf_cross(const Matrix& a, const Matrix& b) const { return lf_gp_->cross_covariance(a, b); }

  void condition_samples() {
    const Eigen::Index total = samples_.size();
    if (total == 0) throw std::invalid_argument("SurrogateModel: empty posterior sample set");
    const Eigen::Index keep = std::min<Eigen::Index>(total, std::max(1, config_.predictive_samples));
    conditioned_.clear();
    for (Eigen::Index k = 0; k < keep; ++k) {
      const Eigen::Index s = (k * total) / keep;
      ConditionedSample cs;
      cs.theta = samples_.hyper_draws.row(s).transpose();
      if (train_.inputs.rows() > 0) {
        Matrix gram = prior_cross(cs.theta, train_.inputs, train_.fidelity, train_.inputs, train_.fidelity);
        const double scale = gram.diagonal().mean();
        gram.diagonal().array() += gram_jitter * scale;
        Vector rhs(train_.inputs.rows());
        const Eigen::Index n_hf = data_.n_hf();
        rhs.head(n_hf) = samples_.latent_draws.row(s).transpose();
        if (kind_ == SurrogateKind::mm_icm && data_.n_lf() > 0) {
          // lf values are integrated out: condition on the noisy observations
          const double noise = cs.theta(IcmLayout{dims_}.noise());
          gram.diagonal().tail(data_.n_lf()).array() += noise * noise;
          rhs.tail(data_.n_lf()) = (data_.lf_targets.array() - lf_offset_) / lf_scale_;
        }
        cs.train_chol = robust_cholesky(gram, 0.0, 1e-6).lower;
        const auto tri = cs.train_chol.triangularView<Eigen::Lower>();
        cs.alpha = cs.train_chol.transpose().triangularView<Eigen::Upper>().solve(tri.solve(rhs));
      }
      conditioned_.push_back(std::move(cs));
    }
  }

  SurrogateKind kind_;
  MixedDataset data_;
  SurrogateConfig config_;
  PosteriorSampleSet samples_;
  std::optional<FittedGp> lf_gp_;
  double lf_offset_ = 0.0;
  double lf_scale_ = 1.0;
  Eigen::Index dims_ = 0;
  AugmentedSet train_;
  std::vector<ConditionedSample> conditioned_;
};

namespace detail {

// Exact prior draws used when there is nothing to condition on.
inline PosteriorSampleSet prior_sample_set(const LatentGpDensity& density, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  PosteriorSampleSet out;
  out.hyper_draws.resize(count, static_cast<Eigen::Index>(density.hypers().size()));
  out.latent_draws.resize(count, density.n_latent());
  for (int s = 0; s < count; ++s) {
    const Vector theta = density.sample_hyper_prior(rng);
    out.hyper_draws.row(s) = theta.transpose();
    if (density.n_latent() > 0) {
      Vector z(density.n_latent());
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = n(rng);
      const Matrix lower = robust_cholesky(density.gram(theta), 0.0, 1e-6).lower;
      out.latent_draws.row(s) = (lower.triangularView<Eigen::Lower>() * z).transpose();
    }
  }
  return out;
}

inline std::pair<double, double> standardization(const Vector& y) {
  if (y.size() == 0) return {0.0, 1.0};
  const double offset = y.mean();
  if (y.size() < 2) return {offset, 1.0};
  const double var = (y.array() - offset).square().sum() / static_cast<double>(y.size() - 1);
  return {offset, var > 1e-24 ? std::sqrt(var) : 1.0};
}

}  // namespace detail

inline SurrogateModel fit_pref_gp(const Matrix& hf_inputs, const std::vector<Comparison>& comparisons,
                                  const SurrogateConfig& config = {}) {
  if (comparisons.empty()) throw std::invalid_argument("fit_pref_gp: at least one comparison is required");
  MixedDataset data;
  data.hf_inputs = hf_inputs;
  data.comparisons = comparisons;
  data.lf_inputs.resize(0, hf_inputs.cols());
  data.validate();
  const LatentGpDensity density = make_pref_gp_density(hf_inputs, comparisons, config.kernel, config.priors);
  PosteriorSampleSet samples = hmc_sample(density.model(), config.hmc);
  return SurrogateModel({SurrogateKind::pref_gp, std::move(data), config, std::move(samples), std::nullopt, 0.0, 1.0});
}

inline SurrogateModel fit_mm_icm(const MixedDataset& data, const SurrogateConfig& config = {}) {
  data.validate();
  if (data.comparisons.empty() && data.n_lf() == 0) {
    throw std::invalid_argument("fit_mm_icm: dataset has no observations");
  }
  const auto [offset, scale] = detail::standardization(data.lf_targets);
  MixedDataset standardized = data;
  standardized.lf_targets = (data.lf_targets.array() - offset) / scale;
  const LatentGpDensity density = make_icm_density(standardized, config.kernel, config.priors);
  PosteriorSampleSet samples = hmc_sample(density.model(), config.hmc);
  return SurrogateModel({SurrogateKind::mm_icm, data, config, std::move(samples), std::nullopt, offset, scale});
}

inline SurrogateModel fit_mm_ar1(const MixedDataset& data, const SurrogateConfig& config = {}) {
  data.validate();
  if (data.n_lf() < 2) throw std::invalid_argument("fit_mm_ar1: at least two low-fidelity observations are required");
  FittedGp lf(data.lf_inputs, data.lf_targets, config.lf_search);
  const double offset = lf.offset();
  const double scale = lf.scale();

  Vector lf_mean = Vector::Zero(data.n_hf());
  Matrix lf_cov = Matrix::Zero(data.n_hf(), data.n_hf());
  if (data.n_hf() > 0) {
    const GaussianPrediction pred = lf.predict(data.hf_inputs);
    lf_mean = pred.mean;
    lf_cov = pred.covariance;
  }
  const LatentGpDensity density =
      make_ar1_delta_density(data.hf_inputs, data.comparisons, lf_mean, lf_cov, config.kernel, config.priors);
  PosteriorSampleSet samples;
  if (data.comparisons.empty() || config.zero_delta) {
    samples = detail::prior_sample_set(density, std::max(1, config.predictive_samples), config.hmc.seed);
  } else {
    samples = hmc_sample(density.model(), config.hmc);
  }
  return SurrogateModel({SurrogateKind::mm_ar1, data, config, std::move(samples), std::move(lf), offset, scale});
}

inline SurrogateModel fit_surrogate(SurrogateKind kind, const MixedDataset& data, const SurrogateConfig& config = {}) {
  switch (kind) {
    case SurrogateKind::pref_gp: return fit_pref_gp(data.hf_inputs, data.comparisons, config);
    case SurrogateKind::mm_icm: return fit_mm_icm(data, config);
    case SurrogateKind::mm_ar1: return fit_mm_ar1(data, config);
  }
  throw std::invalid_argument("fit_surrogate: unknown kind");
}

}  // namespace mmbo

#endif  // MMBO_SURROGATES_HPP
