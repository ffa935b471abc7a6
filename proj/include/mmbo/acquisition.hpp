#ifndef MMBO_ACQUISITION_HPP
#define MMBO_ACQUISITION_HPP

#include "mmbo/candidates.hpp"
#include "mmbo/surrogates.hpp"

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace mmbo {

/// What the acquisition functions need from a model: a finite mixture of
/// per-sample Gaussian predictives. SurrogateModel satisfies it; so does any
/// analytic stand-in.
template <typename M>
concept PredictiveModel = requires(const M& m, const Matrix& x, Eigen::Index s, Fidelity f) {
  { m.sample_count(f) } -> std::convertible_to<Eigen::Index>;
  { m.moments(x, f) } -> std::same_as<SampleMoments>;
  { m.cross_covariance(s, x, x, f) } -> std::convertible_to<Matrix>;
  { m.noise_sd(s, f) } -> std::convertible_to<double>;
};

struct AcquisitionConfig {
  int draws = 256;        // Monte Carlo draws per evaluation
  int ipv_samples = 32;   // posterior samples averaged by IPV
  std::uint64_t seed = 0;  // common random numbers across candidates
  Fidelity fidelity = Fidelity::hf;
};

namespace detail {

inline Vector standard_normals(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = g(rng);
  return out;
}

}  // namespace detail

/// Monte Carlo expected improvement over `incumbent` (maximization): the mean
/// of max(draw - incumbent, 0) over posterior-predictive draws. Draw i uses
/// posterior sample i mod S and the same standard normals for every candidate.
template <PredictiveModel M>
Vector expected_improvement(const M& model, const Matrix& candidates, double incumbent,
                            const AcquisitionConfig& config = {}) {
  if (!std::isfinite(incumbent)) throw std::invalid_argument("expected_improvement: incumbent must be finite");
  const SampleMoments mom = model.moments(candidates, config.fidelity);
  const Eigen::Index s_count = mom.mean.rows();
  const Vector eps = detail::standard_normals(config.draws, config.seed);
  Vector out = Vector::Zero(candidates.rows());
  for (Eigen::Index j = 0; j < candidates.rows(); ++j) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < eps.size(); ++i) {
      const Eigen::Index s = i % s_count;
      const double v = mom.mean(s, j) + std::sqrt(std::max(mom.variance(s, j), 0.0)) * eps(i);
      total += std::max(v - incumbent, 0.0);
    }
    out(j) = eps.size() > 0 ? total / static_cast<double>(eps.size()) : 0.0;
  }
  return out;
}

/// Integral predictive variance: the drop in grid-averaged predictive variance
/// after observing each candidate (at its posterior mean, which leaves the
/// Gaussian variance update value-independent). Per posterior sample the drop
/// at grid point g is Cov(g, c)^2 / (Var(c) + noise^2); samples are averaged.
template <PredictiveModel M>
Vector integral_predictive_variance(const M& model, const Matrix& candidates, const Matrix& grid,
                                    const AcquisitionConfig& config = {}) {
  if (grid.rows() == 0) throw std::invalid_argument("integral_predictive_variance: empty integration grid");
  const SampleMoments mom = model.moments(candidates, config.fidelity);
  const Eigen::Index s_count = mom.mean.rows();
  const Eigen::Index used = std::clamp<Eigen::Index>(config.ipv_samples, 1, s_count);
  Vector out = Vector::Zero(candidates.rows());
  for (Eigen::Index k = 0; k < used; ++k) {
    const Eigen::Index s = (k * s_count) / used;
    const Matrix cov = model.cross_covariance(s, grid, candidates, config.fidelity);
    const double noise = model.noise_sd(s, config.fidelity);
    for (Eigen::Index j = 0; j < candidates.rows(); ++j) {
      const double denom = std::max(mom.variance(s, j), 0.0) + noise * noise;
      out(j) += cov.col(j).squaredNorm() / denom;
    }
  }
  return out / (static_cast<double>(used) * static_cast<double>(grid.rows()));
}

using IndexPair = std::pair<Eigen::Index, Eigen::Index>;

/// Expected utility of the best option for index pairs into `points`:
/// E[max(g(a), g(b))] over joint posterior-predictive draws (common random
/// numbers shared by all pairs).
template <PredictiveModel M>
Vector eubo_pairs(const M& model, const Matrix& points, const std::vector<IndexPair>& pairs,
                  const AcquisitionConfig& config = {}) {
  const SampleMoments mom = model.moments(points, config.fidelity);
  const Eigen::Index s_count = mom.mean.rows();
  const Eigen::Index n_draws = config.draws;
  const Vector eps = detail::standard_normals(2 * n_draws, config.seed);
  Vector out = Vector::Zero(static_cast<Eigen::Index>(pairs.size()));
  if (n_draws == 0) return out;
  for (Eigen::Index s = 0; s < std::min(s_count, n_draws); ++s) {
    const Matrix cov = model.cross_covariance(s, points, points, config.fidelity);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [a, b] = pairs[p];
      const double l11 = std::sqrt(std::max(cov(a, a), 0.0));
      const double l21 = l11 > 0.0 ? cov(b, a) / l11 : 0.0;
      const double l22 = std::sqrt(std::max(cov(b, b) - l21 * l21, 0.0));
      double total = 0.0;
      for (Eigen::Index i = s; i < n_draws; i += s_count) {
        const double z1 = eps(2 * i);
        const double z2 = eps(2 * i + 1);
        total += std::max(mom.mean(s, a) + l11 * z1, mom.mean(s, b) + l21 * z1 + l22 * z2);
      }
      out(static_cast<Eigen::Index>(p)) += total;
    }
  }
  return out / static_cast<double>(n_draws);
}

template <PredictiveModel M>
double eubo(const M& model, const Vector& a, const Vector& b, const AcquisitionConfig& config = {}) {
  Matrix points(2, a.size());
  points.row(0) = a.transpose();
  points.row(1) = b.transpose();
  return eubo_pairs(model, points, {{0, 1}}, config)(0);
}

/// Batch acquisition: one value per candidate row, higher is better.
using BatchAcquisition = std::function<Vector(const Matrix&)>;

struct SingleResult {
  Vector point;
  double value = 0.0;
  CandidateOrigin origin = CandidateOrigin::sobol;
};

/// Sobol screening of `budget` candidates followed by one round of 32 local
/// Gaussian perturbations (SD 0.05 box widths) around the best.
inline SingleResult maximize_single(const BatchAcquisition& acq, const Box& box, Eigen::Index budget,
                                    std::uint64_t seed = 0) {
  const CandidateSet sobol = sobol_candidates(box, budget, seed);
  const Vector values = acq(sobol.points);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values(i) > values(best)) best = i;
  }
  SingleResult out{sobol.points.row(best).transpose(), values(best), CandidateOrigin::sobol};
  if (budget > 1) {
    std::mt19937_64 rng(seed ^ 0xa0761d6478bd642fULL);
    const CandidateSet local = local_perturbations(box, out.point, 32, 0.05, rng);
    const Vector lv = acq(local.points);
    for (Eigen::Index i = 0; i < lv.size(); ++i) {
      if (lv(i) > out.value) out = {local.points.row(i).transpose(), lv(i), CandidateOrigin::local_perturbation};
    }
  }
  return out;
}

struct PairSearchConfig {
  Eigen::Index candidates = 256;  // Sobol screening set
  Eigen::Index top_k = 16;        // all pairs among the best mean-plus-SD candidates
  Eigen::Index random_pairs = 64;
};

struct PairResult {
  Vector first;
  Vector second;
  double value = 0.0;
};

/// Best EUBO pair among (a) all pairs of the top-k candidates by posterior
/// mean plus SD and (b) random distinct pairs of Sobol candidates.
template <PredictiveModel M>
PairResult maximize_pair(const M& model, const Box& box, const PairSearchConfig& search = {},
                         const AcquisitionConfig& config = {}) {
  const CandidateSet cand = sobol_candidates(box, std::max<Eigen::Index>(search.candidates, 2), config.seed);
  const Eigen::Index n = cand.points.rows();
  const SampleMoments mom = model.moments(cand.points, config.fidelity);
  const Vector score = mom.mixture_mean() + mom.mixture_variance().cwiseMax(0.0).cwiseSqrt();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return score(a) > score(b); });

  std::vector<IndexPair> pairs;
  const auto top = std::min<Eigen::Index>(search.top_k, n);
  for (Eigen::Index i = 0; i < top; ++i) {
    for (Eigen::Index j = i + 1; j < top; ++j) pairs.emplace_back(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  std::mt19937_64 rng(config.seed ^ 0xe7037ed1a0b428dbULL);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (Eigen::Index k = 0; k < search.random_pairs; ++k) {
    const Eigen::Index a = pick(rng);
    Eigen::Index b = pick(rng);
    while (b == a) b = pick(rng);
    pairs.emplace_back(a, b);
  }
  std::erase_if(pairs, [&](const IndexPair& p) { return cand.points.row(p.first) == cand.points.row(p.second); });
  if (pairs.empty()) throw std::invalid_argument("maximize_pair: no pair of distinct candidates");

  // Evaluate on the rows that actually occur.
  std::vector<Eigen::Index> used;
  for (const auto& [a, b] : pairs) {
    used.push_back(a);
    used.push_back(b);
  }
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  std::vector<Eigen::Index> local(static_cast<std::size_t>(n), -1);
  Matrix pts(static_cast<Eigen::Index>(used.size()), box.dims());
  for (std::size_t i = 0; i < used.size(); ++i) {
    local[static_cast<std::size_t>(used[i])] = static_cast<Eigen::Index>(i);
    pts.row(static_cast<Eigen::Index>(i)) = cand.points.row(used[i]);
  }
  std::vector<IndexPair> mapped;
  for (const auto& [a, b] : pairs) mapped.emplace_back(local[static_cast<std::size_t>(a)], local[static_cast<std::size_t>(b)]);
  const Vector values = eubo_pairs(model, pts, mapped, config);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values(i) > values(best)) best = i;
  }
  const auto [a, b] = mapped[static_cast<std::size_t>(best)];
  return {pts.row(a).transpose(), pts.row(b).transpose(), values(best)};
}

}  // namespace mmbo

#endif  // MMBO_ACQUISITION_HPP
