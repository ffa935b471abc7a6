#ifndef MMBO_CANDIDATES_HPP
#define MMBO_CANDIDATES_HPP

#include "mmbo/kernel.hpp"

#include <boost/random/sobol.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace mmbo {

enum class CandidateOrigin { sobol, uniform, local_perturbation };

struct CandidateSet {
  Matrix points;  // one candidate per row, inside the box
  CandidateOrigin origin = CandidateOrigin::sobol;
};

/// First `n` points of a d-dimensional Sobol sequence in [0, 1)^d. A nonzero
/// seed applies a Cranley-Patterson rotation (a uniform shift modulo 1), which
/// keeps the low-discrepancy structure while decorrelating runs.
inline Matrix sobol_unit(Eigen::Index n, Eigen::Index d, std::uint64_t seed = 0) {
  if (d < 1) throw std::invalid_argument("sobol_unit: dimension must be positive");
  boost::random::sobol engine(static_cast<std::size_t>(d));
  Vector shift = Vector::Zero(d);
  if (seed != 0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index j = 0; j < d; ++j) shift(j) = u(rng);
  }
  Matrix out(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double v = std::ldexp(static_cast<double>(engine()), -64) + shift(j);
      out(i, j) = v - std::floor(v);
    }
  }
  return out;
}

inline CandidateSet sobol_candidates(const Box& box, Eigen::Index n, std::uint64_t seed = 0) {
  if (n < 1) throw std::invalid_argument("sobol_candidates: budget must be at least 1");
  return {box.rows_from_unit(sobol_unit(n, box.dims(), seed)), CandidateOrigin::sobol};
}

inline CandidateSet uniform_candidates(const Box& box, Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix unit(n, box.dims());
  for (Eigen::Index i = 0; i < unit.size(); ++i) unit.data()[i] = u(rng);
  return {box.rows_from_unit(unit), CandidateOrigin::uniform};
}

/// Gaussian perturbations of `center` with SD `relative_sd` box widths,
/// clamped to the box.
inline CandidateSet local_perturbations(const Box& box, const Vector& center, Eigen::Index n, double relative_sd,
                                        std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, relative_sd);
  const Vector w = box.widths();
  Matrix pts(n, box.dims());
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector p = center;
    for (Eigen::Index j = 0; j < p.size(); ++j) p(j) += g(rng) * w(j);
    pts.row(i) = box.clamp(p).transpose();
  }
  return {pts, CandidateOrigin::local_perturbation};
}

}  // namespace mmbo

#endif  // MMBO_CANDIDATES_HPP
