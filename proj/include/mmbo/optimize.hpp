#ifndef MMBO_OPTIMIZE_HPP
#define MMBO_OPTIMIZE_HPP

#include "mmbo/linalg.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace mmbo {

struct NelderMeadResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

/// Bound-constrained Nelder-Mead minimization. Trial points are clamped into
/// [lower, upper]; non-finite objective values are treated as +inf.
inline NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& objective, Vector start,
                                    const Vector& lower, const Vector& upper, double initial_step = 0.5,
                                    int max_evaluations = 400, double tolerance = 1e-9) {
  const Eigen::Index k = start.size();
  NelderMeadResult best;
  auto eval = [&](Vector& x) {
    x = x.cwiseMax(lower).cwiseMin(upper);
    const double v = objective(x);
    ++best.evaluations;
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Vector> simplex(static_cast<std::size_t>(k + 1), start);
  std::vector<double> values(static_cast<std::size_t>(k + 1));
  values[0] = eval(simplex[0]);
  for (Eigen::Index i = 0; i < k; ++i) {
    auto& p = simplex[static_cast<std::size_t>(i + 1)];
    p(i) += (p(i) + initial_step <= upper(i)) ? initial_step : -initial_step;
    values[static_cast<std::size_t>(i + 1)] = eval(p);
  }

  std::vector<std::size_t> order(simplex.size());
  while (best.evaluations < max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t lo = order.front();
    const std::size_t hi = order.back();
    const std::size_t second = order[order.size() - 2];
    if (std::isfinite(values[hi]) && std::abs(values[hi] - values[lo]) <= tolerance * (1.0 + std::abs(values[lo]))) {
      break;
    }

    Vector centroid = Vector::Zero(k);
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i != hi) centroid += simplex[i];
    }
    centroid /= static_cast<double>(k);

    Vector reflected = centroid + (centroid - simplex[hi]);
    const double fr = eval(reflected);
    if (fr < values[lo]) {
      Vector expanded = centroid + 2.0 * (centroid - simplex[hi]);
      const double fe = eval(expanded);
      if (fe < fr) {
        simplex[hi] = expanded;
        values[hi] = fe;
      } else {
        simplex[hi] = reflected;
        values[hi] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[hi] = reflected;
      values[hi] = fr;
      continue;
    }
    const bool outside = fr < values[hi];
    Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                : Vector(centroid + 0.5 * (simplex[hi] - centroid));
    const double fc = eval(contracted);
    if (fc < (outside ? fr : values[hi])) {
      simplex[hi] = contracted;
      values[hi] = fc;
      continue;
    }
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i == lo) continue;
      simplex[i] = simplex[lo] + 0.5 * (simplex[i] - simplex[lo]);
      values[i] = eval(simplex[i]);
    }
  }
  const auto it = std::min_element(values.begin(), values.end());
  best.x = simplex[static_cast<std::size_t>(it - values.begin())];
  best.value = *it;
  return best;
}

}  // namespace mmbo

#endif  // MMBO_OPTIMIZE_HPP
