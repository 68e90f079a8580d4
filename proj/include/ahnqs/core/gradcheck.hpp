// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

#include "ahnqs/core/linalg.hpp"

namespace ahnqs {

/// Gradients smaller than this are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-4;

inline double gradient_relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / scale;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central-difference check of `analytic` against `loss()`, perturbing each
/// entry of `params` in place. `loss` must read `params` through whatever
/// object owns them; each entry is restored before the next one is touched.
template <class LossFn>
GradCheckResult finite_diff_check(LossFn &&loss, std::span<double> params,
                                  std::span<const double> analytic, double eps) {
  if (!(eps > 0.0))
    throw std::invalid_argument("finite_diff_check: eps must be positive");
  if (params.size() != analytic.size())
    throw DimensionError("finite_diff_check: " + std::to_string(params.size()) +
                         " parameters vs " + std::to_string(analytic.size()) + " gradients");
  auto evaluate = [&] {
    const double v = loss();
    if (!std::isfinite(v))
      throw std::domain_error("finite_diff_check: loss is not finite");
    return v;
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = evaluate();
    params[i] = saved - eps;
    const double down = evaluate();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = gradient_relative_error(analytic[i], numeric);
    if (i == 0 || err > result.max_relative_error)
      result = {err, i, analytic[i], numeric};
  }
  return result;
}

} // namespace ahnqs
