// SPDX-License-Identifier: Apache-2.0
//
// TOP1 pairwise ranking loss for one positive score s_i against negatives s_j:
//
//   L = (1/N) sum_j [ sigmoid(s_j - s_i) + sigmoid(s_j^2) ]

#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "ahnqs/core/activations.hpp"

namespace ahnqs {

inline double top1_loss(double positive, std::span<const double> negatives) {
  if (negatives.empty())
    throw std::invalid_argument("top1 loss needs at least one negative score");
  double sum = 0.0;
  for (double s : negatives)
    sum += sigmoid(s - positive) + sigmoid(s * s);
  return sum / static_cast<double>(negatives.size());
}

struct Top1Grad {
  double positive = 0.0;
  std::vector<double> negatives;
};

inline Top1Grad top1_grad(double positive, std::span<const double> negatives) {
  if (negatives.empty())
    throw std::invalid_argument("top1 loss needs at least one negative score");
  const double inv_n = 1.0 / static_cast<double>(negatives.size());
  Top1Grad g;
  g.negatives.resize(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    const double s = negatives[j];
    const double pair = sigmoid_grad(s - positive);
    g.positive -= pair * inv_n;
    g.negatives[j] = (pair + 2.0 * s * sigmoid_grad(s * s)) * inv_n;
  }
  return g;
}

} // namespace ahnqs
