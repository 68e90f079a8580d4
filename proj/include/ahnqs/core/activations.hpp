// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ahnqs/core/linalg.hpp"

namespace ahnqs {

/// Logistic sigmoid. Branches on sign so exp() never overflows.
inline double sigmoid(double x) noexcept {
  if (x >= 0.0)
    return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// d/dx sigmoid(x), written in terms of the sigmoid value.
inline double sigmoid_grad(double x) noexcept {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

inline Vector sigmoid(const Vector &v) {
  Vector out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i)
    out[i] = sigmoid(v[i]);
  return out;
}

/// Max-shifted softmax.
inline Vector softmax(const Vector &v) {
  if (v.empty())
    throw std::invalid_argument("empty softmax input");
  const double peak = *std::max_element(v.begin(), v.end());
  Vector out(v.dim());
  double total = 0.0;
  for (std::size_t i = 0; i < v.dim(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (double &x : out)
    x /= total;
  return out;
}

/// Backward of softmax: given y = softmax(x) and dL/dy, returns dL/dx.
inline Vector softmax_backward(const Vector &y, const Vector &dy) {
  const double weighted = dot(y, dy);
  Vector dx(y.dim());
  for (std::size_t i = 0; i < y.dim(); ++i)
    dx[i] = y[i] * (dy[i] - weighted);
  return dx;
}

} // namespace ahnqs
