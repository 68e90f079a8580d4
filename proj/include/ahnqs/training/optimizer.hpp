// SPDX-License-Identifier: Apache-2.0
//
// AdaGrad with momentum:
//
//   G += g*g;  a = g / (sqrt(G) + eps);  v = m*v + a;  p -= lr*v
//
// Matrices whose columns are indexed by token id can be updated sparsely:
// with momentum 0, a column whose gradient is zero does not change, so only
// the columns used in the batch need visiting. With momentum > 0 every entry
// carries velocity and the update is always dense.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ahnqs/models/params.hpp"
#include "ahnqs/querylog/types.hpp"

namespace ahnqs {

inline constexpr double kAdagradEpsilon = 1e-6;

struct OptState {
  ModelParams squared;  // G, accumulated squared gradients
  ModelParams velocity; // v
  double epsilon = kAdagradEpsilon;

  static OptState for_config(const ModelConfig &cfg) {
    return {ModelParams::zeros(cfg), ModelParams::zeros(cfg), kAdagradEpsilon};
  }
};

inline std::vector<ParamView> param_views(ModelParams &p) {
  std::vector<ParamView> out;
  p.for_each([&](const ParamView &v) { out.push_back(v); });
  return out;
}

/// Calls f(flat_index) for every entry the update has to visit: all entries,
/// or for token-indexed matrices only the listed columns.
template <class F>
void for_each_entry(const ParamView &v, const std::vector<TokenId> *columns, F &&f) {
  if (!columns || !v.vocab_columns) {
    for (std::size_t i = 0; i < v.values.size(); ++i)
      f(i);
    return;
  }
  for (std::size_t r = 0; r < v.rows; ++r)
    for (TokenId c : *columns)
      f(r * v.cols + c);
}

/// Sorted, de-duplicated copy of the touched token columns.
inline std::vector<TokenId> unique_columns(std::vector<TokenId> cols) {
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  return cols;
}

/// One optimizer step. `columns`, when given, must list (sorted, unique) every
/// token column with a non-zero gradient; it is ignored when momentum > 0.
inline void adagrad_momentum_step(OptState &opt, ModelParams &params, const ModelParams &grads,
                                  double lr, double momentum,
                                  const std::vector<TokenId> *columns = nullptr) {
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("momentum must lie in [0, 1)");
  if (momentum > 0.0)
    columns = nullptr;
  auto pv = param_views(params);
  auto gv = param_views(const_cast<ModelParams &>(grads));
  auto sv = param_views(opt.squared);
  auto vv = param_views(opt.velocity);
  if (pv.size() != gv.size() || pv.size() != sv.size() || pv.size() != vv.size())
    throw DimensionError("optimizer state does not match the model parameters");
  for (std::size_t k = 0; k < pv.size(); ++k) {
    if (pv[k].values.size() != gv[k].values.size() || pv[k].values.size() != sv[k].values.size())
      throw DimensionError("optimizer shape mismatch for " + pv[k].name);
    for_each_entry(gv[k], columns, [&](std::size_t i) {
      if (!std::isfinite(gv[k].values[i]))
        throw std::domain_error("non-finite gradient in " + gv[k].name);
    });
  }
  for (std::size_t k = 0; k < pv.size(); ++k) {
    auto p = pv[k].values, g = gv[k].values, G = sv[k].values, v = vv[k].values;
    for_each_entry(gv[k], columns, [&](std::size_t i) {
      G[i] += g[i] * g[i];
      const double adapted = g[i] / (std::sqrt(G[i]) + opt.epsilon);
      v[i] = momentum * v[i] + adapted;
      p[i] -= lr * v[i];
    });
  }
}

/// Zeroes a gradient buffer, visiting only `columns` of token-indexed
/// matrices when given.
inline void zero_gradients(ModelParams &grads, const std::vector<TokenId> *columns = nullptr) {
  for (auto &v : param_views(grads))
    for_each_entry(v, columns, [&](std::size_t i) { v.values[i] = 0.0; });
}

/// Global L2 norm over the visited entries.
inline double gradient_norm(ModelParams &grads, const std::vector<TokenId> *columns = nullptr) {
  double sq = 0.0;
  for (auto &v : param_views(grads))
    for_each_entry(v, columns, [&](std::size_t i) { sq += v.values[i] * v.values[i]; });
  return std::sqrt(sq);
}

/// Rescales the gradient to norm `max_norm` when it is larger. Returns the
/// norm before clipping.
inline double clip_gradients(ModelParams &grads, double max_norm,
                             const std::vector<TokenId> *columns = nullptr) {
  const double norm = gradient_norm(grads, columns);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto &v : param_views(grads))
      for_each_entry(v, columns, [&](std::size_t i) { v.values[i] *= scale; });
  }
  return norm;
}

} // namespace ahnqs
