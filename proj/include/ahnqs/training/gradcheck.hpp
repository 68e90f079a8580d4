// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference validation of accumulate_step_gradient on a toy graph:
// two sessions of one user, a TOP1 term at every step, and a non-zero user
// state carried in from an earlier (untracked) session. Because the carried
// state is a constant, the truncated training graph and the full graph
// coincide, so central differences measure exactly what training uses.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ahnqs/core/gradcheck.hpp"
#include "ahnqs/core/random.hpp"
#include "ahnqs/models/forward.hpp"
#include "ahnqs/models/params.hpp"
#include "ahnqs/training/backward.hpp"
#include "ahnqs/training/optimizer.hpp"
#include "ahnqs/training/top1.hpp"

namespace ahnqs {

struct ToyGraph {
  std::size_t vocab_size = 7;
  std::size_t hidden_dim = 4;
  std::vector<std::vector<TokenId>> sessions = {{1, 4, 2, 6}, {3, 0, 5, 2}};
  std::uint64_t seed = 2024;
  double init_scale = 0.6; // parameters ~ U[-a, a]
  double eps = 1e-5;
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double attention_grad_norm = 0.0; // 0 for models without attention
  std::size_t checked = 0;
};

namespace detail {

struct ToyInstance {
  Model model;
  Vector carried_user;
  std::vector<std::vector<std::vector<TokenId>>> negatives; // [session][step]
};

inline ToyInstance make_toy(ModelKind kind, const ToyGraph &toy) {
  ToyInstance t;
  t.model.config = {toy.vocab_size, toy.hidden_dim, kind};
  t.model.params = ModelParams::zeros(t.model.config);
  Rng rng = derive_rng(toy.seed, 0x9c);
  t.model.params.for_each(
      [&](const ParamView &v) { uniform_fill(v.values, rng, toy.init_scale); });
  t.carried_user = Vector(toy.hidden_dim);
  uniform_fill(t.carried_user.values(), rng, 0.8);
  for (const auto &s : toy.sessions) {
    auto &per_step = t.negatives.emplace_back();
    for (std::size_t n = 0; n + 1 < s.size(); ++n) {
      std::vector<TokenId> neg;
      while (neg.size() < 2) {
        const auto c = static_cast<TokenId>(uniform_index(rng, toy.vocab_size));
        if (c != s[n + 1] && std::find(neg.begin(), neg.end(), c) == neg.end())
          neg.push_back(c);
      }
      per_step.push_back(neg);
    }
  }
  return t;
}

/// Runs the toy forward; with `grads` set, accumulates the analytic gradient.
inline double run_toy(const ToyInstance &t, const ToyGraph &toy, ModelParams *grads) {
  const Model &m = t.model;
  SlotState s;
  s.user = t.carried_user;
  begin_session(m, s);
  double total = 0.0;
  std::vector<TokenId> touched;
  for (std::size_t k = 0; k < toy.sessions.size(); ++k) {
    if (k > 0) {
      finish_session(m, s);
      begin_session(m, s);
    }
    const auto &q = toy.sessions[k];
    for (std::size_t n = 0; n < q.size(); ++n) {
      advance(m, s, q[n]);
      if (n + 1 == q.size())
        break;
      const auto &neg = t.negatives[k][n];
      if (grads) {
        total += accumulate_step_gradient(m, s, q[n + 1], neg, Vector{}, *grads, touched);
      } else {
        std::vector<TokenId> cand{q[n + 1]};
        cand.insert(cand.end(), neg.begin(), neg.end());
        const Vector sc = score_candidates(m.params, s.h, cand);
        total += top1_loss(sc[0], sc.values().subspan(1));
      }
    }
  }
  return total;
}

} // namespace detail

/// Compares every parameter's analytic gradient on the toy graph with central
/// differences and reports the worst relative error.
inline GradientCheckReport check_model_gradients(ModelKind kind, const ToyGraph &toy = {}) {
  auto t = detail::make_toy(kind, toy);
  ModelParams grads = ModelParams::zeros(t.model.config);
  detail::run_toy(t, toy, &grads);

  GradientCheckReport report;
  if (grads.attention)
    report.attention_grad_norm = std::sqrt(squared_norm(grads.attention->values()));
  auto pv = param_views(t.model.params);
  auto gv = param_views(grads);
  bool first = true;
  for (std::size_t k = 0; k < pv.size(); ++k) {
    const auto r = finite_diff_check([&] { return detail::run_toy(t, toy, nullptr); },
                                     pv[k].values, gv[k].values, toy.eps);
    report.checked += pv[k].values.size();
    if (first || r.max_relative_error > report.max_relative_error) {
      first = false;
      report.max_relative_error = r.max_relative_error;
      report.worst_param = pv[k].name;
      report.worst_index = r.worst_index;
      report.worst_analytic = r.worst_analytic;
      report.worst_numeric = r.worst_numeric;
    }
  }
  return report;
}

} // namespace ahnqs
