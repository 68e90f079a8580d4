// SPDX-License-Identifier: Apache-2.0
//
// Gradient of one TOP1 term with respect to every model parameter.
//
// The graph behind the loss at a step of session t+1:
//
//   scores <- h_n <- ... <- h_1 <- h_0 = tanh(W U_t + b_0)
//   U_t = userGRU(U_{t-1}, context of session t)
//   context = last state of session t, or attention over its states
//   states of session t <- ... <- its own h_0 = tanh(W U_{t-1} + b_0)
//
// U_{t-1} is treated as a constant, so nothing flows into session t-1.

#pragma once

#include <span>
#include <vector>

#include "ahnqs/core/activations.hpp"
#include "ahnqs/core/gru.hpp"
#include "ahnqs/core/linalg.hpp"
#include "ahnqs/models/forward.hpp"
#include "ahnqs/models/params.hpp"
#include "ahnqs/training/top1.hpp"

namespace ahnqs {

/// Backpropagates through the recorded steps of one session, last to first.
/// `extra[j]`, when given, is added to dL/dh_j before step j is processed.
/// Returns dL/dh_0 and appends every input token to `touched`.
inline Vector backprop_trace(const GruParams &gru, const SessionTrace &trace, Vector dh,
                             std::span<const Vector> extra, GruParams &acc,
                             std::vector<TokenId> &touched) {
  for (std::size_t j = trace.steps.size(); j-- > 0;) {
    if (!extra.empty())
      add_in_place(dh, extra[j]);
    const auto &c = trace.steps[j];
    dh = gru_backward_accumulate(gru, c, dh, acc);
    if (c.token)
      touched.push_back(static_cast<TokenId>(*c.token));
  }
  return dh;
}

/// Through h_0 = tanh(W u + b_0); returns dL/dU (the dropout mask applied).
inline Vector backprop_init(const ModelParams &p, const SessionTrace &trace, const Vector &dh0,
                            ModelParams &grads) {
  Vector dpre(dh0.dim());
  for (std::size_t i = 0; i < dh0.dim(); ++i)
    dpre[i] = dh0[i] * (1.0 - trace.h0[i] * trace.h0[i]);
  add_outer(*grads.init_weight, dpre, trace.user_in);
  add_in_place(*grads.init_bias, dpre);
  Vector du = matvec_transposed(*p.init_weight, dpre);
  if (!trace.user_mask.empty())
    du = hadamard(du, trace.user_mask);
  return du;
}

/// Through U_t = userGRU(U_{t-1}, context) and the context of the finished
/// session, then back through that session to its h_0 and init projection.
inline void backprop_session_end(const Model &m, const SessionTrace &prev, const SessionEnd &end,
                                 const Vector &du, ModelParams &grads,
                                 std::vector<TokenId> &touched) {
  const auto &p = m.params;
  GruPreactGrads pre;
  gru_backward_accumulate(*p.user_gru, end.user_step, du, *grads.user_gru, &pre);
  const Vector dctx = gru_input_grad(*p.user_gru, pre);

  const std::size_t M = prev.steps.size();
  const std::size_t dh = m.config.hidden_dim;
  std::vector<Vector> extra(M, Vector(dh));
  if (m.config.kind == ModelKind::hnqs) {
    extra[M - 1] = dctx;
  } else {
    const Vector &u_prev = end.user_step.h_prev;
    Vector dalpha(M);
    for (std::size_t j = 0; j < M; ++j)
      dalpha[j] = dot(dctx, prev.steps[j].h_next);
    const Vector de = softmax_backward(end.attention, dalpha);
    const Vector query = matvec_transposed(*p.attention, u_prev); // W_a^T U
    for (std::size_t j = 0; j < M; ++j) {
      const Vector &hj = prev.steps[j].h_next;
      add_outer(*grads.attention, u_prev, hj, de[j]);
      add_in_place(extra[j], dctx, end.attention[j]);
      add_in_place(extra[j], query, de[j]);
    }
  }
  const Vector dh0 = backprop_trace(p.session_gru, prev, Vector(dh), extra, grads.session_gru,
                                    touched);
  if (!prev.truncated)
    backprop_init(p, prev, dh0, grads); // dL/dU_{t-1} is dropped here
}

/// Adds `weight` times the gradient of the TOP1 term for the slot's current
/// hidden state into `grads` and returns the (unweighted) loss. `hidden_mask`
/// is the inverted-dropout mask on h before the output projection (empty for
/// none). Token columns that may have received gradient are appended to
/// `touched`.
inline double accumulate_step_gradient(const Model &m, const SlotState &s, TokenId target,
                                       std::span<const TokenId> negatives,
                                       const Vector &hidden_mask, ModelParams &grads,
                                       std::vector<TokenId> &touched, double weight = 1.0) {
  const auto &p = m.params;
  const std::size_t dh = m.config.hidden_dim;
  const Vector hm = hidden_mask.empty() ? s.h : hadamard(s.h, hidden_mask);

  std::vector<TokenId> cand;
  cand.reserve(negatives.size() + 1);
  cand.push_back(target);
  cand.insert(cand.end(), negatives.begin(), negatives.end());
  const Vector scores = score_candidates(p, hm, cand);
  const std::span<const double> neg_scores(scores.values().subspan(1));
  const double loss = top1_loss(scores[0], neg_scores);
  const Top1Grad g = top1_grad(scores[0], neg_scores);

  Vector dhm(dh);
  for (std::size_t k = 0; k < cand.size(); ++k) {
    const double ds = (k == 0 ? g.positive : g.negatives[k - 1]) * weight;
    const double da = ds * (1.0 - scores[k] * scores[k]);
    const TokenId c = cand[k];
    for (std::size_t i = 0; i < dh; ++i) {
      grads.output(i, c) += da * hm[i];
      dhm[i] += da * p.output(i, c);
    }
    touched.push_back(c);
  }
  const Vector dh_n = hidden_mask.empty() ? dhm : hadamard(dhm, hidden_mask);

  const Vector dh0 =
      backprop_trace(p.session_gru, s.current, dh_n, {}, grads.session_gru, touched);
  if (!is_hierarchical(m.config.kind) || s.current.truncated)
    return loss;
  const Vector du = backprop_init(p, s.current, dh0, grads);
  if (s.previous && s.previous_end)
    backprop_session_end(m, *s.previous, *s.previous_end, du, grads, touched);
  return loss;
}

} // namespace ahnqs
