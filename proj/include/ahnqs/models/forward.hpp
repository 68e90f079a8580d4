// SPDX-License-Identifier: Apache-2.0
//
// Stateful forward computation for one stream of sessions (one batch slot or
// one user being replayed). The state keeps enough of the forward pass to
// backpropagate through the current session and, for the hierarchical
// models, through the end of the previous one.

#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ahnqs/core/activations.hpp"
#include "ahnqs/core/gru.hpp"
#include "ahnqs/core/linalg.hpp"
#include "ahnqs/core/random.hpp"
#include "ahnqs/models/params.hpp"
#include "ahnqs/querylog/types.hpp"

namespace ahnqs {

/// Longest run of session states kept for attention and backpropagation.
inline constexpr std::size_t kMaxTape = 256;

struct SessionTrace {
  Vector user_in;   // U as fed to the init projection (after dropout); empty for nqs
  Vector user_mask; // inverted-dropout multipliers applied to U; empty when none
  Vector h0;
  std::deque<GruStepCache> steps; // the most recent kMaxTape steps
  bool truncated = false;         // earlier steps were discarded

  bool empty() const noexcept { return steps.empty(); }
  const Vector &last_state() const { return steps.back().h_next; }
};

/// Result of folding a finished session into the user state.
struct SessionEnd {
  Vector context;         // S_t (hnqs) or C_t (ahnqs)
  Vector energies;        // e_j, ahnqs only
  Vector attention;       // alpha_j, ahnqs only
  GruStepCache user_step; // h_prev = previous user state, h_next = new one
};

struct SlotState {
  Vector h;    // current session-level hidden state
  Vector user; // U; the previous user-level state when the current session ends
  SessionTrace current;
  std::optional<SessionTrace> previous; // last finished session (hierarchical models)
  std::optional<SessionEnd> previous_end;
};

inline void check_token(const ModelConfig &cfg, TokenId token) {
  if (token >= cfg.vocab_size)
    throw std::out_of_range("unknown token id " + std::to_string(token) +
                            " (vocabulary size " + std::to_string(cfg.vocab_size) + ")");
}

/// h_0 = tanh(W U + b_0).
inline Vector init_next_session(const ModelParams &p, const Vector &user_state) {
  if (!p.init_weight || !p.init_bias)
    throw std::logic_error("init_next_session needs a hierarchical model");
  Vector pre = matvec(*p.init_weight, user_state);
  add_in_place(pre, *p.init_bias);
  return tanh(pre);
}

/// Starts a new session. With `dropout_rng` set and a non-zero user dropout,
/// an inverted-dropout mask is drawn for U.
inline void begin_session(const Model &m, SlotState &s, Rng *dropout_rng = nullptr) {
  const std::size_t dh = m.config.hidden_dim;
  s.current = SessionTrace{};
  if (is_hierarchical(m.config.kind)) {
    if (s.user.dim() != dh)
      s.user = Vector(dh);
    s.current.user_in = s.user;
    const double rate = m.config.dropout_user;
    if (dropout_rng && rate > 0.0) {
      s.current.user_mask = Vector(dh);
      for (std::size_t i = 0; i < dh; ++i) {
        s.current.user_mask[i] = uniform01(*dropout_rng) < rate ? 0.0 : 1.0 / (1.0 - rate);
        s.current.user_in[i] *= s.current.user_mask[i];
      }
    }
    s.current.h0 = init_next_session(m.params, s.current.user_in);
  } else {
    s.current.h0 = Vector(dh);
  }
  s.h = s.current.h0;
}

/// Resets everything carried across sessions and starts the user's first one.
inline void begin_user(const Model &m, SlotState &s, Rng *dropout_rng = nullptr) {
  s.user = Vector(m.config.hidden_dim);
  s.previous.reset();
  s.previous_end.reset();
  begin_session(m, s, dropout_rng);
}

/// Feeds one query into the session GRU and returns the new hidden state.
inline const Vector &advance(const Model &m, SlotState &s, TokenId token) {
  check_token(m.config, token);
  s.current.steps.push_back(gru_forward_token(m.params.session_gru, token, s.h));
  if (s.current.steps.size() > kMaxTape) {
    s.current.steps.pop_front();
    s.current.truncated = true;
  }
  s.h = s.current.steps.back().h_next;
  return s.h;
}

/// tanh(h W_out) over the whole vocabulary.
inline Vector score_all(const ModelParams &p, const Vector &h) {
  return tanh(matvec_transposed(p.output, h));
}

/// Scores for a subset of candidates, in the given order.
inline Vector score_candidates(const ModelParams &p, const Vector &h,
                               std::span<const TokenId> candidates) {
  Vector out(candidates.size());
  const std::size_t dh = p.output.rows();
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dh; ++i)
      acc += h[i] * p.output(i, candidates[k]);
    out[k] = std::tanh(acc);
  }
  return out;
}

/// One query in, scores for the next query out.
inline Vector step(const Model &m, SlotState &s, TokenId token) {
  return score_all(m.params, advance(m, s, token));
}

namespace detail {
inline void require_states(const SessionTrace &t) {
  if (t.empty())
    throw std::logic_error("session produced no states");
}
} // namespace detail

/// User GRU step on the last session state S_t.
inline SessionEnd end_session_hnqs(const ModelParams &p, const SessionTrace &t,
                                   const Vector &user) {
  detail::require_states(t);
  if (!p.user_gru)
    throw std::logic_error("end_session_hnqs needs a hierarchical model");
  SessionEnd e;
  e.context = t.last_state();
  e.user_step = gru_forward(*p.user_gru, e.context, user);
  return e;
}

/// e_j = U^T W_a h_j, alpha = softmax(e), C_t = sum_j alpha_j h_j, then a
/// user GRU step on C_t.
inline SessionEnd end_session_ahnqs(const ModelParams &p, const SessionTrace &t,
                                    const Vector &user) {
  detail::require_states(t);
  if (!p.user_gru || !p.attention)
    throw std::logic_error("end_session_ahnqs needs an attention model");
  const std::size_t M = t.steps.size();
  const Vector query = matvec_transposed(*p.attention, user); // W_a^T U
  SessionEnd e;
  e.energies = Vector(M);
  for (std::size_t j = 0; j < M; ++j)
    e.energies[j] = dot(query, t.steps[j].h_next);
  e.attention = softmax(e.energies);
  e.context = Vector(user.dim());
  for (std::size_t j = 0; j < M; ++j)
    add_in_place(e.context, t.steps[j].h_next, e.attention[j]);
  e.user_step = gru_forward(*p.user_gru, e.context, user);
  return e;
}

/// Closes the current session. For the hierarchical models the user state
/// advances and the finished session is kept for backpropagation; returns the
/// session end (nullptr for nqs).
inline const SessionEnd *finish_session(const Model &m, SlotState &s) {
  if (!is_hierarchical(m.config.kind))
    return nullptr;
  SessionEnd e = m.config.kind == ModelKind::ahnqs ? end_session_ahnqs(m.params, s.current, s.user)
                                                   : end_session_hnqs(m.params, s.current, s.user);
  s.user = e.user_step.h_next;
  s.previous = std::move(s.current);
  s.current = SessionTrace{};
  s.previous_end = std::move(e);
  return &*s.previous_end;
}

/// Ranking order used everywhere: higher score first, then lower token id.
inline bool ranks_before(const Vector &scores, TokenId a, TokenId b) {
  return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
}

/// 1-based rank of `target` under ranks_before, in O(V).
inline std::size_t rank_of(const Vector &scores, TokenId target) {
  std::size_t rank = 1;
  for (TokenId j = 0; j < scores.dim(); ++j)
    if (j != target && ranks_before(scores, j, target))
      ++rank;
  return rank;
}

inline std::vector<TokenId> top_k(const Vector &scores, std::size_t k) {
  std::vector<TokenId> ids(scores.dim());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](TokenId a, TokenId b) { return ranks_before(scores, a, b); });
  ids.resize(k);
  return ids;
}

struct RankedSuggestions {
  Vector scores;
  std::vector<TokenId> top;
};

/// Replays `history` (earlier sessions of the same user, oldest first) into
/// the user state, then `prefix` into the session GRU, and ranks the next
/// query. Dropout is never applied here.
inline RankedSuggestions suggest(const Model &m, std::span<const TokenId> prefix,
                                 std::span<const std::vector<TokenId>> history, std::size_t k) {
  if (prefix.empty())
    throw std::invalid_argument("suggest needs a non-empty session prefix");
  if (k < 1)
    throw std::invalid_argument("suggest needs k >= 1");
  for (const auto &session : history)
    for (TokenId t : session)
      check_token(m.config, t);
  for (TokenId t : prefix)
    check_token(m.config, t);

  SlotState s;
  begin_user(m, s);
  if (is_hierarchical(m.config.kind))
    for (const auto &session : history) {
      if (session.empty())
        continue;
      for (TokenId t : session)
        advance(m, s, t);
      finish_session(m, s);
      begin_session(m, s);
    }
  for (TokenId t : prefix)
    advance(m, s, t);
  RankedSuggestions out;
  out.scores = score_all(m.params, s.h);
  out.top = top_k(out.scores, k);
  return out;
}

} // namespace ahnqs
