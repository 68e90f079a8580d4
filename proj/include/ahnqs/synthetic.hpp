// SPDX-License-Identifier: Apache-2.0
//
// Generated corpus in which the successor of one ambiguous query depends on
// a latent per-user preference.
//
// Every user belongs to one of `groups` groups. Each session is
//
//   [A, c_g[0], ..., c_g[L-1], noise...]
//
// where A (token 0) is shared by everybody, c_g is the group's fixed chain
// of tokens, L is drawn from [1, chain_length] and a tail of uniformly drawn
// noise tokens follows. Given only the prefix [A], the next query is c_g[0]
// for an unknown g; the user's earlier sessions reveal g.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ahnqs/core/random.hpp"
#include "ahnqs/evaluation.hpp"
#include "ahnqs/querylog/types.hpp"

namespace ahnqs {

struct SyntheticConfig {
  std::size_t users = 200;
  std::size_t groups = 20;
  std::size_t chain_length = 3;
  std::size_t noise_tokens = 20;
  std::size_t max_noise_tail = 3;
  std::size_t train_sessions = 5; // per user
  std::size_t test_sessions = 1;  // per user, after the training sessions
  std::uint64_t seed = 1;

  void validate() const {
    if (users < 1 || groups < 2 || chain_length < 1 || train_sessions < 1 || test_sessions < 1)
      throw std::invalid_argument("synthetic corpus needs users >= 1, groups >= 2, "
                                  "chain_length >= 1 and at least one train and test session");
    if (max_noise_tail > 0 && noise_tokens == 0)
      throw std::invalid_argument("a noise tail needs noise_tokens >= 1");
  }

  std::size_t vocab_size() const { return 1 + groups * chain_length + noise_tokens; }
};

struct SyntheticCorpus {
  Histories train;
  Histories test;
  std::vector<std::size_t> group_of_user;
  std::size_t vocab_size = 0;
  TokenId ambiguous = 0;

  /// Prediction points whose prefix is exactly the ambiguous query.
  bool is_ambiguous(const PredictionPoint &p) const {
    return p.prefix_length == 1 && p.input_token == ambiguous;
  }
  /// First chain token of group g, the answer after A for its users.
  TokenId group_head(std::size_t g, std::size_t chain_length) const {
    return static_cast<TokenId>(1 + g * chain_length);
  }
};

inline SyntheticCorpus generate_synthetic(const SyntheticConfig &cfg) {
  cfg.validate();
  Rng rng = derive_rng(cfg.seed, 0x5e7);
  SyntheticCorpus out;
  out.vocab_size = cfg.vocab_size();
  const auto noise_base = static_cast<TokenId>(1 + cfg.groups * cfg.chain_length);
  std::uint64_t next_session = 0;

  for (std::size_t u = 0; u < cfg.users; ++u) {
    const std::size_t g = u % cfg.groups; // balanced groups
    out.group_of_user.push_back(g);
    UserHistory tr{"user" + std::to_string(u), {}};
    UserHistory te{tr.user_id, {}};
    const std::size_t total = cfg.train_sessions + cfg.test_sessions;
    for (std::size_t k = 0; k < total; ++k) {
      Session s;
      s.session_id = next_session++;
      s.queries.push_back(out.ambiguous);
      const std::size_t len = 1 + uniform_index(rng, cfg.chain_length);
      for (std::size_t i = 0; i < len; ++i)
        s.queries.push_back(static_cast<TokenId>(1 + g * cfg.chain_length + i));
      const std::size_t tail = uniform_index(rng, cfg.max_noise_tail + 1);
      for (std::size_t i = 0; i < tail; ++i)
        s.queries.push_back(noise_base + static_cast<TokenId>(uniform_index(rng, cfg.noise_tokens)));
      const Timestamp start = static_cast<Timestamp>(k) * 86400;
      for (std::size_t i = 0; i < s.queries.size(); ++i)
        s.timestamps.push_back(start + static_cast<Timestamp>(60 * i));
      (k < cfg.train_sessions ? tr : te).sessions.push_back(std::move(s));
    }
    out.train.push_back(std::move(tr));
    out.test.push_back(std::move(te));
  }
  return out;
}

} // namespace ahnqs
