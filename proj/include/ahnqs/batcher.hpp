// SPDX-License-Identifier: Apache-2.0
//
// Session-parallel mini-batching keyed by user. Each slot walks one user's
// sessions in chronological order, emitting one (input, target) pair per
// step; when a user is exhausted the slot is refilled with the next user in a
// seeded random order.

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "ahnqs/core/random.hpp"
#include "ahnqs/querylog/types.hpp"

namespace ahnqs {

struct BatchSlot {
  std::size_t user = 0;          // index into the histories
  std::size_t session_index = 0; // index into that user's sessions
  std::size_t step = 0;          // position of `input` within the session
  TokenId input = 0;
  TokenId target = 0;
  bool session_start = false;
  bool user_start = false;

  friend bool operator==(const BatchSlot &, const BatchSlot &) = default;
};

struct BatchStep {
  std::vector<BatchSlot> slots; // one per slot, meaningful where active
  std::vector<bool> active;

  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
  }
  friend bool operator==(const BatchStep &, const BatchStep &) = default;
};

/// Lazily produces the batch steps of one epoch. Sessions with fewer than two
/// queries contribute no pairs and are skipped.
class BatchSchedule {
public:
  BatchSchedule(const Histories &histories, std::size_t batch_size, std::uint64_t seed,
                bool shuffle_users = true)
      : histories_(&histories), cursors_(batch_size) {
    if (batch_size < 1)
      throw std::invalid_argument("batch size must be at least 1");
    for (std::size_t u = 0; u < histories.size(); ++u)
      if (first_session_from(u, 0))
        order_.push_back(u);
    if (shuffle_users) {
      Rng rng = derive_rng(seed, 0x5c4ed);
      shuffle(order_.begin(), order_.end(), rng);
    }
  }

  std::size_t batch_size() const noexcept { return cursors_.size(); }

  std::optional<BatchStep> next() {
    BatchStep step;
    step.slots.resize(cursors_.size());
    step.active.assign(cursors_.size(), false);
    bool any = false;
    for (std::size_t i = 0; i < cursors_.size(); ++i) {
      auto &cur = cursors_[i];
      if (cur && !advance(*cur))
        cur.reset();
      if (!cur)
        cur = refill();
      if (!cur)
        continue;
      const auto &session = (*histories_)[cur->user].sessions[cur->session];
      auto &slot = step.slots[i];
      slot.user = cur->user;
      slot.session_index = cur->session;
      slot.step = cur->step;
      slot.input = session.queries[cur->step];
      slot.target = session.queries[cur->step + 1];
      slot.session_start = cur->step == 0;
      slot.user_start = cur->step == 0 && cur->first_session;
      step.active[i] = true;
      any = true;
    }
    if (!any)
      return std::nullopt;
    return step;
  }

private:
  struct Cursor {
    std::size_t user = 0;
    std::size_t session = 0;
    std::size_t step = 0;
    bool first_session = true;
  };

  std::optional<std::size_t> first_session_from(std::size_t user, std::size_t from) const {
    const auto &sessions = (*histories_)[user].sessions;
    for (std::size_t s = from; s < sessions.size(); ++s)
      if (sessions[s].size() >= 2)
        return s;
    return std::nullopt;
  }

  std::optional<Cursor> refill() {
    if (next_user_ >= order_.size())
      return std::nullopt;
    const std::size_t user = order_[next_user_++];
    return Cursor{user, *first_session_from(user, 0), 0, true};
  }

  /// Moves to the next pair; false when the user is exhausted.
  bool advance(Cursor &c) {
    const auto &session = (*histories_)[c.user].sessions[c.session];
    if (c.step + 2 < session.size()) {
      ++c.step;
      return true;
    }
    auto nxt = first_session_from(c.user, c.session + 1);
    if (!nxt)
      return false;
    c.session = *nxt;
    c.step = 0;
    c.first_session = false;
    return true;
  }

  const Histories *histories_;
  std::vector<std::optional<Cursor>> cursors_;
  std::vector<std::size_t> order_;
  std::size_t next_user_ = 0;
};

/// Materializes a whole epoch.
inline std::vector<BatchStep> schedule(const Histories &histories, std::size_t batch_size,
                                       std::uint64_t seed, bool shuffle_users = true) {
  BatchSchedule stream(histories, batch_size, seed, shuffle_users);
  std::vector<BatchStep> steps;
  while (auto s = stream.next())
    steps.push_back(std::move(*s));
  return steps;
}

/// In-batch negatives for one slot: the targets of the other active slots,
/// without duplicates and without the slot's own target. Topped up with
/// uniform vocabulary samples (excluding the target and chosen negatives)
/// until there are `min_negatives`, capped at vocab_size - 1.
inline std::vector<TokenId> negatives_for(const BatchStep &step, std::size_t slot_index,
                                          std::size_t vocab_size, std::size_t min_negatives,
                                          Rng &rng) {
  const TokenId target = step.slots.at(slot_index).target;
  std::vector<TokenId> out;
  auto present = [&](TokenId t) {
    return t == target || std::find(out.begin(), out.end(), t) != out.end();
  };
  for (std::size_t j = 0; j < step.slots.size(); ++j) {
    if (j == slot_index || !step.active[j])
      continue;
    if (!present(step.slots[j].target))
      out.push_back(step.slots[j].target);
  }
  const std::size_t want = std::min(min_negatives, vocab_size > 0 ? vocab_size - 1 : 0);
  while (out.size() < want) {
    const auto t = static_cast<TokenId>(uniform_index(rng, vocab_size));
    if (!present(t))
      out.push_back(t);
  }
  return out;
}

/// Debug dump: one line per active slot.
inline void write_schedule_tsv(std::ostream &out, const Histories &histories,
                               std::span<const BatchStep> steps) {
  out << "step\tslot\tuser_id\tsession_id\tposition\tinput\ttarget\tsession_start\tuser_start\n";
  for (std::size_t k = 0; k < steps.size(); ++k)
    for (std::size_t i = 0; i < steps[k].slots.size(); ++i) {
      if (!steps[k].active[i])
        continue;
      const auto &s = steps[k].slots[i];
      out << k << '\t' << i << '\t' << histories[s.user].user_id << '\t'
          << histories[s.user].sessions[s.session_index].session_id << '\t' << s.step << '\t'
          << s.input << '\t' << s.target << '\t' << s.session_start << '\t' << s.user_start
          << '\n';
    }
}

} // namespace ahnqs
