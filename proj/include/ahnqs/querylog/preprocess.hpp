// SPDX-License-Identifier: Apache-2.0
//
// Sessionization, frequency filtering, temporal splitting and vocabulary
// construction for parsed query logs.

#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "ahnqs/querylog/parse.hpp"
#include "ahnqs/querylog/types.hpp"

namespace ahnqs {

inline constexpr Timestamp kSecondsPerDay = 86400;

struct SessionizeOptions {
  Timestamp gap_secs = 1800;
  bool collapse_duplicates = true;
};

namespace detail {

/// Collapses runs of identical consecutive queries to their first element.
inline void collapse_runs(Session &s) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < s.queries.size(); ++i) {
    if (out > 0 && s.queries[out - 1] == s.queries[i])
      continue;
    s.queries[out] = s.queries[i];
    s.timestamps[out] = s.timestamps[i];
    ++out;
  }
  s.queries.resize(out);
  s.timestamps.resize(out);
}

} // namespace detail

/// Splits one user's time-ordered queries into sessions. A new session starts
/// whenever the gap to the previous retained query strictly exceeds
/// `gap_secs`. With `collapse_duplicates`, a query equal to the previous
/// retained one within the gap is merged into it (first timestamp kept), so
/// repeats do not extend a session.
inline std::vector<Session> sessionize(std::span<const TimedQuery> records,
                                       const SessionizeOptions &opts = {}) {
  if (opts.gap_secs <= 0)
    throw std::invalid_argument("sessionize: gap_secs must be positive");
  std::vector<Session> sessions;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto &r = records[i];
    if (i > 0 && r.timestamp < records[i - 1].timestamp)
      throw std::invalid_argument("sessionize: records are not sorted by timestamp");
    if (sessions.empty() || r.timestamp - sessions.back().timestamps.back() > opts.gap_secs) {
      sessions.emplace_back();
    } else if (opts.collapse_duplicates && sessions.back().queries.back() == r.query) {
      continue;
    }
    sessions.back().queries.push_back(r.query);
    sessions.back().timestamps.push_back(r.timestamp);
  }
  return sessions;
}

/// Groups records by user (users in order of first appearance), interns the
/// query strings, sorts each user's queries by time and sessionizes them.
inline Histories build_histories(std::span<const RawRecord> records, QueryTable &table,
                                 const SessionizeOptions &opts = {}) {
  std::unordered_map<std::string, std::size_t> user_index;
  std::vector<std::pair<std::string, std::vector<TimedQuery>>> per_user;
  for (const auto &r : records) {
    auto [it, inserted] = user_index.try_emplace(r.user_id, per_user.size());
    if (inserted)
      per_user.emplace_back(r.user_id, std::vector<TimedQuery>{});
    per_user[it->second].second.push_back({table.intern(r.query_text), r.timestamp});
  }
  Histories out;
  out.reserve(per_user.size());
  for (auto &[user, queries] : per_user) {
    std::stable_sort(queries.begin(), queries.end(),
                     [](const TimedQuery &a, const TimedQuery &b) { return a.timestamp < b.timestamp; });
    out.push_back({user, sessionize(queries, opts)});
  }
  return out;
}

struct FilterOptions {
  std::size_t min_query_count = 20;
  std::size_t min_session_len = 6;
  std::size_t min_user_sessions = 5;
  bool collapse_duplicates = true;
};

/// Applies the three frequency rules repeatedly until none removes anything:
/// (1) queries with fewer than `min_query_count` occurrences, (2) sessions
/// shorter than `min_session_len`, (3) users with fewer than
/// `min_user_sessions` sessions.
inline Histories filter_corpus(Histories histories, const FilterOptions &opts) {
  if (opts.min_query_count < 1 || opts.min_session_len < 1 || opts.min_user_sessions < 1)
    throw std::invalid_argument("filter_corpus: thresholds must be at least 1");

  bool changed = true;
  while (changed) {
    changed = false;

    std::unordered_map<TokenId, std::size_t> counts;
    for (const auto &u : histories)
      for (const auto &s : u.sessions)
        for (auto q : s.queries)
          ++counts[q];

    for (auto &u : histories) {
      for (auto &s : u.sessions) {
        const std::size_t before = s.size();
        std::size_t out = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
          if (counts[s.queries[i]] < opts.min_query_count)
            continue;
          s.queries[out] = s.queries[i];
          s.timestamps[out] = s.timestamps[i];
          ++out;
        }
        s.queries.resize(out);
        s.timestamps.resize(out);
        if (opts.collapse_duplicates)
          detail::collapse_runs(s);
        changed |= s.size() != before;
      }
      const std::size_t before = u.sessions.size();
      std::erase_if(u.sessions, [&](const Session &s) { return s.size() < opts.min_session_len; });
      changed |= u.sessions.size() != before;
    }
    const std::size_t users_before = histories.size();
    std::erase_if(histories,
                  [&](const UserHistory &u) { return u.sessions.size() < opts.min_user_sessions; });
    changed |= histories.size() != users_before;
  }
  if (histories.empty())
    throw EmptyCorpusError("no users survive filtering");
  return histories;
}

/// Numbers sessions 0, 1, 2, ... in user order then time order.
inline void assign_session_ids(Histories &histories) {
  std::uint64_t next = 0;
  for (auto &u : histories)
    for (auto &s : u.sessions)
      s.session_id = next++;
}

inline Timestamp latest_timestamp(const Histories &histories) {
  Timestamp latest = std::numeric_limits<Timestamp>::min();
  for (const auto &u : histories)
    for (const auto &s : u.sessions)
      if (!s.timestamps.empty())
        latest = std::max(latest, s.timestamps.back());
  return latest;
}

inline std::unordered_set<TokenId> token_set(const Histories &histories) {
  std::unordered_set<TokenId> set;
  for (const auto &u : histories)
    for (const auto &s : u.sessions)
      set.insert(s.queries.begin(), s.queries.end());
  return set;
}

struct TimeSplit {
  Histories train;
  Histories test;
  Timestamp cutoff = 0;
};

/// Sessions starting at or after `cutoff` form the test side. Test queries
/// never seen on the training side are removed, and test sessions left with
/// fewer than two queries are dropped.
inline TimeSplit split_at(const Histories &histories, Timestamp cutoff,
                          bool collapse_duplicates = true) {
  TimeSplit split;
  split.cutoff = cutoff;
  for (const auto &u : histories) {
    UserHistory tr{u.user_id, {}}, te{u.user_id, {}};
    for (const auto &s : u.sessions)
      (s.start() >= cutoff ? te : tr).sessions.push_back(s);
    if (!tr.sessions.empty())
      split.train.push_back(std::move(tr));
    if (!te.sessions.empty())
      split.test.push_back(std::move(te));
  }

  const auto known = token_set(split.train);
  for (auto &u : split.test) {
    for (auto &s : u.sessions) {
      std::size_t out = 0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (!known.contains(s.queries[i]))
          continue;
        s.queries[out] = s.queries[i];
        s.timestamps[out] = s.timestamps[i];
        ++out;
      }
      s.queries.resize(out);
      s.timestamps.resize(out);
      if (collapse_duplicates)
        detail::collapse_runs(s);
    }
    std::erase_if(u.sessions, [](const Session &s) { return s.size() < 2; });
  }
  std::erase_if(split.test, [](const UserHistory &u) { return u.sessions.empty(); });
  return split;
}

/// Holds out the final `test_window_days` of the log.
inline TimeSplit split_by_time(const Histories &histories, std::size_t test_window_days,
                               bool collapse_duplicates = true) {
  if (test_window_days < 1)
    throw std::invalid_argument("split_by_time: test window must be at least one day");
  const Timestamp cutoff =
      latest_timestamp(histories) - static_cast<Timestamp>(test_window_days) * kSecondsPerDay;
  return split_at(histories, cutoff, collapse_duplicates);
}

inline SplitStats compute_split_stats(const Histories &histories) {
  SplitStats st;
  std::unordered_set<TokenId> unique;
  for (const auto &u : histories) {
    if (u.sessions.empty())
      continue;
    ++st.users;
    for (const auto &s : u.sessions) {
      ++st.sessions;
      st.queries += s.size();
      unique.insert(s.queries.begin(), s.queries.end());
    }
  }
  st.unique_queries = unique.size();
  if (st.sessions)
    st.avg_queries_per_session = static_cast<double>(st.queries) / static_cast<double>(st.sessions);
  if (st.users)
    st.avg_sessions_per_user = static_cast<double>(st.sessions) / static_cast<double>(st.users);
  return st;
}

inline CorpusStats compute_stats(const Histories &train, const Histories &test) {
  return {compute_split_stats(train), compute_split_stats(test), std::nullopt};
}

/// Builds the vocabulary over `source`: ids ordered by descending count, ties
/// by ascending text. Returns the vocabulary and the table-id -> vocab-id map.
inline std::pair<Vocabulary, std::unordered_map<TokenId, TokenId>>
build_vocabulary(const Histories &source, const QueryTable &table) {
  std::unordered_map<TokenId, std::uint64_t> counts;
  for (const auto &u : source)
    for (const auto &s : u.sessions)
      for (auto q : s.queries)
        ++counts[q];
  std::vector<std::pair<TokenId, std::uint64_t>> order(counts.begin(), counts.end());
  std::sort(order.begin(), order.end(), [&](const auto &a, const auto &b) {
    if (a.second != b.second)
      return a.second > b.second;
    return table.text(a.first) < table.text(b.first);
  });
  Vocabulary vocab;
  std::unordered_map<TokenId, TokenId> remap;
  for (const auto &[raw, count] : order)
    remap.emplace(raw, vocab.add(table.text(raw), count));
  return {std::move(vocab), std::move(remap)};
}

inline void remap_tokens(Histories &histories, const std::unordered_map<TokenId, TokenId> &remap) {
  for (auto &u : histories)
    for (auto &s : u.sessions)
      for (auto &q : s.queries)
        q = remap.at(q);
}

struct PreprocessOptions {
  SessionizeOptions sessionize;
  FilterOptions filter;
  std::size_t test_window_days = 30;
  std::size_t valid_window_days = 30; // 0 disables the validation split
};

struct PreprocessedCorpus {
  Vocabulary vocab;
  Histories train;
  Histories valid;
  Histories test;
  CorpusStats stats;
};

/// Full pipeline from parsed records to tokenized splits. The vocabulary and
/// the training statistics cover the whole training range (train plus
/// validation).
inline PreprocessedCorpus preprocess(std::span<const RawRecord> records,
                                     PreprocessOptions opts = {}) {
  opts.filter.collapse_duplicates = opts.sessionize.collapse_duplicates;
  QueryTable table;
  Histories histories = build_histories(records, table, opts.sessionize);
  histories = filter_corpus(std::move(histories), opts.filter);
  assign_session_ids(histories);

  const bool collapse = opts.sessionize.collapse_duplicates;
  TimeSplit outer = split_by_time(histories, opts.test_window_days, collapse);
  if (outer.train.empty())
    throw EmptyCorpusError("no sessions before the test window");

  PreprocessedCorpus corpus;
  auto [vocab, remap] = build_vocabulary(outer.train, table);
  corpus.vocab = std::move(vocab);
  corpus.test = std::move(outer.test);
  // Training statistics cover the whole training range, validation included.
  corpus.stats = compute_stats(outer.train, corpus.test);

  if (opts.valid_window_days > 0) {
    TimeSplit inner =
        split_at(outer.train,
                 outer.cutoff - static_cast<Timestamp>(opts.valid_window_days) * kSecondsPerDay,
                 collapse);
    corpus.train = std::move(inner.train);
    corpus.valid = std::move(inner.test);
  } else {
    corpus.train = std::move(outer.train);
  }
  if (corpus.train.empty())
    throw EmptyCorpusError("no sessions before the validation window");

  remap_tokens(corpus.train, remap);
  remap_tokens(corpus.valid, remap);
  remap_tokens(corpus.test, remap);

  if (opts.valid_window_days > 0)
    corpus.stats.valid = compute_split_stats(corpus.valid);
  return corpus;
}

} // namespace ahnqs
