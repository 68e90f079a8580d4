// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ahnqs {

using TokenId = std::uint32_t;
using Timestamp = std::int64_t; // seconds since the Unix epoch, UTC

/// Input file could not be interpreted.
class FormatError : public std::runtime_error {
public:
  FormatError(const std::string &what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class EmptyCorpusError : public std::runtime_error {
public:
  EmptyCorpusError() : std::runtime_error("empty corpus") {}
  explicit EmptyCorpusError(const std::string &what)
      : std::runtime_error("empty corpus: " + what) {}
};

/// One line of an AOL-style log.
struct RawRecord {
  std::string user_id;
  std::string query_text; // normalized
  Timestamp timestamp = 0;
  std::optional<int> click_rank;
  std::optional<std::string> click_url;
  std::size_t line = 0;
};

/// A query together with the time it was issued.
struct TimedQuery {
  TokenId query = 0;
  Timestamp timestamp = 0;
};

/// One session. Before vocabulary remapping `queries` index the interning
/// table; afterwards they are vocabulary ids.
struct Session {
  std::uint64_t session_id = 0;
  std::vector<TokenId> queries;
  std::vector<Timestamp> timestamps;

  std::size_t size() const noexcept { return queries.size(); }
  Timestamp start() const { return timestamps.front(); }

  friend bool operator==(const Session &, const Session &) = default;
};

struct UserHistory {
  std::string user_id;
  std::vector<Session> sessions;

  friend bool operator==(const UserHistory &, const UserHistory &) = default;
};

using Histories = std::vector<UserHistory>;

/// Interned normalized query strings.
class QueryTable {
public:
  TokenId intern(const std::string &text) {
    auto [it, inserted] = index_.try_emplace(text, static_cast<TokenId>(texts_.size()));
    if (inserted)
      texts_.push_back(text);
    return it->second;
  }
  const std::string &text(TokenId id) const { return texts_.at(id); }
  std::size_t size() const noexcept { return texts_.size(); }

private:
  std::vector<std::string> texts_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Bijection between retained query strings and ids in [0, V).
class Vocabulary {
public:
  Vocabulary() = default;

  /// Appends a token; ids are assigned densely in insertion order.
  TokenId add(std::string text, std::uint64_t count) {
    if (token_to_id_.contains(text))
      throw std::invalid_argument("duplicate vocabulary entry: " + text);
    const auto id = static_cast<TokenId>(id_to_token_.size());
    token_to_id_.emplace(text, id);
    id_to_token_.push_back(std::move(text));
    counts_.push_back(count);
    return id;
  }

  std::size_t size() const noexcept { return id_to_token_.size(); }
  const std::string &token(TokenId id) const { return id_to_token_.at(id); }
  std::uint64_t count(TokenId id) const { return counts_.at(id); }
  std::optional<TokenId> find(const std::string &text) const {
    auto it = token_to_id_.find(text);
    if (it == token_to_id_.end())
      return std::nullopt;
    return it->second;
  }

private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::vector<std::uint64_t> counts_;
};

struct SplitStats {
  std::uint64_t queries = 0;
  std::uint64_t unique_queries = 0;
  std::uint64_t sessions = 0;
  std::uint64_t users = 0;
  double avg_queries_per_session = 0.0;
  double avg_sessions_per_user = 0.0;
};

struct CorpusStats {
  SplitStats train;
  SplitStats test;
  std::optional<SplitStats> valid;
};

inline std::size_t count_sessions(const Histories &hs) {
  std::size_t n = 0;
  for (const auto &u : hs)
    n += u.sessions.size();
  return n;
}

} // namespace ahnqs
