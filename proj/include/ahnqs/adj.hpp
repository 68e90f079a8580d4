// SPDX-License-Identifier: Apache-2.0
//
// Adjacency co-occurrence baseline: the candidates for the next query are the
// observed successors of the current query in training sessions, ranked by
// count (descending) and then token id (ascending).

#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ahnqs/querylog/corpus_io.hpp"
#include "ahnqs/querylog/types.hpp"

namespace ahnqs {

struct Successor {
  TokenId token = 0;
  std::uint64_t count = 0;

  friend bool operator==(const Successor &, const Successor &) = default;
};

class AdjacencyIndex {
public:
  /// Counts every within-session adjacent pair.
  static AdjacencyIndex build(const Histories &train) {
    std::map<TokenId, std::map<TokenId, std::uint64_t>> counts;
    for (const auto &u : train)
      for (const auto &s : u.sessions)
        for (std::size_t i = 0; i + 1 < s.queries.size(); ++i)
          ++counts[s.queries[i]][s.queries[i + 1]];
    AdjacencyIndex idx;
    for (const auto &[q, succ] : counts)
      for (const auto &[t, c] : succ)
        idx.insert(q, t, c);
    idx.sort_lists();
    return idx;
  }

  bool empty() const noexcept { return lists_.empty(); }
  std::size_t query_count() const noexcept { return lists_.size(); }

  /// Successors of `query` in ranking order; empty when unseen.
  std::span<const Successor> successors(TokenId query) const {
    auto it = lists_.find(query);
    if (it == lists_.end())
      return {};
    return it->second;
  }

  std::vector<TokenId> suggest(TokenId query, std::size_t k) const {
    auto list = successors(query);
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < list.size() && i < k; ++i)
      out.push_back(list[i].token);
    return out;
  }

  /// 1-based position of `target` among the successors of `query`, or
  /// nothing when the pair was never observed.
  std::optional<std::size_t> rank_of(TokenId query, TokenId target) const {
    auto list = successors(query);
    for (std::size_t i = 0; i < list.size(); ++i)
      if (list[i].token == target)
        return i + 1;
    return std::nullopt;
  }

  std::uint64_t total_count() const {
    std::uint64_t n = 0;
    for (const auto &[q, list] : lists_)
      for (const auto &s : list)
        n += s.count;
    return n;
  }

  /// `query_id <TAB> successor_id <TAB> count`, queries ascending, each list
  /// in ranking order.
  void write_tsv(std::ostream &out) const {
    for (const auto &[q, list] : lists_)
      for (const auto &s : list)
        out << q << '\t' << s.token << '\t' << s.count << '\n';
  }

  static AdjacencyIndex read_tsv(std::istream &in) {
    AdjacencyIndex idx;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty())
        continue;
      auto f = detail::split_tabs(line);
      if (f.size() != 3)
        throw FormatError("expected 3 tab-separated fields", line_no);
      const auto q = detail::parse_number<TokenId>(f[0], line_no, "query id");
      const auto t = detail::parse_number<TokenId>(f[1], line_no, "successor id");
      const auto c = detail::parse_number<std::uint64_t>(f[2], line_no, "count");
      if (c < 1)
        throw FormatError("count must be at least 1", line_no);
      for (const auto &s : idx.lists_[q])
        if (s.token == t)
          throw FormatError("duplicate pair " + std::string(f[0]) + " -> " + std::string(f[1]),
                            line_no);
      idx.insert(q, t, c);
    }
    idx.sort_lists();
    return idx;
  }

  friend bool operator==(const AdjacencyIndex &, const AdjacencyIndex &) = default;

private:
  void insert(TokenId q, TokenId t, std::uint64_t c) { lists_[q].push_back({t, c}); }

  void sort_lists() {
    for (auto &[q, list] : lists_)
      std::sort(list.begin(), list.end(), [](const Successor &a, const Successor &b) {
        return a.count > b.count || (a.count == b.count && a.token < b.token);
      });
  }

  std::map<TokenId, std::vector<Successor>> lists_;
};

inline std::vector<TokenId> suggest_adj(const AdjacencyIndex &index, TokenId query,
                                        std::size_t k) {
  return index.suggest(query, k);
}

} // namespace ahnqs
