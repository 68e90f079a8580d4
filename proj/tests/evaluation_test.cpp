// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "ahnqs/adj.hpp"
#include "ahnqs/evaluation.hpp"
#include "support/brute_force.hpp"
#include "support/convert.hpp"

namespace {

using namespace ahnqs;
using namespace brute_force;

Histories make(const std::vector<std::pair<std::string, std::vector<std::vector<TokenId>>>> &users,
               std::uint64_t first_sid = 0) {
  Histories hs;
  std::uint64_t sid = first_sid;
  for (const auto &[id, sessions] : users) {
    UserHistory u{id, {}};
    for (const auto &qs : sessions) {
      Session s;
      s.session_id = sid++;
      s.queries = qs;
      s.timestamps.assign(qs.size(), 0);
      u.sessions.push_back(s);
    }
    hs.push_back(u);
  }
  return hs;
}

Histories random_corpus(std::uint64_t seed, std::size_t vocab, std::size_t max_pairs) {
  Rng rng = derive_rng(seed, 9);
  std::vector<std::pair<std::string, std::vector<std::vector<TokenId>>>> users;
  std::size_t pairs = 0;
  for (int u = 0; pairs < max_pairs - 10; ++u) {
    std::vector<std::vector<TokenId>> sessions(1 + uniform_index(rng, 4));
    for (auto &s : sessions) {
      s.resize(1 + uniform_index(rng, 7));
      for (auto &q : s)
        q = static_cast<TokenId>(uniform_index(rng, vocab));
      pairs += s.size() - 1;
    }
    users.push_back({"u" + std::to_string(u), sessions});
    if (pairs + 30 > max_pairs)
      break;
  }
  return make(users);
}

// ---- ADJ ----

TEST(Adj, HandCount) {
  auto hs = make({{"x", {{0, 1}, {0, 1}, {0, 2}}}});
  auto idx = AdjacencyIndex::build(hs);
  EXPECT_EQ(idx.successors(0)[0], (Successor{1, 2}));
  EXPECT_EQ(idx.successors(0)[1], (Successor{2, 1}));
  EXPECT_EQ(suggest_adj(idx, 0, 2), (std::vector<TokenId>{1, 2}));
  EXPECT_TRUE(suggest_adj(idx, 7, 5).empty());
}

TEST(Adj, EmptyAndSingletonSessions) {
  EXPECT_TRUE(AdjacencyIndex::build({}).empty());
  EXPECT_TRUE(AdjacencyIndex::build(make({{"x", {{3}}}})).empty());
}

TEST(Adj, TiesByTokenIdAndNoCrossSessionPairs) {
  auto hs = make({{"x", {{5, 3}, {5, 1}, {4}, {2}}}});
  auto idx = AdjacencyIndex::build(hs);
  EXPECT_EQ(suggest_adj(idx, 5, 3), (std::vector<TokenId>{1, 3}));
  EXPECT_TRUE(idx.successors(4).empty());
  EXPECT_TRUE(idx.successors(3).empty()); // 3 ends a session, 5 starts the next
}

TEST(Adj, TsvRoundTrip) {
  auto idx = AdjacencyIndex::build(random_corpus(1, 12, 300));
  std::stringstream io;
  idx.write_tsv(io);
  EXPECT_EQ(AdjacencyIndex::read_tsv(io), idx);
  std::istringstream bad("1\t2\t0\n");
  EXPECT_THROW(AdjacencyIndex::read_tsv(bad), FormatError);
  std::istringstream dup("1\t2\t3\n1\t2\t4\n");
  EXPECT_THROW(AdjacencyIndex::read_tsv(dup), FormatError);
}

TEST(AdjProperty, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto hs = random_corpus(seed, 3 + seed % 15, 1000);
    const auto pairs = all_pairs(hs);
    ASSERT_LE(pairs.size(), 1000u);
    const auto idx = AdjacencyIndex::build(hs);
    EXPECT_EQ(idx.total_count(), pairs.size());
    for (TokenId q = 0; q < 20; ++q)
      for (std::size_t k : {1u, 3u, 10u}) {
        EXPECT_EQ(suggest_adj(idx, q, k), oracle_suggest(pairs, q, k)) << "seed " << seed;
        for (TokenId t = 0; t < 20; ++t)
          EXPECT_EQ(idx.rank_of(q, t), oracle_rank(pairs, q, t));
      }
  }
}

TEST(AdjProperty, SessionOrderIndependent) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto hs = random_corpus(seed, 8, 400);
    const auto idx = AdjacencyIndex::build(hs);
    Rng rng(seed);
    std::vector<Session> all;
    for (const auto &u : hs)
      all.insert(all.end(), u.sessions.begin(), u.sessions.end());
    ahnqs::shuffle(all.begin(), all.end(), rng);
    Histories shuffled{{"one", all}};
    EXPECT_EQ(AdjacencyIndex::build(shuffled), idx);
  }
}

// ---- metrics ----

std::vector<PredictionPoint> points_with_ranks(const std::vector<std::optional<std::size_t>> &r,
                                               std::size_t k) {
  std::vector<PredictionPoint> out;
  for (const auto &x : r) {
    PredictionPoint p;
    p.prefix_length = 1;
    p.session_length = 2;
    p.rank = x && *x <= k ? x : std::nullopt;
    out.push_back(p);
  }
  return out;
}

TEST(Metrics, Examples) {
  auto all_first = compute_metrics(points_with_ranks({1, 1, 1}, 10), 10);
  EXPECT_EQ(all_first.mrr, 1.0);
  EXPECT_EQ(all_first.recall, 1.0);
  auto mixed = compute_metrics(points_with_ranks({1, 2, 4}, 10), 10);
  EXPECT_NEAR(mixed.mrr, 0.583333, 1e-6);
  EXPECT_NEAR(mixed.mrr, 1.75 / 3.0, 1e-15);
  EXPECT_EQ(mixed.recall, 1.0);
  auto beyond = compute_metrics(points_with_ranks({11}, 10), 10);
  EXPECT_EQ(beyond.mrr, 0.0);
  EXPECT_EQ(beyond.recall, 0.0);
  EXPECT_EQ(compute_metrics({}, 10).count, 0u);
}

TEST(MetricsProperty, BruteForceAndOrdering) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::optional<std::size_t>> ranks(1 + uniform_index(rng, 40));
    for (auto &r : ranks)
      if (uniform_index(rng, 5) != 0)
        r = 1 + uniform_index(rng, 25);
    const std::size_t k = 1 + uniform_index(rng, 20);
    const auto got = compute_metrics(points_with_ranks(ranks, k), k);
    const auto [mrr, recall] = oracle_metrics(ranks, k);
    EXPECT_DOUBLE_EQ(got.mrr, mrr);
    EXPECT_DOUBLE_EQ(got.recall, recall);
    EXPECT_LE(got.mrr, got.recall);
    EXPECT_GE(got.mrr, 0.0);
    EXPECT_LE(got.recall, 1.0);
  }
}

TEST(Buckets, Boundaries) {
  EXPECT_EQ(bucket_for_length(2), Bucket::short_ctx);
  EXPECT_EQ(bucket_for_length(3), Bucket::medium_ctx);
  EXPECT_EQ(bucket_for_length(4), Bucket::medium_ctx);
  EXPECT_EQ(bucket_for_length(5), Bucket::long_ctx);
  EXPECT_EQ(bucket_for_length(7), Bucket::long_ctx);
  EXPECT_THROW(bucket_for_length(1), std::invalid_argument);
  EXPECT_EQ(parse_bucket_basis("session"), BucketBasis::session);
  EXPECT_THROW(parse_bucket_basis("query"), std::invalid_argument);
}

TEST(Buckets, PopulationsPartitionPoints) {
  const auto test = random_corpus(4, 6, 600);
  const auto idx = AdjacencyIndex::build(random_corpus(5, 6, 600));
  const auto points = collect_points([&] { return AdjRanker(idx); }, test, {}, 10);
  for (auto basis : {BucketBasis::context, BucketBasis::session}) {
    const auto parts = bucketize(points, basis);
    EXPECT_EQ(parts[0].size() + parts[1].size() + parts[2].size(), points.size());
    const auto r = summarize(points, 10, basis);
    EXPECT_EQ(r.buckets[0].count + r.buckets[1].count + r.buckets[2].count, r.overall.count);
  }
  for (const auto &p : points) {
    EXPECT_GE(p.context_length(), 2u);
    EXPECT_LE(p.context_length(), p.session_length);
  }
}

// ---- evaluation over rankers ----

TEST(EvaluateAdj, MatchesScanCountRankOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto train = random_corpus(seed, 7, 900);
    const auto test = random_corpus(seed + 100, 7, 100);
    const auto pairs = all_pairs(train);
    const auto idx = AdjacencyIndex::build(train);
    for (std::size_t k : {1u, 3u, 10u}) {
      std::vector<std::optional<std::size_t>> expected;
      std::map<std::size_t, std::vector<std::optional<std::size_t>>> by_bucket;
      for (const auto &u : test)
        for (const auto &s : u.sessions)
          for (std::size_t n = 0; n + 1 < s.queries.size(); ++n) {
            auto r = oracle_rank(pairs, s.queries[n], s.queries[n + 1]);
            expected.push_back(r);
            const std::size_t ctx = n + 2;
            by_bucket[ctx == 2 ? 0 : ctx <= 4 ? 1 : 2].push_back(r);
          }
      const auto report = evaluate_adj(idx, test, k);
      const auto [mrr, recall] = oracle_metrics(expected, k);
      EXPECT_DOUBLE_EQ(report.overall.mrr, mrr);
      EXPECT_DOUBLE_EQ(report.overall.recall, recall);
      EXPECT_EQ(report.overall.count, expected.size());
      for (auto &[b, ranks] : by_bucket) {
        const auto [bm, br] = oracle_metrics(ranks, k);
        EXPECT_DOUBLE_EQ(report.buckets[b].mrr, bm);
        EXPECT_DOUBLE_EQ(report.buckets[b].recall, br);
      }
    }
  }
}

TEST(Evaluate, EmptyTestSplitIsAnError) {
  const auto idx = AdjacencyIndex::build({});
  EXPECT_THROW(evaluate_adj(idx, {}, 10), std::invalid_argument);
  EXPECT_THROW(evaluate_adj(idx, make({{"x", {{1}}}}), 10), std::invalid_argument);
  EXPECT_THROW(evaluate_adj(idx, make({{"x", {{1, 2}}}}), 0), std::invalid_argument);
}

/// Ranks whatever follows the prefix according to a fixed table.
struct TableRanker {
  const std::map<TokenId, std::size_t> *table;
  void start_user() {}
  void start_session() {}
  void observe(TokenId) {}
  void end_session() {}
  std::optional<std::size_t> rank(TokenId t, std::size_t k) const {
    const auto r = table->at(t);
    return r <= k ? std::optional(r) : std::nullopt;
  }
};

TEST(Evaluate, HandRankedPoints) {
  const std::map<TokenId, std::size_t> table = {{1, 1}, {2, 2}, {3, 4}, {4, 11}};
  const auto test = make({{"u", {{0, 1, 2, 3, 4}}}});
  const auto r = evaluate([&] { return TableRanker{&table}; }, test, {}, 10);
  EXPECT_EQ(r.overall.count, 4u);
  EXPECT_NEAR(r.overall.mrr, 1.75 / 4.0, 1e-15);
  EXPECT_EQ(r.overall.recall, 0.75);
  EXPECT_EQ(r.bucket(Bucket::short_ctx).count, 1u);
  EXPECT_EQ(r.bucket(Bucket::medium_ctx).count, 2u);
  EXPECT_EQ(r.bucket(Bucket::long_ctx).count, 1u);
  EXPECT_EQ(r.bucket(Bucket::long_ctx).recall, 0.0);
  const auto by_session = evaluate([&] { return TableRanker{&table}; }, test, {}, 10,
                                   BucketBasis::session);
  EXPECT_EQ(by_session.bucket(Bucket::long_ctx).count, 4u);
}

TEST(Evaluate, ModelPointsMatchSuggest) {
  auto m = testing_support::random_model(ModelKind::ahnqs, 9, 4, 3);
  const auto context = make({{"a", {{0, 1, 2}, {3, 4}}}, {"b", {{5, 6}}}});
  const auto test = make({{"a", {{7, 8, 1}, {2, 3}}}, {"c", {{4, 4, 5}}}}, 50);
  const auto points = collect_points([&] { return ModelRanker(m); }, test, context, 9);
  ASSERT_EQ(points.size(), 5u);
  // second test session of "a": history = both context sessions + first test session
  const std::vector<std::vector<TokenId>> history = {{0, 1, 2}, {3, 4}, {7, 8, 1}};
  const std::vector<TokenId> prefix = {2};
  const auto ref = suggest(m, prefix, history, 9);
  EXPECT_EQ(points[2].user_id, "a");
  EXPECT_EQ(points[2].session_id, 51u);
  EXPECT_EQ(points[2].input_token, 2u);
  EXPECT_EQ(points[2].target, 3u);
  EXPECT_EQ(points[2].rank, rank_of(ref.scores, 3));
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  auto m = testing_support::random_model(ModelKind::hnqs, 7, 3, 4);
  const auto test = random_corpus(8, 7, 400);
  const auto context = random_corpus(9, 7, 400);
  auto one = collect_points([&] { return ModelRanker(m); }, test, context, 5, 1);
  auto four = collect_points([&] { return ModelRanker(m); }, test, context, 5, 4);
  ASSERT_EQ(one.size(), four.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].user_id, four[i].user_id);
    EXPECT_EQ(one[i].rank, four[i].rank);
  }
}

TEST(MergeHistories, AppendsByUser) {
  const auto a = make({{"x", {{1, 2}}}, {"y", {{3, 4}}}});
  const auto b = make({{"z", {{5, 6}}}, {"x", {{7, 8}}}}, 10);
  const auto m = merge_histories(a, b);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0].user_id, "x");
  ASSERT_EQ(m[0].sessions.size(), 2u);
  EXPECT_EQ(m[0].sessions[1].session_id, 11u);
  EXPECT_EQ(m[2].user_id, "z");
}

TEST(Reports, JsonAndTsv) {
  const auto r = summarize(points_with_ranks({1, 2, 4}, 10), 10);
  const auto j = to_json(r);
  EXPECT_EQ(j["k"], 10);
  EXPECT_NEAR(j["overall"]["mrr@10"].get<double>(), 1.75 / 3, 1e-15);
  EXPECT_EQ(j["buckets"]["short"]["count"], 3);
  std::ostringstream out;
  write_report_tsv(out, "adj", r);
  const auto text = out.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 4 * 3);
  EXPECT_NE(text.find("adj\toverall\trecall@10\t1\n"), std::string::npos);
}

// ---- state export ----

TEST(ExportStates, ZeroModelGivesZeros) {
  Model m{{6, 4, ModelKind::hnqs}, ModelParams::zeros({6, 4, ModelKind::hnqs})};
  const auto hs = make({{"u", {{0, 1, 2}, {3, 4}}}});
  const auto sm = export_session_states(m, hs, "u", 1);
  EXPECT_EQ(sm.values, Matrix(4, 2));
  EXPECT_EQ(export_user_states(m, hs, "u").values, Matrix(4, 2));
}

TEST(ExportStates, ShapeAndReplayEquivalence) {
  auto m = testing_support::random_model(ModelKind::ahnqs, 8, 100, 5, 0.2);
  const auto hs = make({{"u", {{0, 1}, {2, 3, 4, 5, 6}}}});
  const auto sm = export_session_states(m, hs, "u", 1);
  EXPECT_EQ(sm.values.rows(), 100u);
  EXPECT_EQ(sm.values.cols(), 5u);
  EXPECT_EQ(sm.column_labels.front(), "q1");

  SlotState s;
  begin_user(m, s);
  for (TokenId t : {0u, 1u})
    step(m, s, t);
  finish_session(m, s);
  const Vector u1 = s.user;
  begin_session(m, s);
  for (std::size_t n = 0; n < 5; ++n) {
    step(m, s, static_cast<TokenId>(2 + n));
    for (std::size_t r = 0; r < 100; ++r)
      EXPECT_EQ(sm.values(r, n), s.h[r]);
  }
  finish_session(m, s);
  const auto us = export_user_states(m, hs, "u");
  ASSERT_EQ(us.values.cols(), 2u);
  for (std::size_t r = 0; r < 100; ++r) {
    EXPECT_EQ(us.values(r, 0), u1[r]);
    EXPECT_EQ(us.values(r, 1), s.user[r]);
  }
}

TEST(ExportStates, Errors) {
  auto m = testing_support::random_model(ModelKind::nqs, 8, 3, 6);
  const auto hs = make({{"u", {{0, 1}}}});
  EXPECT_THROW(export_session_states(m, hs, "nobody", 0), std::invalid_argument);
  EXPECT_THROW(export_session_states(m, hs, "u", 42), std::invalid_argument);
  EXPECT_THROW(export_user_states(m, hs, "u"), std::invalid_argument);
}

TEST(ExportStates, CsvLayout) {
  StateMatrix sm{Matrix(2, 2, std::vector<double>{0.5, -0.25, 0.0, 1.0}), {"q1", "q2"}};
  std::ostringstream out;
  write_state_csv(out, sm);
  EXPECT_EQ(out.str(), "unit,q1,q2\nh0,0.5,-0.25\nh1,0,1\n");
}

} // namespace
