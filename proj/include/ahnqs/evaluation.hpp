// SPDX-License-Identifier: Apache-2.0
//
// Next-query ranking evaluation. Every test session is fed one query at a
// time; after each query the ranker is asked for the rank of the true next
// query. Hierarchical models first replay the user's earlier sessions, so the
// very first prediction of a session already sees the user state.

#pragma once

#include <array>
#include <atomic>
#include <concepts>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "ahnqs/adj.hpp"
#include "ahnqs/models.hpp"
#include "ahnqs/querylog/types.hpp"

namespace ahnqs {

struct PredictionPoint {
  std::string user_id;
  std::uint64_t session_id = 0;
  std::size_t prefix_length = 0;  // queries given so far
  std::size_t session_length = 0; // queries in the whole test session
  TokenId input_token = 0;        // the last query of the prefix
  TokenId target = 0;
  std::optional<std::size_t> rank; // absent when beyond K or unranked

  std::size_t context_length() const noexcept { return prefix_length + 1; }
};

enum class Bucket : std::uint8_t { short_ctx = 0, medium_ctx = 1, long_ctx = 2 };
inline constexpr std::array<Bucket, 3> kBuckets = {Bucket::short_ctx, Bucket::medium_ctx,
                                                   Bucket::long_ctx};

inline std::string_view to_string(Bucket b) {
  switch (b) {
  case Bucket::short_ctx:
    return "short";
  case Bucket::medium_ctx:
    return "medium";
  case Bucket::long_ctx:
    return "long";
  }
  return "unknown";
}

/// short = 2, medium = 3..4, long >= 5. Lengths below 2 cannot occur for a
/// prediction point and are rejected.
inline Bucket bucket_for_length(std::size_t length) {
  if (length < 2)
    throw std::invalid_argument("bucket length must be at least 2, got " +
                                std::to_string(length));
  if (length == 2)
    return Bucket::short_ctx;
  if (length <= 4)
    return Bucket::medium_ctx;
  return Bucket::long_ctx;
}

/// What "length" a point is bucketed by: the evaluation context (prefix plus
/// the predicted query) or the whole test session.
enum class BucketBasis : std::uint8_t { context, session };

inline BucketBasis parse_bucket_basis(std::string_view s) {
  if (s == "context")
    return BucketBasis::context;
  if (s == "session")
    return BucketBasis::session;
  throw std::invalid_argument("unknown bucket basis '" + std::string(s) +
                              "' (expected context or session)");
}

inline Bucket bucket_of(const PredictionPoint &p, BucketBasis basis = BucketBasis::context) {
  return bucket_for_length(basis == BucketBasis::context ? p.context_length() : p.session_length);
}

struct MetricRow {
  double mrr = 0.0;
  double recall = 0.0;
  std::size_t count = 0;
};

/// MRR@K and Recall@K with the truncated convention (0 beyond K). An empty
/// point set yields zeros.
inline MetricRow compute_metrics(std::span<const PredictionPoint> points, std::size_t k) {
  MetricRow row;
  row.count = points.size();
  if (points.empty())
    return row;
  double rr = 0.0;
  std::size_t hits = 0;
  for (const auto &p : points)
    if (p.rank && *p.rank <= k) {
      ++hits;
      rr += 1.0 / static_cast<double>(*p.rank);
    }
  row.mrr = rr / static_cast<double>(points.size());
  row.recall = static_cast<double>(hits) / static_cast<double>(points.size());
  return row;
}

struct EvalReport {
  std::size_t k = 10;
  BucketBasis basis = BucketBasis::context;
  MetricRow overall;
  std::array<MetricRow, 3> buckets{};

  const MetricRow &bucket(Bucket b) const { return buckets[static_cast<std::size_t>(b)]; }
};

inline std::array<std::vector<PredictionPoint>, 3>
bucketize(std::span<const PredictionPoint> points, BucketBasis basis = BucketBasis::context) {
  std::array<std::vector<PredictionPoint>, 3> out;
  for (const auto &p : points)
    out[static_cast<std::size_t>(bucket_of(p, basis))].push_back(p);
  return out;
}

inline EvalReport summarize(std::span<const PredictionPoint> points, std::size_t k,
                            BucketBasis basis = BucketBasis::context) {
  EvalReport r;
  r.k = k;
  r.basis = basis;
  r.overall = compute_metrics(points, k);
  const auto parts = bucketize(points, basis);
  for (std::size_t b = 0; b < 3; ++b)
    r.buckets[b] = compute_metrics(parts[b], k);
  return r;
}

/// Anything that can follow a user's query stream and rank the next query.
template <class R>
concept SequentialRanker = requires(R r, TokenId t, std::size_t k) {
  r.start_user();
  r.start_session();
  r.observe(t);
  r.end_session();
  { r.rank(t, k) } -> std::convertible_to<std::optional<std::size_t>>;
};

class ModelRanker {
public:
  explicit ModelRanker(const Model &m) : model_(&m) {}

  void start_user() { begin_user(*model_, state_); }
  void start_session() { begin_session(*model_, state_); }
  void observe(TokenId t) { advance(*model_, state_, t); }
  void end_session() {
    if (!state_.current.empty())
      finish_session(*model_, state_);
  }
  std::optional<std::size_t> rank(TokenId target, std::size_t k) const {
    const auto r = rank_of(score_all(model_->params, state_.h), target);
    return r <= k ? std::optional<std::size_t>(r) : std::nullopt;
  }
  const SlotState &state() const noexcept { return state_; }

private:
  const Model *model_;
  SlotState state_;
};

class AdjRanker {
public:
  explicit AdjRanker(const AdjacencyIndex &idx) : index_(&idx) {}

  void start_user() { last_.reset(); }
  void start_session() { last_.reset(); }
  void observe(TokenId t) { last_ = t; }
  void end_session() {}
  std::optional<std::size_t> rank(TokenId target, std::size_t k) const {
    if (!last_)
      return std::nullopt;
    const auto r = index_->rank_of(*last_, target);
    return r && *r <= k ? r : std::nullopt;
  }

private:
  const AdjacencyIndex *index_;
  std::optional<TokenId> last_;
};

static_assert(SequentialRanker<ModelRanker>);
static_assert(SequentialRanker<AdjRanker>);

/// Merges two splits by user id: sessions of `b` follow those of `a`. Users
/// keep their first-appearance order.
inline Histories merge_histories(const Histories &a, const Histories &b) {
  Histories out = a;
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < out.size(); ++i)
    pos.emplace(out[i].user_id, i);
  for (const auto &u : b) {
    auto [it, fresh] = pos.emplace(u.user_id, out.size());
    if (fresh)
      out.push_back({u.user_id, {}});
    auto &dst = out[it->second].sessions;
    dst.insert(dst.end(), u.sessions.begin(), u.sessions.end());
  }
  return out;
}

namespace detail {

template <SequentialRanker R>
std::vector<PredictionPoint> points_for_user(R &ranker, const UserHistory &test,
                                             const UserHistory *context, std::size_t k) {
  std::vector<PredictionPoint> out;
  ranker.start_user();
  if (context)
    for (const auto &s : context->sessions) {
      ranker.start_session();
      for (TokenId t : s.queries)
        ranker.observe(t);
      ranker.end_session();
    }
  for (const auto &s : test.sessions) {
    ranker.start_session();
    for (std::size_t n = 0; n < s.queries.size(); ++n) {
      ranker.observe(s.queries[n]);
      if (n + 1 == s.queries.size())
        break;
      PredictionPoint p;
      p.user_id = test.user_id;
      p.session_id = s.session_id;
      p.prefix_length = n + 1;
      p.session_length = s.queries.size();
      p.input_token = s.queries[n];
      p.target = s.queries[n + 1];
      p.rank = ranker.rank(p.target, k);
      out.push_back(std::move(p));
    }
    ranker.end_session();
  }
  return out;
}

} // namespace detail

/// Prediction points for every test session. `make_ranker()` is called once
/// per worker thread; `context` supplies each user's earlier sessions. The
/// result is ordered by test user and does not depend on `threads`.
template <class Factory>
  requires SequentialRanker<std::invoke_result_t<Factory &>>
std::vector<PredictionPoint> collect_points(Factory &&make_ranker, const Histories &test,
                                            const Histories &context, std::size_t k,
                                            std::size_t threads = 1) {
  if (k < 1)
    throw std::invalid_argument("K must be at least 1");
  std::unordered_map<std::string, const UserHistory *> ctx;
  for (const auto &u : context)
    ctx.emplace(u.user_id, &u);
  auto lookup = [&](const std::string &id) -> const UserHistory * {
    auto it = ctx.find(id);
    return it == ctx.end() ? nullptr : it->second;
  };

  std::vector<std::vector<PredictionPoint>> per_user(test.size());
  threads = std::max<std::size_t>(1, std::min(threads, test.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    auto ranker = make_ranker();
    for (std::size_t i; (i = next.fetch_add(1)) < test.size();)
      per_user[i] = detail::points_for_user(ranker, test[i], lookup(test[i].user_id), k);
  };
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back(work);
  }
  std::vector<PredictionPoint> out;
  for (auto &v : per_user)
    out.insert(out.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  return out;
}

/// Full evaluation; an empty test split (no prediction point) is an error.
template <class Factory>
EvalReport evaluate(Factory &&make_ranker, const Histories &test, const Histories &context,
                    std::size_t k, BucketBasis basis = BucketBasis::context,
                    std::size_t threads = 1) {
  const auto points = collect_points(make_ranker, test, context, k, threads);
  if (points.empty())
    throw std::invalid_argument("test split has no prediction points");
  return summarize(points, k, basis);
}

inline EvalReport evaluate_model(const Model &m, const Histories &test, const Histories &context,
                                 std::size_t k, BucketBasis basis = BucketBasis::context,
                                 std::size_t threads = 1) {
  return evaluate([&] { return ModelRanker(m); }, test, context, k, basis, threads);
}

inline EvalReport evaluate_adj(const AdjacencyIndex &idx, const Histories &test, std::size_t k,
                               BucketBasis basis = BucketBasis::context) {
  return evaluate([&] { return AdjRanker(idx); }, test, Histories{}, k, basis);
}

inline nlohmann::json to_json(const MetricRow &r, std::size_t k) {
  return {{"mrr@" + std::to_string(k), r.mrr},
          {"recall@" + std::to_string(k), r.recall},
          {"count", r.count}};
}

inline nlohmann::json to_json(const EvalReport &r) {
  nlohmann::json buckets = nlohmann::json::object();
  for (Bucket b : kBuckets)
    buckets[std::string(to_string(b))] = to_json(r.bucket(b), r.k);
  return {{"k", r.k},
          {"bucket_basis", r.basis == BucketBasis::context ? "context" : "session"},
          {"overall", to_json(r.overall, r.k)},
          {"buckets", buckets}};
}

/// One row per (model, bucket, metric): `model bucket metric value`.
inline void write_report_tsv(std::ostream &out, const std::string &model, const EvalReport &r,
                             bool header = true) {
  if (header)
    out << "model\tbucket\tmetric\tvalue\n";
  auto rows = [&](std::string_view bucket, const MetricRow &m) {
    out << model << '\t' << bucket << "\tmrr@" << r.k << '\t' << m.mrr << '\n';
    out << model << '\t' << bucket << "\trecall@" << r.k << '\t' << m.recall << '\n';
    out << model << '\t' << bucket << "\tcount\t" << m.count << '\n';
  };
  rows("overall", r.overall);
  for (Bucket b : kBuckets)
    rows(to_string(b), r.bucket(b));
}

/// Hidden-state activations over time: rows are hidden units, columns time
/// steps (queries or sessions).
struct StateMatrix {
  Matrix values;
  std::vector<std::string> column_labels;
};

namespace detail {
inline const UserHistory &find_user(const Histories &hs, const std::string &user_id) {
  for (const auto &u : hs)
    if (u.user_id == user_id)
      return u;
  throw std::invalid_argument("unknown user '" + user_id + "'");
}

inline void set_column(Matrix &m, std::size_t c, const Vector &v) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    m(r, c) = v[r];
}
} // namespace detail

/// Session-level states after each query of one session. Earlier sessions of
/// the user are replayed first so hierarchical models start from the right
/// user state.
inline StateMatrix export_session_states(const Model &m, const Histories &histories,
                                         const std::string &user_id, std::uint64_t session_id) {
  const auto &user = detail::find_user(histories, user_id);
  SlotState s;
  begin_user(m, s);
  for (const auto &session : user.sessions) {
    begin_session(m, s);
    if (session.session_id == session_id) {
      StateMatrix out{Matrix(m.config.hidden_dim, session.size()), {}};
      for (std::size_t n = 0; n < session.size(); ++n) {
        advance(m, s, session.queries[n]);
        detail::set_column(out.values, n, s.h);
        out.column_labels.push_back("q" + std::to_string(n + 1));
      }
      return out;
    }
    for (TokenId t : session.queries)
      advance(m, s, t);
    if (!s.current.empty())
      finish_session(m, s);
  }
  throw std::invalid_argument("unknown session " + std::to_string(session_id) + " for user '" +
                              user_id + "'");
}

/// User-level states after each session of one user (hierarchical models).
inline StateMatrix export_user_states(const Model &m, const Histories &histories,
                                      const std::string &user_id) {
  if (!is_hierarchical(m.config.kind))
    throw std::invalid_argument("user-level states exist only for hnqs and ahnqs");
  const auto &user = detail::find_user(histories, user_id);
  StateMatrix out{Matrix(m.config.hidden_dim, user.sessions.size()), {}};
  SlotState s;
  begin_user(m, s);
  for (std::size_t k = 0; k < user.sessions.size(); ++k) {
    begin_session(m, s);
    for (TokenId t : user.sessions[k].queries)
      advance(m, s, t);
    if (!s.current.empty())
      finish_session(m, s);
    detail::set_column(out.values, k, s.user);
    out.column_labels.push_back("s" + std::to_string(user.sessions[k].session_id));
  }
  return out;
}

inline void write_state_csv(std::ostream &out, const StateMatrix &sm) {
  out << "unit";
  for (const auto &l : sm.column_labels)
    out << ',' << l;
  out << '\n';
  const auto old = out.precision(17);
  for (std::size_t r = 0; r < sm.values.rows(); ++r) {
    out << 'h' << r;
    for (std::size_t c = 0; c < sm.values.cols(); ++c)
      out << ',' << sm.values(r, c);
    out << '\n';
  }
  out.precision(old);
}

} // namespace ahnqs
