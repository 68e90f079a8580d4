// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "ahnqs/models.hpp"
#include "support/convert.hpp"
#include "support/scalar_oracle.hpp"

namespace {

using namespace ahnqs;
using testing_support::random_model;
using testing_support::to_oracle;
using testing_support::to_vec;

using Sessions = std::vector<std::vector<TokenId>>;

/// Library replay mirroring oracle::replay: all but the last session are
/// finished, the last is scored.
struct Replay {
  std::vector<Vector> states;
  std::vector<Vector> users;
  std::vector<Vector> attention;
  Vector scores;
};

Replay run(const Model &m, const Sessions &sessions) {
  Replay r;
  SlotState s;
  begin_user(m, s);
  for (std::size_t k = 0; k < sessions.size(); ++k) {
    if (k > 0)
      begin_session(m, s);
    for (TokenId t : sessions[k]) {
      r.scores = step(m, s, t);
      r.states.push_back(s.h);
    }
    if (k + 1 == sessions.size())
      break;
    if (const SessionEnd *e = finish_session(m, s)) {
      r.users.push_back(s.user);
      if (!e->attention.empty())
        r.attention.push_back(e->attention);
    }
  }
  return r;
}

std::vector<std::vector<std::size_t>> widen(const Sessions &s) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto &x : s)
    out.emplace_back(x.begin(), x.end());
  return out;
}

void expect_near_vec(const Vector &a, const oracle::Vec &b, double tol) {
  ASSERT_EQ(a.dim(), b.size());
  for (std::size_t i = 0; i < b.size(); ++i)
    EXPECT_NEAR(a[i], b[i], tol) << "coordinate " << i;
}

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW((ModelConfig{2, 1, ModelKind::nqs}.validate()));
  EXPECT_THROW((ModelConfig{1, 4, ModelKind::nqs}.validate()), std::invalid_argument);
  EXPECT_THROW((ModelConfig{5, 0, ModelKind::nqs}.validate()), std::invalid_argument);
  EXPECT_THROW((ModelConfig{5, 2, ModelKind::nqs, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((ModelConfig{5, 2, ModelKind::nqs, 0.0, -0.1}.validate()), std::invalid_argument);
}

TEST(ModelKindNames, RoundTrip) {
  for (auto k : {ModelKind::nqs, ModelKind::hnqs, ModelKind::ahnqs})
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
  EXPECT_THROW(parse_model_kind("gru4rec"), std::invalid_argument);
}

TEST(ModelParams, ComponentsPresentPerKind) {
  auto nqs = ModelParams::zeros({6, 3, ModelKind::nqs});
  EXPECT_FALSE(nqs.user_gru);
  EXPECT_FALSE(nqs.init_weight);
  EXPECT_FALSE(nqs.attention);
  auto hnqs = ModelParams::zeros({6, 3, ModelKind::hnqs});
  EXPECT_TRUE(hnqs.user_gru && hnqs.init_weight && hnqs.init_bias);
  EXPECT_FALSE(hnqs.attention);
  auto ahnqs = ModelParams::zeros({6, 3, ModelKind::ahnqs});
  EXPECT_TRUE(ahnqs.attention);
  EXPECT_EQ(ahnqs.output.rows(), 3u);
  EXPECT_EQ(ahnqs.output.cols(), 6u);
  EXPECT_EQ(ahnqs.parameter_count(), 3 * 3 * 6 + 3 * 3 * 3 + 6 * 3 * 3 + 9 + 3 + 9 + 18);
  EXPECT_THROW(nqs.validate({6, 3, ModelKind::hnqs}), DimensionError);
  EXPECT_THROW(hnqs.validate({6, 3, ModelKind::ahnqs}), DimensionError);
  EXPECT_THROW(ahnqs.validate({7, 3, ModelKind::ahnqs}), DimensionError);
  EXPECT_NO_THROW(ahnqs.validate({6, 3, ModelKind::ahnqs}));
}

TEST(ModelParams, VisitorOrderAndVocabFlags) {
  auto p = ModelParams::zeros({6, 3, ModelKind::ahnqs});
  std::vector<std::string> names;
  std::vector<bool> vocab;
  p.for_each([&](const ParamView &v) {
    names.push_back(v.name);
    vocab.push_back(v.vocab_columns);
  });
  const std::vector<std::string> expect = {
      "session_gru.input_update", "session_gru.input_reset",  "session_gru.input_cand",
      "session_gru.hidden_update", "session_gru.hidden_reset", "session_gru.hidden_cand",
      "user_gru.input_update",    "user_gru.input_reset",     "user_gru.input_cand",
      "user_gru.hidden_update",   "user_gru.hidden_reset",    "user_gru.hidden_cand",
      "init.weight",              "init.bias",                "attention.weight",
      "output.weight"};
  EXPECT_EQ(names, expect);
  EXPECT_EQ(vocab, (std::vector<bool>{true, true, true, false, false, false, false, false, false,
                                      false, false, false, false, false, false, true}));
}

TEST(Step, ZeroParamsKeepStateAtZero) {
  Model m{{4, 1, ModelKind::nqs}, ModelParams::zeros({4, 1, ModelKind::nqs})};
  SlotState s;
  begin_user(m, s);
  auto scores = step(m, s, 2);
  EXPECT_EQ(s.h[0], 0.0);
  for (double x : scores)
    EXPECT_EQ(x, 0.0);
}

TEST(Step, NqsSessionStartsFromZero) {
  auto m = random_model(ModelKind::nqs, 5, 3, 1);
  SlotState s;
  begin_user(m, s);
  step(m, s, 1);
  begin_session(m, s);
  EXPECT_EQ(s.h, Vector(3));
}

TEST(Step, TwoStepOracle) {
  auto m = random_model(ModelKind::nqs, 5, 3, 2024);
  const Sessions sessions = {{3, 1}};
  auto lib = run(m, sessions);
  auto ref = oracle::replay(to_oracle(m), widen(sessions));
  ASSERT_EQ(lib.states.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i)
    expect_near_vec(lib.states[i], ref.session_states[i], 1e-12);
  expect_near_vec(lib.scores, ref.last_scores, 1e-12);
}

TEST(Step, TokenOutOfRangeNamesToken) {
  auto m = random_model(ModelKind::nqs, 5, 3, 2);
  SlotState s;
  begin_user(m, s);
  try {
    step(m, s, 5);
    FAIL() << "expected an error";
  } catch (const std::out_of_range &e) {
    EXPECT_NE(std::string(e.what()).find("5"), std::string::npos);
  }
}

TEST(Step, TapeIsCapped) {
  auto m = random_model(ModelKind::ahnqs, 5, 2, 3);
  SlotState s;
  begin_user(m, s);
  for (int i = 0; i < 300; ++i)
    advance(m, s, static_cast<TokenId>(i % 5));
  EXPECT_EQ(s.current.steps.size(), kMaxTape);
  EXPECT_TRUE(s.current.truncated);
  EXPECT_EQ(s.current.last_state(), s.h);
}

TEST(EndSessionHnqs, ZeroUserGruKeepsUserStateZero) {
  Model m{{5, 3, ModelKind::hnqs}, {}};
  m.params = random_model(ModelKind::hnqs, 5, 3, 4).params;
  *m.params.user_gru = GruParams::zeros(3, 3);
  SlotState s;
  begin_user(m, s);
  advance(m, s, 1);
  advance(m, s, 2);
  finish_session(m, s);
  EXPECT_EQ(s.user, Vector(3));
}

TEST(EndSessionHnqs, OneSessionIsUserGruOnLastState) {
  auto m = random_model(ModelKind::hnqs, 5, 3, 5);
  SlotState s;
  begin_user(m, s);
  advance(m, s, 4);
  advance(m, s, 0);
  const Vector last = s.h;
  finish_session(m, s);
  EXPECT_EQ(s.user, gru_forward(*m.params.user_gru, last, Vector(3)).h_next);
}

TEST(EndSession, EmptySessionIsAnError) {
  auto m = random_model(ModelKind::ahnqs, 5, 3, 6);
  SlotState s;
  begin_user(m, s);
  try {
    finish_session(m, s);
    FAIL();
  } catch (const std::logic_error &e) {
    EXPECT_STREQ(e.what(), "session produced no states");
  }
}

TEST(Hierarchy, MultiSessionOracle) {
  const Sessions sessions = {{0, 3, 2}, {4, 1}, {2, 2, 0, 1}};
  for (auto kind : {ModelKind::nqs, ModelKind::hnqs, ModelKind::ahnqs}) {
    auto m = random_model(kind, 5, 3, 10 + static_cast<int>(kind));
    auto lib = run(m, sessions);
    auto ref = oracle::replay(to_oracle(m), widen(sessions));
    ASSERT_EQ(lib.states.size(), ref.session_states.size());
    for (std::size_t i = 0; i < lib.states.size(); ++i)
      expect_near_vec(lib.states[i], ref.session_states[i], 1e-12);
    ASSERT_EQ(lib.users.size(), ref.user_states.size());
    for (std::size_t i = 0; i < lib.users.size(); ++i)
      expect_near_vec(lib.users[i], ref.user_states[i], 1e-12);
    ASSERT_EQ(lib.attention.size(), ref.attention.size());
    for (std::size_t i = 0; i < lib.attention.size(); ++i)
      expect_near_vec(lib.attention[i], ref.attention[i], 1e-12);
    expect_near_vec(lib.scores, ref.last_scores, 1e-12);
  }
}

SessionTrace manual_trace(const std::vector<double> &hs) {
  SessionTrace t;
  for (double h : hs) {
    GruStepCache c;
    c.h_next = Vector{h};
    t.steps.push_back(c);
  }
  return t;
}

TEST(EndSessionAhnqs, SingletonHasUnitWeight) {
  auto m = random_model(ModelKind::ahnqs, 5, 3, 7);
  SlotState s;
  begin_user(m, s);
  advance(m, s, 3);
  const Vector h1 = s.h;
  const SessionEnd e = end_session_ahnqs(m.params, s.current, Vector{0.3, -0.2, 0.5});
  ASSERT_EQ(e.attention.dim(), 1u);
  EXPECT_EQ(e.attention[0], 1.0);
  EXPECT_EQ(e.context, h1);
}

TEST(EndSessionAhnqs, ZeroUserGivesUniformWeights) {
  auto m = random_model(ModelKind::ahnqs, 5, 3, 8);
  SlotState s;
  begin_user(m, s);
  for (TokenId t : {0u, 1u, 2u, 3u})
    advance(m, s, t);
  const SessionEnd e = end_session_ahnqs(m.params, s.current, Vector(3));
  for (double a : e.attention)
    EXPECT_DOUBLE_EQ(a, 0.25);
}

TEST(EndSessionAhnqs, EngineeredEnergies) {
  // d_h = 1, U = 1, W_a = 4, h = (0.25, 0.5): e = (1, 2)
  auto p = ModelParams::zeros({5, 1, ModelKind::ahnqs});
  (*p.attention)(0, 0) = 4.0;
  const SessionEnd e = end_session_ahnqs(p, manual_trace({0.25, 0.5}), Vector{1.0});
  EXPECT_DOUBLE_EQ(e.energies[0], 1.0);
  EXPECT_DOUBLE_EQ(e.energies[1], 2.0);
  EXPECT_NEAR(e.attention[0], 0.2689414213699951207, 1e-15);
  EXPECT_NEAR(e.attention[1], 0.7310585786300048792, 1e-15);
  EXPECT_NEAR(e.context[0], 0.2689414213699951207 * 0.25 + 0.7310585786300048792 * 0.5, 1e-15);
}

TEST(InitNextSession, Examples) {
  auto p = ModelParams::zeros({3, 1, ModelKind::hnqs});
  EXPECT_EQ(init_next_session(p, Vector{0.0}), Vector{0.0});
  *p.init_weight = Matrix::identity(1);
  EXPECT_NEAR(init_next_session(p, Vector{0.5})[0], 0.46211715726000975850, 1e-15);
  EXPECT_THROW(init_next_session(ModelParams::zeros({3, 1, ModelKind::nqs}), Vector{0.0}),
               std::logic_error);
}

TEST(InitNextSession, FirstSessionStartsAtTanhBias) {
  auto m = random_model(ModelKind::hnqs, 5, 3, 9);
  SlotState s;
  begin_user(m, s);
  EXPECT_EQ(s.h, tanh(*m.params.init_bias));
}

TEST(ModelProperty, InitAndHiddenStatesStayInOpenInterval) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto m = random_model(ModelKind::ahnqs, 7, 4, seed, 1.5);
    Rng rng = derive_rng(seed, 3);
    auto u = testing_support::random_vector(4, rng, 2.0);
    for (double x : init_next_session(m.params, u))
      EXPECT_TRUE(x > -1.0 && x < 1.0);
    SlotState s;
    begin_user(m, s);
    for (int k = 0; k < 6; ++k) {
      for (int i = 0; i < 25; ++i) {
        advance(m, s, static_cast<TokenId>(uniform_index(rng, 7)));
        for (double x : s.h)
          EXPECT_LT(std::abs(x), 1.0);
      }
      finish_session(m, s);
      for (double x : s.user)
        EXPECT_LT(std::abs(x), 1.0);
      begin_session(m, s);
    }
  }
}

TEST(ModelProperty, AttentionWeightsPositiveAndNormalized) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto m = random_model(ModelKind::ahnqs, 6, 4, seed, 2.0);
    Rng rng = derive_rng(seed, 4);
    SlotState s;
    begin_user(m, s);
    for (int k = 0; k < 4; ++k) {
      const auto len = 1 + uniform_index(rng, 9);
      for (std::uint64_t i = 0; i < len; ++i)
        advance(m, s, static_cast<TokenId>(uniform_index(rng, 6)));
      const SessionEnd *e = finish_session(m, s);
      double sum = 0.0;
      for (double a : e->attention) {
        EXPECT_GT(a, 0.0);
        sum += a;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
      begin_session(m, s);
    }
  }
}

TEST(ModelProperty, SingletonAttentionEqualsLastState) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto a = random_model(ModelKind::ahnqs, 6, 4, seed);
    Model h{{6, 4, ModelKind::hnqs}, a.params};
    h.params.attention.reset();
    Rng rng = derive_rng(seed, 5);
    SlotState sa, sh;
    begin_user(a, sa);
    begin_user(h, sh);
    sa.user = sh.user = testing_support::random_vector(4, rng);
    const auto tok = static_cast<TokenId>(uniform_index(rng, 6));
    advance(a, sa, tok);
    advance(h, sh, tok);
    finish_session(a, sa);
    finish_session(h, sh);
    for (std::size_t i = 0; i < 4; ++i)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(sa.user[i]), std::bit_cast<std::uint64_t>(sh.user[i]));
  }
}

TEST(ModelProperty, NqsIgnoresUserHistory) {
  auto m = random_model(ModelKind::nqs, 6, 4, 12);
  const std::vector<TokenId> prefix = {2, 5, 1};
  const Sessions h1 = {{0, 1, 2}, {3, 3}};
  const Sessions h2 = {{5, 4}};
  const auto a = suggest(m, prefix, h1, 3);
  const auto b = suggest(m, prefix, h2, 3);
  const auto c = suggest(m, prefix, {}, 3);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.scores, c.scores);
}

TEST(Suggest, ZeroNqsTieBreaksByTokenId) {
  Model m{{8, 2, ModelKind::nqs}, ModelParams::zeros({8, 2, ModelKind::nqs})};
  const std::vector<TokenId> prefix = {5};
  auto r = suggest(m, prefix, {}, 3);
  EXPECT_EQ(r.top, (std::vector<TokenId>{0, 1, 2}));
}

TEST(Suggest, MatchesReplayAndIsDeterministic) {
  auto m = random_model(ModelKind::ahnqs, 6, 3, 13);
  const Sessions history = {{0, 1}, {2, 3, 4}};
  const std::vector<TokenId> prefix = {5, 1};
  auto r1 = suggest(m, prefix, history, 6);
  auto r2 = suggest(m, prefix, history, 6);
  EXPECT_EQ(r1.top, r2.top);
  EXPECT_EQ(r1.scores, r2.scores);
  Sessions all = history;
  all.push_back(prefix);
  auto ref = oracle::replay(to_oracle(m), widen(all));
  expect_near_vec(r1.scores, ref.last_scores, 1e-12);
  for (std::size_t i = 0; i < r1.top.size(); ++i)
    EXPECT_EQ(rank_of(r1.scores, r1.top[i]), i + 1);
}

TEST(Suggest, Errors) {
  auto m = random_model(ModelKind::hnqs, 6, 3, 14);
  const std::vector<TokenId> bad = {1, 9};
  try {
    suggest(m, bad, {}, 3);
    FAIL();
  } catch (const std::out_of_range &e) {
    EXPECT_NE(std::string(e.what()).find("9"), std::string::npos);
  }
  EXPECT_THROW(suggest(m, std::vector<TokenId>{}, {}, 3), std::invalid_argument);
  EXPECT_THROW(suggest(m, std::vector<TokenId>{1}, {}, 0), std::invalid_argument);
}

TEST(Ranking, TopKAndRankAgree) {
  const Vector scores{0.5, 0.9, 0.5, -0.1, 0.9};
  EXPECT_EQ(top_k(scores, 5), (std::vector<TokenId>{1, 4, 0, 2, 3}));
  EXPECT_EQ(top_k(scores, 10).size(), 5u);
  EXPECT_EQ(rank_of(scores, 1), 1u);
  EXPECT_EQ(rank_of(scores, 4), 2u);
  EXPECT_EQ(rank_of(scores, 2), 4u);
  EXPECT_EQ(rank_of(scores, 3), 5u);
}

std::string serialize(const Model &m, const std::string &vocab = "corpus/vocab.tsv") {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, m, vocab);
  return out.str();
}

bool bitwise_equal(const ModelParams &a, const ModelParams &b) {
  std::vector<std::uint64_t> x, y;
  const_cast<ModelParams &>(a).for_each([&](const ParamView &v) {
    for (double d : v.values)
      x.push_back(std::bit_cast<std::uint64_t>(d));
  });
  const_cast<ModelParams &>(b).for_each([&](const ParamView &v) {
    for (double d : v.values)
      y.push_back(std::bit_cast<std::uint64_t>(d));
  });
  return x == y;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (auto kind : {ModelKind::nqs, ModelKind::hnqs, ModelKind::ahnqs}) {
    auto m = random_model(kind, 7, 3, 21);
    m.params.output(0, 0) = -0.0;
    m.params.output(1, 2) = 1e-310; // subnormal
    const auto bytes = serialize(m);
    std::istringstream in(bytes, std::ios::binary);
    auto loaded = read_checkpoint(in, kind);
    EXPECT_EQ(loaded.vocab_path, "corpus/vocab.tsv");
    EXPECT_EQ(loaded.model.config.vocab_size, 7u);
    EXPECT_EQ(loaded.model.config.hidden_dim, 3u);
    EXPECT_EQ(loaded.model.config.kind, kind);
    EXPECT_TRUE(bitwise_equal(loaded.model.params, m.params));
    EXPECT_EQ(serialize(loaded.model), bytes);
  }
}

TEST(Checkpoint, HeaderLayout) {
  auto m = random_model(ModelKind::hnqs, 258, 2, 22);
  const auto bytes = serialize(m, "v");
  EXPECT_EQ(bytes.substr(0, 5), "AHNQS");
  EXPECT_EQ(bytes[5], 1);
  EXPECT_EQ(bytes[6], 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 2u); // 258 little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);
  EXPECT_EQ(bytes.size(), 7 + 16 + 15 * 16 + 8 * m.params.parameter_count() + 8 + 1);
}

TEST(Checkpoint, EveryTruncationFails) {
  auto m = random_model(ModelKind::ahnqs, 4, 2, 23);
  const auto bytes = serialize(m);
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    std::istringstream in(bytes.substr(0, n), std::ios::binary);
    EXPECT_THROW(read_checkpoint(in), CheckpointError) << "prefix " << n;
  }
}

TEST(Checkpoint, HeaderErrors) {
  auto m = random_model(ModelKind::nqs, 4, 2, 24);
  auto bytes = serialize(m);
  auto load = [](const std::string &b, std::optional<ModelKind> k = {}) {
    std::istringstream in(b, std::ios::binary);
    return read_checkpoint(in, k);
  };
  try {
    load(bytes, ModelKind::ahnqs);
    FAIL();
  } catch (const CheckpointError &e) {
    EXPECT_NE(std::string(e.what()).find("nqs model, expected ahnqs"), std::string::npos);
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(load(bad_magic), CheckpointError);
  auto bad_version = bytes;
  bad_version[5] = 9;
  EXPECT_THROW(load(bad_version), CheckpointError);
  auto bad_vocab = bytes;
  bad_vocab[7] = 5; // header says V = 5, matrices are 4 wide
  try {
    load(bad_vocab);
    FAIL();
  } catch (const CheckpointError &e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos);
  }
  EXPECT_THROW(load(bytes + "x"), CheckpointError);
}

TEST(Checkpoint, FileSaveAndLoad) {
  const auto dir = std::filesystem::temp_directory_path() / "ahnqs_models_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.ckpt";
  auto m = random_model(ModelKind::ahnqs, 5, 3, 25);
  save_checkpoint(path, m, "vocab.tsv");
  EXPECT_FALSE(std::filesystem::exists(dir / "m.ckpt.tmp"));
  auto loaded = load_checkpoint(path, ModelKind::ahnqs);
  EXPECT_TRUE(bitwise_equal(loaded.model.params, m.params));
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), std::ios_base::failure);
  std::filesystem::remove_all(dir);
}

} // namespace
