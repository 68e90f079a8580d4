// SPDX-License-Identifier: Apache-2.0
//
// On-disk forms of a preprocessed corpus:
//
//   corpus file  user_id <TAB> session_id <TAB> token_id <TAB> unix_ts
//   vocab file   token_id <TAB> count <TAB> query_text
//   stats file   JSON object keyed by split
//
// A corpus directory holds train.tsv, valid.tsv, test.tsv, vocab.tsv and
// stats.json.

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "json.hpp"

#include "ahnqs/querylog/preprocess.hpp"
#include "ahnqs/querylog/types.hpp"

namespace ahnqs {

inline void write_corpus(std::ostream &out, const Histories &histories) {
  for (const auto &u : histories)
    for (const auto &s : u.sessions)
      for (std::size_t i = 0; i < s.size(); ++i)
        out << u.user_id << '\t' << s.session_id << '\t' << s.queries[i] << '\t' << s.timestamps[i]
            << '\n';
}

namespace detail {
template <class T> T parse_number(std::string_view s, std::size_t line, const char *what) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw FormatError(std::string("bad ") + what + " '" + std::string(s) + "'", line);
  return v;
}
} // namespace detail

/// Reads a corpus file. Consecutive lines with the same user form one
/// history; consecutive lines with the same session id form one session.
/// When `vocab_size` is non-zero every token id is checked against it.
inline Histories read_corpus(std::istream &in, std::size_t vocab_size = 0) {
  Histories out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    auto f = detail::split_tabs(line);
    if (f.size() != 4)
      throw FormatError("expected 4 tab-separated fields", line_no);
    const auto sid = detail::parse_number<std::uint64_t>(f[1], line_no, "session id");
    const auto tok = detail::parse_number<TokenId>(f[2], line_no, "token id");
    const auto ts = detail::parse_number<Timestamp>(f[3], line_no, "timestamp");
    if (vocab_size && tok >= vocab_size)
      throw FormatError("token id " + std::to_string(tok) + " outside vocabulary of size " +
                            std::to_string(vocab_size),
                        line_no);
    if (out.empty() || out.back().user_id != f[0])
      out.push_back({std::string(f[0]), {}});
    auto &sessions = out.back().sessions;
    if (sessions.empty() || sessions.back().session_id != sid) {
      sessions.emplace_back();
      sessions.back().session_id = sid;
    }
    sessions.back().queries.push_back(tok);
    sessions.back().timestamps.push_back(ts);
  }
  if (in.bad())
    throw std::ios_base::failure("error while reading corpus");
  return out;
}

inline void write_vocab(std::ostream &out, const Vocabulary &vocab) {
  for (TokenId id = 0; id < vocab.size(); ++id)
    out << id << '\t' << vocab.count(id) << '\t' << vocab.token(id) << '\n';
}

inline Vocabulary read_vocab(std::istream &in) {
  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    auto f = detail::split_tabs(line);
    if (f.size() != 3)
      throw FormatError("expected 3 tab-separated fields", line_no);
    const auto id = detail::parse_number<TokenId>(f[0], line_no, "token id");
    const auto count = detail::parse_number<std::uint64_t>(f[1], line_no, "count");
    if (id != vocab.size())
      throw FormatError("token ids must be dense and ascending", line_no);
    vocab.add(std::string(f[2]), count);
  }
  return vocab;
}

inline nlohmann::json to_json(const SplitStats &s) {
  return {{"queries", s.queries},
          {"unique_queries", s.unique_queries},
          {"sessions", s.sessions},
          {"users", s.users},
          {"avg_queries_per_session", s.avg_queries_per_session},
          {"avg_sessions_per_user", s.avg_sessions_per_user}};
}

inline nlohmann::json to_json(const CorpusStats &s) {
  nlohmann::json j = {{"train", to_json(s.train)}, {"test", to_json(s.test)}};
  if (s.valid)
    j["valid"] = to_json(*s.valid);
  return j;
}

struct CorpusPaths {
  std::filesystem::path dir;
  std::filesystem::path train() const { return dir / "train.tsv"; }
  std::filesystem::path valid() const { return dir / "valid.tsv"; }
  std::filesystem::path test() const { return dir / "test.tsv"; }
  std::filesystem::path vocab() const { return dir / "vocab.tsv"; }
  std::filesystem::path stats() const { return dir / "stats.json"; }
};

namespace detail {
inline std::ofstream open_out(const std::filesystem::path &p) {
  std::ofstream f(p, std::ios::binary);
  if (!f)
    throw std::ios_base::failure("cannot write " + p.string());
  return f;
}
inline std::ifstream open_in(const std::filesystem::path &p) {
  std::ifstream f(p, std::ios::binary);
  if (!f)
    throw std::ios_base::failure("cannot read " + p.string());
  return f;
}
} // namespace detail

inline void write_corpus_dir(const std::filesystem::path &dir, const PreprocessedCorpus &c) {
  std::filesystem::create_directories(dir);
  CorpusPaths p{dir};
  auto emit = [](const std::filesystem::path &path, auto &&writer) {
    auto f = detail::open_out(path);
    writer(f);
    f.flush();
    if (!f)
      throw std::ios_base::failure("failed writing " + path.string());
  };
  emit(p.train(), [&](std::ostream &o) { write_corpus(o, c.train); });
  emit(p.valid(), [&](std::ostream &o) { write_corpus(o, c.valid); });
  emit(p.test(), [&](std::ostream &o) { write_corpus(o, c.test); });
  emit(p.vocab(), [&](std::ostream &o) { write_vocab(o, c.vocab); });
  emit(p.stats(), [&](std::ostream &o) { o << to_json(c.stats).dump(2) << '\n'; });
}

/// Loads vocabulary and the three splits (a missing valid.tsv is an empty
/// split). Stats are not reloaded.
inline PreprocessedCorpus read_corpus_dir(const std::filesystem::path &dir) {
  CorpusPaths p{dir};
  PreprocessedCorpus c;
  {
    auto f = detail::open_in(p.vocab());
    c.vocab = read_vocab(f);
  }
  auto load = [&](const std::filesystem::path &path, bool required) {
    if (!required && !std::filesystem::exists(path))
      return Histories{};
    auto f = detail::open_in(path);
    try {
      return read_corpus(f, c.vocab.size());
    } catch (const FormatError &e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  };
  c.train = load(p.train(), true);
  c.valid = load(p.valid(), false);
  c.test = load(p.test(), false);
  return c;
}

} // namespace ahnqs
