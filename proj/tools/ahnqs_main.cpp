// SPDX-License-Identifier: Apache-2.0
//
// ahnqs: preprocess query logs, train and evaluate suggestion models, and
// inspect them.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ahnqs/adj.hpp"
#include "ahnqs/batcher.hpp"
#include "ahnqs/evaluation.hpp"
#include "ahnqs/models.hpp"
#include "ahnqs/querylog/corpus_io.hpp"
#include "ahnqs/querylog/parse.hpp"
#include "ahnqs/querylog/preprocess.hpp"
#include "ahnqs/synthetic.hpp"
#include "ahnqs/training.hpp"

namespace fs = std::filesystem;
using namespace ahnqs;

namespace {

/// Writes `path` through a sibling temporary file so that a failure never
/// leaves a partial artifact behind.
template <class Writer> void write_atomically(const fs::path &path, Writer &&writer) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f)
      throw std::ios_base::failure("cannot write " + tmp.string());
    writer(f);
    f.flush();
    if (!f)
      throw std::ios_base::failure("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void require_file(const fs::path &p) {
  if (!fs::exists(p))
    throw std::runtime_error("no such file: " + p.string());
}

void print_stats_row(std::ostream &out, const std::string &name, const SplitStats &s) {
  out << std::left << std::setw(8) << name << std::right << std::setw(12) << s.queries
      << std::setw(12) << s.unique_queries << std::setw(10) << s.sessions << std::setw(8)
      << s.users << std::fixed << std::setprecision(2) << std::setw(14)
      << s.avg_queries_per_session << std::setw(14) << s.avg_sessions_per_user << '\n';
  out.unsetf(std::ios::fixed);
}

void print_stats(std::ostream &out, const CorpusStats &st) {
  out << std::left << std::setw(8) << "split" << std::right << std::setw(12) << "queries"
      << std::setw(12) << "unique" << std::setw(10) << "sessions" << std::setw(8) << "users"
      << std::setw(14) << "q/session" << std::setw(14) << "sessions/user" << '\n';
  print_stats_row(out, "train", st.train);
  if (st.valid)
    print_stats_row(out, "valid", *st.valid);
  print_stats_row(out, "test", st.test);
}

// ---- preprocess ------------------------------------------------------------

struct PreprocessArgs {
  std::string input;
  std::string out;
  PreprocessOptions opts;
  bool keep_duplicates = false;
};

int run_preprocess(const PreprocessArgs &a) {
  require_file(a.input);
  std::ifstream in(a.input, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot read " + a.input);
  const ParseResult parsed = parse_log(in);
  PreprocessOptions opts = a.opts;
  opts.sessionize.collapse_duplicates = !a.keep_duplicates;
  const PreprocessedCorpus corpus = preprocess(parsed.records, opts);
  write_corpus_dir(a.out, corpus);
  std::cout << "parsed " << parsed.data_lines << " lines (" << parsed.malformed
            << " malformed skipped); vocabulary " << corpus.vocab.size() << " queries\n";
  print_stats(std::cout, corpus.stats);
  return 0;
}

// ---- synth -----------------------------------------------------------------

int run_synth(const SyntheticConfig &cfg, const std::string &out) {
  const SyntheticCorpus syn = generate_synthetic(cfg);
  PreprocessedCorpus c;
  c.vocab.add("ambiguous", 0);
  for (std::size_t g = 0; g < cfg.groups; ++g)
    for (std::size_t i = 0; i < cfg.chain_length; ++i)
      c.vocab.add("group" + std::to_string(g) + " step" + std::to_string(i), 0);
  for (std::size_t n = 0; n < cfg.noise_tokens; ++n)
    c.vocab.add("noise" + std::to_string(n), 0);
  c.train = syn.train;
  c.test = syn.test;
  c.stats = compute_stats(c.train, c.test);
  write_corpus_dir(out, c);
  print_stats(std::cout, c.stats);
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  std::string out;
  std::string model = "ahnqs";
  std::string config_file;
  std::string log_file;
  std::size_t hidden = 100;
  std::optional<double> lr;
  std::optional<double> dropout;
  std::optional<double> dropout_user;
  TrainConfig train;
  bool no_validation = false;
  std::set<std::string> given; // long names of the flags present on the command line
};

int run_train(const TrainArgs &a) {
  const ModelKind kind = parse_model_kind(a.model);
  const fs::path dir(a.corpus);
  require_file(CorpusPaths{dir}.vocab());
  const PreprocessedCorpus corpus = read_corpus_dir(dir);

  // Precedence: per-model defaults, then the config file, then explicit flags.
  const ModelDefaults def = defaults_for(kind);
  TrainConfig tc;
  tc.learning_rate = def.learning_rate;
  ModelConfig mc{corpus.vocab.size(), TrainArgs{}.hidden, kind, def.dropout, def.dropout};
  if (!a.config_file.empty()) {
    require_file(a.config_file);
    std::ifstream f(a.config_file);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception &e) {
      throw std::runtime_error(a.config_file + ": " + e.what());
    }
    apply_config_json(j, tc, mc);
  }
  const auto given = [&](const char *flag) { return a.given.count(flag) > 0; };
  if (given("--hidden"))
    mc.hidden_dim = a.hidden;
  if (given("--batch-size"))
    tc.batch_size = a.train.batch_size;
  if (given("--momentum"))
    tc.momentum = a.train.momentum;
  if (given("--epochs"))
    tc.epochs = a.train.epochs;
  if (given("--seed"))
    tc.seed = a.train.seed;
  if (given("--min-negatives"))
    tc.min_negatives = a.train.min_negatives;
  if (given("--clip-norm"))
    tc.clip_norm = a.train.clip_norm;
  if (given("--k"))
    tc.eval_k = a.train.eval_k;
  tc.eval_threads = a.train.eval_threads;
  if (a.lr)
    tc.learning_rate = *a.lr;
  if (a.dropout)
    mc.dropout_hidden = mc.dropout_user = *a.dropout;
  if (a.dropout_user)
    mc.dropout_user = *a.dropout_user;
  tc.validate();
  mc.validate();

  const fs::path log_path = a.log_file.empty() ? fs::path(a.out + ".log.jsonl") : fs::path(a.log_file);
  if (log_path.has_parent_path())
    fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path, std::ios::trunc);
  if (!log)
    throw std::runtime_error("cannot write " + log_path.string());

  std::cout << "training " << to_string(kind) << " on " << corpus.train.size()
            << " users, V=" << mc.vocab_size << " d_h=" << mc.hidden_dim
            << " lr=" << tc.learning_rate << " dropout=" << mc.dropout_hidden << "/"
            << mc.dropout_user << " batch=" << tc.batch_size << " epochs=" << tc.epochs
            << " seed=" << tc.seed << '\n';
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochReport &e, const Model &) {
    log << to_json(e, tc.eval_k).dump() << '\n' << std::flush;
    std::cout << "epoch " << e.epoch << " loss " << std::setprecision(6) << e.mean_loss;
    if (e.valid)
      std::cout << " valid mrr@" << tc.eval_k << " " << e.valid->mrr << " recall@" << tc.eval_k
                << " " << e.valid->recall;
    std::cout << " (" << std::setprecision(3) << e.seconds << "s)\n";
  };
  const Histories none;
  const TrainResult r = train(corpus.train, a.no_validation ? none : corpus.valid, mc, tc, hooks);
  save_checkpoint(a.out, r.model, fs::absolute(CorpusPaths{dir}.vocab()).lexically_normal().string());
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

// ---- evaluate --------------------------------------------------------------

struct EvalArgs {
  std::string corpus;
  std::string checkpoint;
  std::string baseline;
  std::string split = "test";
  std::string basis = "context";
  std::size_t k = 10;
  std::size_t threads = 1;
  std::string out_json;
  std::string out_tsv;
};

int run_evaluate(const EvalArgs &a) {
  if (a.checkpoint.empty() == a.baseline.empty())
    throw CLI::ValidationError("exactly one of --checkpoint and --baseline is required");
  const BucketBasis basis = parse_bucket_basis(a.basis);
  require_file(CorpusPaths{a.corpus}.vocab());
  const PreprocessedCorpus corpus = read_corpus_dir(a.corpus);
  // The users' history before the evaluated split.
  const Histories &target = a.split == "valid" ? corpus.valid : corpus.test;
  const Histories context = a.split == "valid" ? corpus.train : merge_histories(corpus.train, corpus.valid);

  EvalReport report;
  std::string name;
  if (!a.baseline.empty()) {
    const auto idx = AdjacencyIndex::build(context);
    report = evaluate_adj(idx, target, a.k, basis);
    name = "adj";
  } else {
    require_file(a.checkpoint);
    const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    if (ck.model.config.vocab_size != corpus.vocab.size())
      throw std::runtime_error("vocabulary mismatch: checkpoint has " +
                               std::to_string(ck.model.config.vocab_size) + " queries, corpus has " +
                               std::to_string(corpus.vocab.size()));
    report = evaluate_model(ck.model, target, context, a.k, basis, a.threads);
    name = std::string(to_string(ck.model.config.kind));
  }
  const std::string json = to_json(report).dump(2);
  if (!a.out_json.empty())
    write_atomically(a.out_json, [&](std::ostream &o) { o << json << '\n'; });
  if (!a.out_tsv.empty())
    write_atomically(a.out_tsv, [&](std::ostream &o) { write_report_tsv(o, name, report, true); });
  std::cout << std::left << std::setw(8) << "bucket" << std::right << std::setw(10) << "count"
            << std::setw(12) << ("mrr@" + std::to_string(a.k)) << std::setw(12)
            << ("recall@" + std::to_string(a.k)) << '\n'
            << std::fixed << std::setprecision(4);
  auto row = [&](std::string_view label, const MetricRow &m) {
    std::cout << std::left << std::setw(8) << label << std::right << std::setw(10) << m.count
              << std::setw(12) << m.mrr << std::setw(12) << m.recall << '\n';
  };
  row("all", report.overall);
  for (Bucket b : kBuckets)
    row(to_string(b), report.bucket(b));
  return 0;
}

// ---- suggest ---------------------------------------------------------------

struct SuggestArgs {
  std::string checkpoint;
  std::string vocab;
  std::vector<std::string> queries;
  std::size_t top_k = 10;
  bool interactive = false;
};

void print_suggestions(const Vector &scores, std::size_t k, const Vocabulary &vocab) {
  const auto top = top_k(scores, k);
  for (std::size_t r = 0; r < top.size(); ++r)
    std::cout << r + 1 << '\t' << vocab.token(top[r]) << '\t' << std::setprecision(6)
              << scores[top[r]] << '\n';
}

int run_suggest(const SuggestArgs &a) {
  require_file(a.checkpoint);
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const std::string vocab_path = a.vocab.empty() ? ck.vocab_path : a.vocab;
  if (vocab_path.empty())
    throw std::runtime_error("checkpoint names no vocabulary; pass --vocab");
  require_file(vocab_path);
  std::ifstream vf(vocab_path, std::ios::binary);
  const Vocabulary vocab = read_vocab(vf);
  if (vocab.size() != ck.model.config.vocab_size)
    throw std::runtime_error("vocabulary mismatch: checkpoint has " +
                             std::to_string(ck.model.config.vocab_size) + " queries, " +
                             vocab_path + " has " + std::to_string(vocab.size()));
  const Model &m = ck.model;

  if (!a.interactive) {
    if (a.queries.empty())
      throw CLI::ValidationError("one-shot mode needs at least one --query (or use --interactive)");
    std::vector<TokenId> prefix;
    for (const auto &q : a.queries) {
      const auto id = vocab.find(normalize_query(q));
      if (!id)
        throw std::runtime_error("unknown query: " + q);
      prefix.push_back(*id);
    }
    const auto r = suggest(m, prefix, {}, a.top_k);
    print_suggestions(r.scores, a.top_k, vocab);
    return 0;
  }

  // Interactive: one query per line; a blank line ends the session.
  SlotState state;
  begin_user(m, state);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    const std::string q = normalize_query(line);
    if (q.empty()) {
      if (!state.current.empty()) {
        finish_session(m, state);
        begin_session(m, state);
        std::cout << "-- session ended\n";
      }
      continue;
    }
    const auto id = vocab.find(q);
    if (!id) {
      std::cerr << "unknown query: " << q << '\n';
      continue;
    }
    advance(m, state, *id);
    print_suggestions(score_all(m.params, state.h), a.top_k, vocab);
    std::cout << std::flush;
  }
  return 0;
}

// ---- export-states ---------------------------------------------------------

struct ExportArgs {
  std::string checkpoint;
  std::string corpus;
  std::string split = "test";
  std::string user;
  std::optional<std::uint64_t> session;
  std::string out;
};

int run_export(const ExportArgs &a) {
  require_file(a.checkpoint);
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const PreprocessedCorpus corpus = read_corpus_dir(a.corpus);
  const Histories *hs = a.split == "train" ? &corpus.train
                        : a.split == "valid" ? &corpus.valid
                                             : &corpus.test;
  const StateMatrix sm = a.session ? export_session_states(ck.model, *hs, a.user, *a.session)
                                   : export_user_states(ck.model, *hs, a.user);
  write_atomically(a.out, [&](std::ostream &o) { write_state_csv(o, sm); });
  std::cout << "wrote " << sm.values.rows() << "x" << sm.values.cols() << " states to " << a.out
            << '\n';
  return 0;
}

// ---- dump-schedule ---------------------------------------------------------

struct ScheduleArgs {
  std::string corpus;
  std::string out;
  std::size_t batch = 50;
  std::uint64_t seed = 1;
  bool no_shuffle = false;
};

int run_schedule(const ScheduleArgs &a) {
  const PreprocessedCorpus corpus = read_corpus_dir(a.corpus);
  const auto steps = schedule(corpus.train, a.batch, a.seed, !a.no_shuffle);
  if (a.out.empty() || a.out == "-") {
    write_schedule_tsv(std::cout, corpus.train, steps);
  } else {
    write_atomically(a.out, [&](std::ostream &o) { write_schedule_tsv(o, corpus.train, steps); });
  }
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Query suggestion with session and user-level recurrent models"};
  app.require_subcommand(1);
  const std::vector<std::string> kinds{"nqs", "hnqs", "ahnqs"};

  PreprocessArgs pre;
  auto *p = app.add_subcommand("preprocess", "Sessionize, filter and split an AOL-style log");
  p->add_option("--input,-i", pre.input, "Tab-separated log file")->required();
  p->add_option("--out,-o", pre.out, "Output corpus directory")->required();
  p->add_option("--session-gap-secs", pre.opts.sessionize.gap_secs, "Inactivity gap that ends a session")
      ->capture_default_str()->check(CLI::PositiveNumber);
  p->add_option("--min-query-count", pre.opts.filter.min_query_count, "Drop queries seen fewer times")
      ->capture_default_str();
  p->add_option("--min-session-len", pre.opts.filter.min_session_len, "Drop shorter sessions")
      ->capture_default_str();
  p->add_option("--min-user-sessions", pre.opts.filter.min_user_sessions, "Drop users with fewer sessions")
      ->capture_default_str();
  p->add_option("--test-days", pre.opts.test_window_days, "Length of the final test window in days")
      ->capture_default_str()->check(CLI::PositiveNumber);
  p->add_option("--valid-days", pre.opts.valid_window_days, "Validation window in days (0 disables)")
      ->capture_default_str();
  p->add_flag("--keep-duplicates", pre.keep_duplicates, "Keep consecutive repeats of a query");

  SyntheticConfig syn;
  std::string syn_out;
  auto *sy = app.add_subcommand("synth", "Write the synthetic personalization corpus");
  sy->add_option("--out,-o", syn_out, "Output corpus directory")->required();
  sy->add_option("--users", syn.users)->capture_default_str();
  sy->add_option("--groups", syn.groups)->capture_default_str();
  sy->add_option("--chain-length", syn.chain_length)->capture_default_str();
  sy->add_option("--noise-tokens", syn.noise_tokens)->capture_default_str();
  sy->add_option("--max-noise-tail", syn.max_noise_tail)->capture_default_str();
  sy->add_option("--train-sessions", syn.train_sessions)->capture_default_str();
  sy->add_option("--seed", syn.seed)->capture_default_str();

  TrainArgs tr;
  auto *t = app.add_subcommand("train", "Train a model on a preprocessed corpus");
  t->add_option("--corpus,-c", tr.corpus, "Corpus directory")->required();
  t->add_option("--out,-o", tr.out, "Checkpoint path")->required();
  t->add_option("--model,-m", tr.model, "Model kind")->capture_default_str()->check(CLI::IsMember(kinds));
  t->add_option("--config", tr.config_file, "Flat JSON file with training settings");
  t->add_option("--log", tr.log_file, "Per-epoch JSON-lines log (default: <out>.log.jsonl)");
  t->add_option("--hidden", tr.hidden, "Hidden size d_h")->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--lr", tr.lr, "Learning rate (default 0.01 for nqs, 0.1 otherwise)");
  t->add_option("--dropout", tr.dropout, "Dropout rate (default 0.5 for nqs, 0.1 otherwise)");
  t->add_option("--dropout-user", tr.dropout_user, "Dropout on the user state (default: --dropout)");
  t->add_option("--batch-size", tr.train.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--momentum", tr.train.momentum)->capture_default_str();
  t->add_option("--epochs", tr.train.epochs)->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--seed", tr.train.seed, "Seed for every random choice")->capture_default_str();
  t->add_option("--min-negatives", tr.train.min_negatives, "Negatives per term (default batch-1)");
  t->add_option("--clip-norm", tr.train.clip_norm, "Clip the gradient norm (off by default)");
  t->add_option("--k", tr.train.eval_k, "Cutoff of the validation metrics")->capture_default_str();
  t->add_option("--threads", tr.train.eval_threads, "Threads for validation")->capture_default_str();
  t->add_flag("--no-validation", tr.no_validation, "Skip per-epoch validation");

  EvalArgs ev;
  auto *e = app.add_subcommand("evaluate", "MRR@K and Recall@K, overall and per bucket");
  e->add_option("--corpus,-c", ev.corpus, "Corpus directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
  e->add_option("--baseline", ev.baseline, "Non-neural baseline")->check(CLI::IsMember({"adj"}));
  e->add_option("--split", ev.split)->capture_default_str()->check(CLI::IsMember({"test", "valid"}));
  e->add_option("--bucket-basis", ev.basis)->capture_default_str()->check(CLI::IsMember({"context", "session"}));
  e->add_option("--k", ev.k)->capture_default_str()->check(CLI::PositiveNumber);
  e->add_option("--threads", ev.threads)->capture_default_str()->check(CLI::PositiveNumber);
  e->add_option("--out-json", ev.out_json, "Write the report as JSON");
  e->add_option("--out-tsv", ev.out_tsv, "Write the report as TSV rows");

  SuggestArgs sg;
  auto *s = app.add_subcommand("suggest", "Rank next queries for a prefix");
  s->add_option("--checkpoint", sg.checkpoint)->required();
  s->add_option("--vocab", sg.vocab, "Vocabulary file (default: the one recorded at training)");
  s->add_option("--query,-q", sg.queries, "Prefix query, repeat for longer prefixes");
  s->add_option("--top-k", sg.top_k)->capture_default_str()->check(CLI::PositiveNumber);
  s->add_flag("--interactive", sg.interactive, "Read queries from stdin; blank line ends a session");

  ExportArgs ex;
  auto *x = app.add_subcommand("export-states", "Hidden states as CSV, one column per step");
  x->add_option("--checkpoint", ex.checkpoint)->required();
  x->add_option("--corpus,-c", ex.corpus)->required();
  x->add_option("--split", ex.split)->capture_default_str()->check(CLI::IsMember({"train", "valid", "test"}));
  x->add_option("--user", ex.user, "User id")->required();
  x->add_option("--session", ex.session, "Session id; without it, user-level states are exported");
  x->add_option("--out,-o", ex.out)->required();

  ScheduleArgs sc;
  auto *d = app.add_subcommand("dump-schedule", "Print the training batch schedule as TSV");
  d->add_option("--corpus,-c", sc.corpus)->required();
  d->add_option("--out,-o", sc.out, "Output file (default: stdout)");
  d->add_option("--batch-size", sc.batch)->capture_default_str()->check(CLI::PositiveNumber);
  d->add_option("--seed", sc.seed)->capture_default_str();
  d->add_flag("--no-shuffle", sc.no_shuffle);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*p)
      return run_preprocess(pre);
    if (*sy)
      return run_synth(syn, syn_out);
    if (*t) {
      for (const auto *opt : t->get_options())
        if (opt->count() > 0 && !opt->get_lnames().empty())
          tr.given.insert("--" + opt->get_lnames().front());
      return run_train(tr);
    }
    if (*e)
      return run_evaluate(ev);
    if (*s)
      return run_suggest(sg);
    if (*x)
      return run_export(ex);
    if (*d)
      return run_schedule(sc);
  } catch (const CLI::Error &err) {
    return app.exit(err);
  } catch (const std::exception &err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 1;
}
