// SPDX-License-Identifier: Apache-2.0
//
// Model configuration and parameter containers for the three architectures:
//
//   nqs    session GRU over query tokens, scores = tanh(h W_out)
//   hnqs   adds a user GRU over session states; each session starts from
//          h_0 = tanh(W U + b_0)
//   ahnqs  like hnqs, but the user GRU consumes an attention-weighted sum of
//          the session's hidden states

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ahnqs/core/gru.hpp"
#include "ahnqs/core/linalg.hpp"
#include "ahnqs/core/random.hpp"

namespace ahnqs {

enum class ModelKind : std::uint8_t { nqs = 0, hnqs = 1, ahnqs = 2 };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
  case ModelKind::nqs:
    return "nqs";
  case ModelKind::hnqs:
    return "hnqs";
  case ModelKind::ahnqs:
    return "ahnqs";
  }
  return "unknown";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "nqs")
    return ModelKind::nqs;
  if (s == "hnqs")
    return ModelKind::hnqs;
  if (s == "ahnqs")
    return ModelKind::ahnqs;
  throw std::invalid_argument("unknown model kind '" + std::string(s) +
                              "' (expected nqs, hnqs or ahnqs)");
}

inline bool is_hierarchical(ModelKind k) noexcept { return k != ModelKind::nqs; }

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 100;
  ModelKind kind = ModelKind::nqs;
  double dropout_hidden = 0.0; // on h before the output projection
  double dropout_user = 0.0;   // on U before the init projection

  void validate() const {
    if (vocab_size < 2)
      throw std::invalid_argument("vocab_size must be at least 2, got " +
                                  std::to_string(vocab_size));
    if (hidden_dim < 1)
      throw std::invalid_argument("hidden_dim must be at least 1");
    for (double d : {dropout_hidden, dropout_user})
      if (!(d >= 0.0 && d < 1.0))
        throw std::invalid_argument("dropout must lie in [0, 1), got " + std::to_string(d));
  }
};

/// A flat view of one parameter tensor. `vocab_columns` marks matrices whose
/// columns are indexed by token id (sparse updates touch only used columns).
struct ParamView {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  std::span<double> values;
  bool vocab_columns;
};

struct ModelParams {
  GruParams session_gru;               // d_h x V inputs, d_h x d_h recurrent
  std::optional<GruParams> user_gru;   // d_h x d_h throughout
  std::optional<Matrix> init_weight;   // W, d_h x d_h
  std::optional<Vector> init_bias;     // b_0, d_h
  std::optional<Matrix> attention;     // W_a, d_h x d_h
  Matrix output;                       // W_out, d_h x V

  static ModelParams zeros(const ModelConfig &cfg) {
    cfg.validate();
    const std::size_t dh = cfg.hidden_dim, v = cfg.vocab_size;
    ModelParams p;
    p.session_gru = GruParams::zeros(dh, v);
    p.output = Matrix(dh, v);
    if (is_hierarchical(cfg.kind)) {
      p.user_gru = GruParams::zeros(dh, dh);
      p.init_weight = Matrix(dh, dh);
      p.init_bias = Vector(dh);
    }
    if (cfg.kind == ModelKind::ahnqs)
      p.attention = Matrix(dh, dh);
    return p;
  }

  /// Glorot-uniform matrices, zero b_0.
  static ModelParams glorot(const ModelConfig &cfg, Rng &rng) {
    ModelParams p = zeros(cfg);
    const std::size_t dh = cfg.hidden_dim, v = cfg.vocab_size;
    p.session_gru = GruParams::glorot(dh, v, rng);
    glorot_uniform(p.output, rng, dh, v);
    if (p.user_gru) {
      *p.user_gru = GruParams::glorot(dh, dh, rng);
      glorot_uniform(*p.init_weight, rng, dh, dh);
    }
    if (p.attention)
      glorot_uniform(*p.attention, rng, dh, dh);
    return p;
  }

  /// Throws DimensionError unless every component matches `cfg` and exactly
  /// the components of its model kind are present.
  void validate(const ModelConfig &cfg) const {
    const std::size_t dh = cfg.hidden_dim, v = cfg.vocab_size;
    auto expect = [](const Matrix &m, std::size_t r, std::size_t c, const char *what) {
      if (m.rows() != r || m.cols() != c)
        throw DimensionError(std::string(what) + " is " + m.shape_string() + ", expected " +
                             std::to_string(r) + "x" + std::to_string(c));
    };
    session_gru.validate();
    expect(session_gru.input_cand, dh, v, "session GRU input");
    expect(output, dh, v, "output projection");
    const bool hier = is_hierarchical(cfg.kind);
    if (hier != user_gru.has_value() || hier != init_weight.has_value() ||
        hier != init_bias.has_value())
      throw DimensionError("user-level components must be present exactly for hnqs/ahnqs");
    if ((cfg.kind == ModelKind::ahnqs) != attention.has_value())
      throw DimensionError("attention weights must be present exactly for ahnqs");
    if (hier) {
      user_gru->validate();
      expect(user_gru->input_cand, dh, dh, "user GRU input");
      expect(*init_weight, dh, dh, "init projection");
      if (init_bias->dim() != dh)
        throw DimensionError("init bias is vector(" + std::to_string(init_bias->dim()) +
                             "), expected " + std::to_string(dh));
    }
    if (attention)
      expect(*attention, dh, dh, "attention weights");
  }

  /// Visits every parameter tensor in declaration order; b_0 is presented as
  /// a d_h x 1 matrix.
  template <class F> void for_each(F &&f) {
    session_gru.for_each([&](std::string_view n, Matrix &m) {
      f(ParamView{"session_gru." + std::string(n), m.rows(), m.cols(), m.values(),
                  n.starts_with("input")});
    });
    if (user_gru)
      user_gru->for_each([&](std::string_view n, Matrix &m) {
        f(ParamView{"user_gru." + std::string(n), m.rows(), m.cols(), m.values(), false});
      });
    if (init_weight)
      f(ParamView{"init.weight", init_weight->rows(), init_weight->cols(), init_weight->values(),
                  false});
    if (init_bias)
      f(ParamView{"init.bias", init_bias->dim(), 1, init_bias->values(), false});
    if (attention)
      f(ParamView{"attention.weight", attention->rows(), attention->cols(), attention->values(),
                  false});
    f(ParamView{"output.weight", output.rows(), output.cols(), output.values(), true});
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    const_cast<ModelParams *>(this)->for_each([&](const ParamView &v) { n += v.values.size(); });
    return n;
  }

  friend bool operator==(const ModelParams &, const ModelParams &) = default;
};

struct Model {
  ModelConfig config;
  ModelParams params;
};

} // namespace ahnqs
