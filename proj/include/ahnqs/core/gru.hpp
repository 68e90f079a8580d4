// SPDX-License-Identifier: Apache-2.0
//
// Bias-free gated recurrent unit with an analytic backward pass.
//
//   u  = sigmoid(I_u x + H_u h)
//   r  = sigmoid(I_r x + H_r h)
//   c  = tanh(I x + H (r * h))
//   h' = (1 - u) * h + u * c
//
// Inputs come either as a dense vector or as a token id; a token id selects a
// column of the input matrices instead of multiplying by a one-hot vector.

#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

#include "ahnqs/core/activations.hpp"
#include "ahnqs/core/linalg.hpp"
#include "ahnqs/core/random.hpp"

namespace ahnqs {

struct GruParams {
  Matrix input_update;  // I_u, d_h x in_dim
  Matrix input_reset;   // I_r
  Matrix input_cand;    // I
  Matrix hidden_update; // H_u, d_h x d_h
  Matrix hidden_reset;  // H_r
  Matrix hidden_cand;   // H

  static GruParams zeros(std::size_t hidden_dim, std::size_t input_dim) {
    GruParams p;
    for (Matrix *m : {&p.input_update, &p.input_reset, &p.input_cand})
      *m = Matrix(hidden_dim, input_dim);
    for (Matrix *m : {&p.hidden_update, &p.hidden_reset, &p.hidden_cand})
      *m = Matrix(hidden_dim, hidden_dim);
    return p;
  }

  static GruParams glorot(std::size_t hidden_dim, std::size_t input_dim, Rng &rng) {
    GruParams p = zeros(hidden_dim, input_dim);
    for (Matrix *m : {&p.input_update, &p.input_reset, &p.input_cand})
      glorot_uniform(*m, rng, input_dim, hidden_dim);
    for (Matrix *m : {&p.hidden_update, &p.hidden_reset, &p.hidden_cand})
      glorot_uniform(*m, rng, hidden_dim, hidden_dim);
    return p;
  }

  std::size_t hidden_dim() const noexcept { return hidden_cand.rows(); }
  std::size_t input_dim() const noexcept { return input_cand.cols(); }

  void validate() const {
    const std::size_t dh = hidden_dim();
    const std::size_t in = input_dim();
    if (dh == 0)
      throw DimensionError("GRU hidden dimension must be positive");
    for (const Matrix *m : {&input_update, &input_reset, &input_cand})
      if (m->rows() != dh || m->cols() != in)
        throw DimensionError("GRU input matrix " + m->shape_string() + " inconsistent with " +
                             std::to_string(dh) + "x" + std::to_string(in));
    for (const Matrix *m : {&hidden_update, &hidden_reset, &hidden_cand})
      if (m->rows() != dh || m->cols() != dh)
        throw DimensionError("GRU hidden matrix " + m->shape_string() + " inconsistent with " +
                             std::to_string(dh) + "x" + std::to_string(dh));
  }

  /// Visits the six matrices in declaration order.
  template <class F> void for_each(F &&f) {
    f(std::string_view{"input_update"}, input_update);
    f(std::string_view{"input_reset"}, input_reset);
    f(std::string_view{"input_cand"}, input_cand);
    f(std::string_view{"hidden_update"}, hidden_update);
    f(std::string_view{"hidden_reset"}, hidden_reset);
    f(std::string_view{"hidden_cand"}, hidden_cand);
  }
  template <class F> void for_each(F &&f) const {
    const_cast<GruParams *>(this)->for_each([&](std::string_view name, Matrix &m) {
      f(name, static_cast<const Matrix &>(m));
    });
  }

  friend bool operator==(const GruParams &, const GruParams &) = default;
};

/// Everything the backward pass needs from one forward step.
struct GruStepCache {
  std::optional<std::size_t> token; // set for one-hot input
  Vector x;                         // dense input, empty when `token` is set
  Vector h_prev;
  Vector update;
  Vector reset;
  Vector cand;
  Vector h_next;
  bool update_frozen = false;
};

/// Test hook: pin the update gate to a constant.
struct GruForwardOptions {
  std::optional<double> update_gate_override;
};

struct GruGrads {
  GruParams weights;
  Vector input;
  Vector h_prev;
};

namespace detail {

inline void check_hidden(const GruParams &p, const Vector &h_prev) {
  if (h_prev.dim() != p.hidden_dim())
    throw DimensionError("gru: h_prev vector(" + std::to_string(h_prev.dim()) +
                         ") vs hidden dim " + std::to_string(p.hidden_dim()));
}

/// Shared tail of the forward pass once the input contributions
/// (I_u x, I_r x, I x) are known.
inline void gru_finish(const GruParams &p, GruStepCache &c, Vector in_update, Vector in_reset,
                       Vector in_cand, const GruForwardOptions &opts) {
  const std::size_t dh = p.hidden_dim();
  add_in_place(in_update, matvec(p.hidden_update, c.h_prev));
  add_in_place(in_reset, matvec(p.hidden_reset, c.h_prev));
  if (opts.update_gate_override) {
    c.update = Vector(dh, *opts.update_gate_override);
    c.update_frozen = true;
  } else {
    c.update = sigmoid(in_update);
  }
  c.reset = sigmoid(in_reset);
  add_in_place(in_cand, matvec(p.hidden_cand, hadamard(c.reset, c.h_prev)));
  c.cand = tanh(in_cand);
  c.h_next = Vector(dh);
  for (std::size_t i = 0; i < dh; ++i)
    c.h_next[i] = (1.0 - c.update[i]) * c.h_prev[i] + c.update[i] * c.cand[i];
}

} // namespace detail

/// Dense-input step.
inline GruStepCache gru_forward(const GruParams &p, const Vector &x, const Vector &h_prev,
                                const GruForwardOptions &opts = {}) {
  detail::check_hidden(p, h_prev);
  if (x.dim() != p.input_dim())
    throw DimensionError("gru: input vector(" + std::to_string(x.dim()) + ") vs input dim " +
                         std::to_string(p.input_dim()));
  GruStepCache c;
  c.x = x;
  c.h_prev = h_prev;
  detail::gru_finish(p, c, matvec(p.input_update, x), matvec(p.input_reset, x),
                     matvec(p.input_cand, x), opts);
  return c;
}

/// One-hot step: `token` selects a column of each input matrix.
inline GruStepCache gru_forward_token(const GruParams &p, std::size_t token, const Vector &h_prev,
                                      const GruForwardOptions &opts = {}) {
  detail::check_hidden(p, h_prev);
  if (token >= p.input_dim())
    throw DimensionError("gru: token " + std::to_string(token) + " out of range for input dim " +
                         std::to_string(p.input_dim()));
  GruStepCache c;
  c.token = token;
  c.h_prev = h_prev;
  detail::gru_finish(p, c, column(p.input_update, token), column(p.input_reset, token),
                     column(p.input_cand, token), opts);
  return c;
}

/// Gradients of the three gate pre-activations for one step.
struct GruPreactGrads {
  Vector update;
  Vector reset;
  Vector cand;
};

/// Accumulates parameter gradients into `acc` and returns dL/dh_prev. When
/// `preact` is non-null the gate pre-activation gradients are stored there
/// (callers use them to form the input gradient).
inline Vector gru_backward_accumulate(const GruParams &p, const GruStepCache &c,
                                      const Vector &dh_next, GruParams &acc,
                                      GruPreactGrads *preact = nullptr) {
  const std::size_t dh = p.hidden_dim();
  if (dh_next.dim() != dh || c.h_prev.dim() != dh)
    throw DimensionError("gru_backward: upstream vector(" + std::to_string(dh_next.dim()) +
                         ") vs hidden dim " + std::to_string(dh));

  Vector d_cand_pre(dh), d_update_pre(dh), dh_prev(dh);
  for (std::size_t i = 0; i < dh; ++i) {
    const double g = dh_next[i];
    d_cand_pre[i] = g * c.update[i] * (1.0 - c.cand[i] * c.cand[i]);
    if (!c.update_frozen)
      d_update_pre[i] = g * (c.cand[i] - c.h_prev[i]) * c.update[i] * (1.0 - c.update[i]);
    dh_prev[i] = g * (1.0 - c.update[i]);
  }

  // candidate path: H (r * h)
  const Vector reset_h = hadamard(c.reset, c.h_prev);
  add_outer(acc.hidden_cand, d_cand_pre, reset_h);
  const Vector d_reset_h = matvec_transposed(p.hidden_cand, d_cand_pre);
  Vector d_reset_pre(dh);
  for (std::size_t i = 0; i < dh; ++i) {
    d_reset_pre[i] = d_reset_h[i] * c.h_prev[i] * c.reset[i] * (1.0 - c.reset[i]);
    dh_prev[i] += d_reset_h[i] * c.reset[i];
  }

  add_outer(acc.hidden_reset, d_reset_pre, c.h_prev);
  add_outer(acc.hidden_update, d_update_pre, c.h_prev);
  add_matvec_transposed(dh_prev, p.hidden_reset, d_reset_pre);
  add_matvec_transposed(dh_prev, p.hidden_update, d_update_pre);

  if (c.token) {
    add_to_column(acc.input_update, *c.token, d_update_pre);
    add_to_column(acc.input_reset, *c.token, d_reset_pre);
    add_to_column(acc.input_cand, *c.token, d_cand_pre);
  } else {
    add_outer(acc.input_update, d_update_pre, c.x);
    add_outer(acc.input_reset, d_reset_pre, c.x);
    add_outer(acc.input_cand, d_cand_pre, c.x);
  }

  if (preact)
    *preact = {std::move(d_update_pre), std::move(d_reset_pre), std::move(d_cand_pre)};
  return dh_prev;
}

/// Gradient of the input vector given the pre-activation gradients.
inline Vector gru_input_grad(const GruParams &p, const GruPreactGrads &g) {
  Vector dx = matvec_transposed(p.input_update, g.update);
  add_matvec_transposed(dx, p.input_reset, g.reset);
  add_matvec_transposed(dx, p.input_cand, g.cand);
  return dx;
}

/// Gradients of every parameter, the input and h_prev for the loss flowing in
/// through `dh_next`. For one-hot input the input gradient is over all
/// `input_dim` coordinates.
inline GruGrads gru_backward(const GruParams &p, const GruStepCache &c, const Vector &dh_next) {
  GruGrads out;
  out.weights = GruParams::zeros(p.hidden_dim(), p.input_dim());
  GruPreactGrads pre;
  out.h_prev = gru_backward_accumulate(p, c, dh_next, out.weights, &pre);
  out.input = gru_input_grad(p, pre);
  return out;
}

} // namespace ahnqs
