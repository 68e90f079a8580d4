// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ahnqs/core/gru.hpp"
#include "ahnqs/models/params.hpp"
#include "scalar_oracle.hpp"

namespace testing_support {

inline oracle::Mat to_rows(const ahnqs::Matrix &m) {
  oracle::Mat out(m.rows(), oracle::Vec(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      out[r][c] = m(r, c);
  return out;
}

inline oracle::Vec to_vec(const ahnqs::Vector &v) { return {v.begin(), v.end()}; }

inline oracle::Gru to_oracle(const ahnqs::GruParams &p) {
  return {to_rows(p.input_update), to_rows(p.input_reset), to_rows(p.input_cand),
          to_rows(p.hidden_update), to_rows(p.hidden_reset), to_rows(p.hidden_cand)};
}

inline ahnqs::Vector random_vector(std::size_t n, ahnqs::Rng &rng, double a = 1.0) {
  ahnqs::Vector v(n);
  ahnqs::uniform_fill(v.values(), rng, a);
  return v;
}

inline ahnqs::GruParams random_gru(std::size_t dh, std::size_t in, ahnqs::Rng &rng,
                                   double a = 0.8) {
  auto p = ahnqs::GruParams::zeros(dh, in);
  p.for_each([&](std::string_view, ahnqs::Matrix &m) { ahnqs::uniform_fill(m.values(), rng, a); });
  return p;
}

inline void randomize(ahnqs::ModelParams &p, ahnqs::Rng &rng, double a = 0.8) {
  p.for_each([&](const ahnqs::ParamView &v) { ahnqs::uniform_fill(v.values, rng, a); });
}

inline ahnqs::Model random_model(ahnqs::ModelKind kind, std::size_t vocab, std::size_t dh,
                                 std::uint64_t seed, double a = 0.8) {
  ahnqs::Model m{{vocab, dh, kind}, {}};
  m.params = ahnqs::ModelParams::zeros(m.config);
  ahnqs::Rng rng = ahnqs::derive_rng(seed, 77);
  randomize(m.params, rng, a);
  return m;
}

inline oracle::HierModel to_oracle(const ahnqs::Model &m) {
  oracle::HierModel o;
  o.kind = static_cast<int>(m.config.kind);
  o.vocab = m.config.vocab_size;
  o.session = to_oracle(m.params.session_gru);
  o.Wout = to_rows(m.params.output);
  if (m.params.user_gru) {
    o.user = to_oracle(*m.params.user_gru);
    o.W = to_rows(*m.params.init_weight);
    o.b0 = to_vec(*m.params.init_bias);
  }
  if (m.params.attention)
    o.Wa = to_rows(*m.params.attention);
  return o;
}

} // namespace testing_support
