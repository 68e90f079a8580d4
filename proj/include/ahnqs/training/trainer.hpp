// SPDX-License-Identifier: Apache-2.0
//
// Epoch loop: session-parallel batches, in-batch negatives, TOP1, one
// optimizer step per batch step, validation after every epoch.

#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ahnqs/batcher.hpp"
#include "ahnqs/core/random.hpp"
#include "ahnqs/evaluation.hpp"
#include "ahnqs/models.hpp"
#include "ahnqs/training/backward.hpp"
#include "ahnqs/training/optimizer.hpp"

namespace ahnqs {

struct TrainConfig {
  std::size_t batch_size = 50;
  double learning_rate = 0.01;
  double momentum = 0.0;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  std::optional<std::size_t> min_negatives; // default: batch_size - 1
  std::optional<double> clip_norm;          // off by default
  std::size_t eval_k = 10;
  std::size_t eval_threads = 1;

  void validate() const {
    if (batch_size < 1)
      throw std::invalid_argument("batch_size must be at least 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("learning_rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("momentum must lie in [0, 1)");
    if (epochs < 1)
      throw std::invalid_argument("epochs must be at least 1");
    if (clip_norm && !(*clip_norm > 0.0))
      throw std::invalid_argument("clip_norm must be positive");
    if (eval_k < 1)
      throw std::invalid_argument("eval_k must be at least 1");
  }

  std::size_t negatives() const { return min_negatives.value_or(std::max<std::size_t>(1, batch_size - 1)); }
};

/// Default learning rate and dropout for a model kind.
struct ModelDefaults {
  double learning_rate;
  double dropout;
};

inline ModelDefaults defaults_for(ModelKind k) {
  return k == ModelKind::nqs ? ModelDefaults{0.01, 0.5} : ModelDefaults{0.1, 0.1};
}

struct EpochReport {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t terms = 0; // TOP1 terms averaged
  std::size_t batch_steps = 0;
  std::optional<MetricRow> valid;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  double seconds = 0.0;
};

inline nlohmann::json to_json(const EpochReport &e, std::size_t k) {
  nlohmann::json j = {{"epoch", e.epoch},
                      {"mean_loss", e.mean_loss},
                      {"terms", e.terms},
                      {"batch_steps", e.batch_steps},
                      {"seconds", e.seconds}};
  if (e.valid)
    j["valid"] = to_json(*e.valid, k);
  return j;
}

inline nlohmann::json to_json(const TrainReport &r, std::size_t k) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto &e : r.epochs)
    epochs.push_back(to_json(e, k));
  return {{"epochs", epochs}, {"seconds", r.seconds}};
}

class TrainingDiverged : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Model model;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochReport &, const Model &)>;

/// Optional observers. `on_session_end` sees every user-state update made
/// while training (hierarchical models only).
struct TrainHooks {
  EpochCallback on_epoch;
  std::function<void(const SessionEnd &)> on_session_end;
};

/// Fresh Glorot-initialised model; the stream is derived from `seed`.
inline Model init_model(const ModelConfig &cfg, std::uint64_t seed) {
  Rng rng = derive_rng(seed, 0x1417);
  return {cfg, ModelParams::glorot(cfg, rng)};
}

namespace detail {

inline Vector draw_mask(std::size_t dim, double rate, Rng &rng) {
  if (rate <= 0.0)
    return {};
  Vector m(dim);
  for (std::size_t i = 0; i < dim; ++i)
    m[i] = uniform01(rng) < rate ? 0.0 : 1.0 / (1.0 - rate);
  return m;
}

} // namespace detail

/// Trains `model` in place on `train`; `valid` (may be empty) is evaluated
/// after every epoch with `train` as the users' history.
inline TrainReport train_model(Model &model, const Histories &train, const Histories &valid,
                               const TrainConfig &cfg, const TrainHooks &hooks = {}) {
  cfg.validate();
  model.config.validate();
  model.params.validate(model.config);
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();

  const bool sparse = cfg.momentum == 0.0;
  OptState opt = OptState::for_config(model.config);
  ModelParams grads = ModelParams::zeros(model.config);
  std::vector<TokenId> touched;
  const std::size_t dh = model.config.hidden_dim;
  const std::size_t V = model.config.vocab_size;

  TrainReport report;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto e0 = Clock::now();
    Rng dropout_rng = derive_rng(cfg.seed, 1000 + epoch);
    Rng negative_rng = derive_rng(cfg.seed, 2000 + epoch);
    BatchSchedule schedule(train, cfg.batch_size, cfg.seed + epoch);
    std::vector<SlotState> slots(cfg.batch_size);
    EpochReport er;
    er.epoch = epoch;
    double loss_sum = 0.0;

    while (auto step = schedule.next()) {
      ++er.batch_steps;
      // forward: move every active slot one query ahead
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        if (!step->active[i])
          continue;
        const auto &slot = step->slots[i];
        auto &st = slots[i];
        if (slot.user_start) {
          begin_user(model, st, &dropout_rng);
        } else if (slot.session_start) {
          if (!st.current.empty()) {
            const SessionEnd *end = finish_session(model, st);
            if (end && hooks.on_session_end)
              hooks.on_session_end(*end);
          }
          begin_session(model, st, &dropout_rng);
        }
        advance(model, st, slot.input);
      }
      // backward: mean TOP1 over active slots
      const std::size_t active = step->active_count();
      const double weight = 1.0 / static_cast<double>(active);
      double step_loss = 0.0;
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        if (!step->active[i])
          continue;
        const auto negs = negatives_for(*step, i, V, cfg.negatives(), negative_rng);
        const Vector mask = detail::draw_mask(dh, model.config.dropout_hidden, dropout_rng);
        step_loss += accumulate_step_gradient(model, slots[i], step->slots[i].target, negs, mask,
                                              grads, touched, weight);
      }
      if (!std::isfinite(step_loss))
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                               ", batch step " + std::to_string(er.batch_steps) +
                               ": non-finite loss");
      loss_sum += step_loss;
      er.terms += active;

      const std::vector<TokenId> cols = unique_columns(std::move(touched));
      touched.clear();
      const std::vector<TokenId> *colp = sparse ? &cols : nullptr;
      if (cfg.clip_norm)
        clip_gradients(grads, *cfg.clip_norm, colp);
      try {
        adagrad_momentum_step(opt, model.params, grads, cfg.learning_rate, cfg.momentum, colp);
      } catch (const std::domain_error &e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                               ", batch step " + std::to_string(er.batch_steps) + ": " +
                               e.what());
      }
      zero_gradients(grads, colp);
    }

    er.mean_loss = er.terms ? loss_sum / static_cast<double>(er.terms) : 0.0;
    if (!valid.empty()) {
      const auto points = collect_points([&] { return ModelRanker(model); }, valid, train,
                                         cfg.eval_k, cfg.eval_threads);
      er.valid = compute_metrics(points, cfg.eval_k);
    }
    er.seconds = std::chrono::duration<double>(Clock::now() - e0).count();
    report.epochs.push_back(er);
    if (hooks.on_epoch)
      hooks.on_epoch(er, model);
  }
  report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

inline TrainResult train(const Histories &train_split, const Histories &valid,
                         const ModelConfig &mcfg, const TrainConfig &cfg,
                         const TrainHooks &hooks = {}) {
  TrainResult out{init_model(mcfg, cfg.seed), {}};
  out.report = train_model(out.model, train_split, valid, cfg, hooks);
  return out;
}

/// Reads a flat JSON object whose keys mirror TrainConfig (plus the two
/// dropout rates of ModelConfig). Unknown keys are rejected.
inline void apply_config_json(const nlohmann::json &j, TrainConfig &cfg, ModelConfig &mcfg) {
  if (!j.is_object())
    throw std::invalid_argument("training config must be a JSON object");
  for (const auto &[key, v] : j.items()) {
    if (key == "batch_size")
      cfg.batch_size = v.get<std::size_t>();
    else if (key == "learning_rate")
      cfg.learning_rate = v.get<double>();
    else if (key == "momentum")
      cfg.momentum = v.get<double>();
    else if (key == "epochs")
      cfg.epochs = v.get<std::size_t>();
    else if (key == "seed")
      cfg.seed = v.get<std::uint64_t>();
    else if (key == "min_negatives")
      cfg.min_negatives = v.get<std::size_t>();
    else if (key == "clip_norm")
      cfg.clip_norm = v.get<double>();
    else if (key == "eval_k")
      cfg.eval_k = v.get<std::size_t>();
    else if (key == "dropout_hidden")
      mcfg.dropout_hidden = v.get<double>();
    else if (key == "dropout_user")
      mcfg.dropout_user = v.get<double>();
    else if (key == "hidden_dim")
      mcfg.hidden_dim = v.get<std::size_t>();
    else
      throw std::invalid_argument("unknown training config key '" + key + "'");
  }
}

} // namespace ahnqs
