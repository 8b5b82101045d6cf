#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wz/model.hpp"

// Mini-batch Adam training with per-epoch reshuffling and early stopping on
// validation loss. The objective is w_speed * Huber(pred, actual) over masked
// cells, measured in mph, plus w_incident * cross-entropy on the incident
// head. The best-validation parameters are what training returns, not the
// final ones.

namespace wz {

struct TrainingConfig {
  double s_max = 80.0;  // speed full scale; must match the sample normalization
  double huber_delta_mph = 5.0;
  double w_speed = 1.0;
  double w_incident = 0.5;
  AdamConfig adam;
  int batch_size = 16;
  int max_epochs = 200;
  int patience = 10;
  double improvement_eps = 1e-6;
  std::uint64_t seed = 0;

  void validate() const {
    if (s_max <= 0) throw config_error("training s_max must be positive");
    if (huber_delta_mph <= 0) throw config_error("huber delta must be positive");
    if (w_speed < 0 || w_incident < 0 || (w_speed == 0 && w_incident == 0))
      throw config_error("loss weights must be non-negative and not both zero");
    if (batch_size < 1) throw config_error("batch size must be at least 1");
    if (max_epochs < 1) throw config_error("max_epochs must be at least 1");
    if (patience < 1) throw config_error("patience must be at least 1");
    if (improvement_eps < 0) throw config_error("improvement_eps must be non-negative");
    // lr == 0 is legal on purpose: it turns training into a null-update audit
    // where the checkpoint must equal the initialization bit-for-bit.
    if (adam.lr < 0 || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 ||
        adam.beta2 >= 1 || adam.eps <= 0)
      throw config_error("adam settings invalid");
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainingHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

inline constexpr std::uint64_t kShuffleStreamBase = 0x100;

// Fisher-Yates draw from the per-epoch stream, so the visit order depends
// only on (seed, epoch), never on batch size or history.
inline std::vector<int> epoch_order(int count, std::uint64_t seed, int epoch) {
  if (count < 0) throw std::invalid_argument("epoch_order: negative count");
  std::vector<int> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), 0);
  SplitMix64 rng = seeded_rng(seed, kShuffleStreamBase + static_cast<std::uint64_t>(epoch));
  for (int i = count - 1; i > 0; --i)
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  return idx;
}

namespace detail {

template <typename S>
Tensor<S> scaled(const Tensor<S>& t, S s) {
  Tensor<S> out(t.shape());
  out.array() = t.array() * s;
  return out;
}

}  // namespace detail

template <typename S>
double sample_loss(const PredictionOutput<S>& out, const Sample<S>& s,
                   const TrainingConfig& cfg) {
  const S smax = static_cast<S>(cfg.s_max);
  const S h = huber_loss(detail::scaled(out.y_speed, smax), detail::scaled(s.y_speed, smax),
                         s.image.mask, static_cast<S>(cfg.huber_delta_mph));
  const S ce = cross_entropy(out.p_incident, s.y_incident);
  return static_cast<double>(
      combined_loss(h, ce, static_cast<S>(cfg.w_speed), static_cast<S>(cfg.w_incident)));
}

template <typename S>
double evaluate_loss(const std::vector<Sample<S>>& data, const ModelParams<S>& params,
                     const TrainingConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("evaluate_loss: empty data");
  double total = 0;
  BatchCache<S> cache;
  for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
    const std::size_t stop = std::min(data.size(), start + cfg.batch_size);
    std::vector<const Sample<S>*> batch;
    for (std::size_t i = start; i < stop; ++i) batch.push_back(&data[i]);
    auto outs = model_forward_batch(batch, params, cache);
    for (std::size_t i = 0; i < batch.size(); ++i) total += sample_loss(outs[i], *batch[i], cfg);
  }
  return total / static_cast<double>(data.size());
}

template <typename S>
ModelParams<S> train_model(const ModelConfig& mcfg, const std::vector<Sample<S>>& train,
                           const std::vector<Sample<S>>& val, const TrainingConfig& cfg,
                           TrainingHistory* history = nullptr,
                           const std::function<void(const EpochStats&)>& on_epoch = {}) {
  mcfg.validate();
  cfg.validate();
  if (train.empty() || val.empty())
    throw std::invalid_argument("train_model: training and validation sets must be non-empty");

  ModelParams<S> params = init_params<S>(mcfg, cfg.seed);
  std::vector<Tensor<S>*> param_ptrs;
  std::vector<const Tensor<S>*> cparam_ptrs;
  for (auto& [name, t] : params.entries()) {
    param_ptrs.push_back(t);
    cparam_ptrs.push_back(t);
  }
  AdamState<S> adam = make_adam_state(cparam_ptrs, cfg.adam);

  TrainingHistory local;
  TrainingHistory& hist = history ? *history : local;
  hist = TrainingHistory{};
  ModelParams<S> best = params;
  int epochs_since_best = 0;
  BatchCache<S> cache;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const std::vector<int> order = epoch_order(static_cast<int>(train.size()), cfg.seed, epoch);
    double train_total = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Sample<S>*> batch;
      for (std::size_t i = start; i < stop; ++i)
        batch.push_back(&train[static_cast<std::size_t>(order[i])]);

      auto outs = model_forward_batch(batch, params, cache);
      const S smax = static_cast<S>(cfg.s_max);
      const S inv_b = S(1) / static_cast<S>(batch.size());
      std::vector<Tensor<S>> dys, dlogits;
      dys.reserve(batch.size());
      dlogits.reserve(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const Sample<S>& s = *batch[i];
        train_total += sample_loss(outs[i], s, cfg);
        const Tensor<S> hg =
            huber_loss_grad(detail::scaled(outs[i].y_speed, smax), detail::scaled(s.y_speed, smax),
                            s.image.mask, static_cast<S>(cfg.huber_delta_mph));
        dys.push_back(detail::scaled(hg, static_cast<S>(cfg.w_speed) * smax * inv_b));
        dlogits.push_back(
            detail::scaled(softmax_cross_entropy_logit_grad(outs[i].p_incident, s.y_incident),
                           static_cast<S>(cfg.w_incident) * inv_b));
      }

      ModelParams<S> grads = model_backward_batch(params, cache, dys, dlogits);
      std::vector<const Tensor<S>*> grad_ptrs;
      for (auto& [name, g] : grads.entries()) grad_ptrs.push_back(g);
      adam_step(param_ptrs, grad_ptrs, adam);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = train_total / static_cast<double>(train.size());
    stats.val_loss = evaluate_loss(val, params, cfg);
    hist.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (stats.val_loss < hist.best_val_loss - cfg.improvement_eps) {
      hist.best_val_loss = stats.val_loss;
      hist.best_epoch = epoch;
      best = params;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= cfg.patience) {
      hist.early_stopped = true;
      break;
    }
  }
  return best;
}

}  // namespace wz
