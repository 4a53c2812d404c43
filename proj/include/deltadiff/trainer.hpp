#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "deltadiff/adam.hpp"
#include "deltadiff/data.hpp"
#include "deltadiff/denoiser.hpp"
#include "deltadiff/diffusion.hpp"
#include "deltadiff/errors.hpp"
#include "deltadiff/metrics.hpp"
#include "deltadiff/schedule.hpp"

namespace deltadiff {

struct TrainConfig {
  double lr = 5e-5;
  int batch_size = 8;
  std::int64_t max_steps = 5000;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 500;
  std::int64_t log_every = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool clip_grad = false;
  double clip_threshold = 1.0;

  AdamConfig adam() const { return {lr, adam_beta1, adam_beta2, adam_eps}; }
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.lr >= 0.0)) throw ArgumentError("train: lr must be >= 0");
  if (cfg.batch_size < 1) throw ArgumentError("train: batch_size must be >= 1");
  if (cfg.max_steps < 0) throw ArgumentError("train: max_steps must be >= 0");
  if (!(cfg.adam_beta1 > 0.0 && cfg.adam_beta1 < cfg.adam_beta2 && cfg.adam_beta2 < 1.0))
    throw ArgumentError("train: need 0 < adam_beta1 < adam_beta2 < 1");
  if (!(cfg.adam_eps > 0.0)) throw ArgumentError("train: adam_eps must be > 0");
  if (cfg.checkpoint_every < 0 || cfg.log_every < 0)
    throw ArgumentError("train: checkpoint_every and log_every must be >= 0");
}

struct TrainState {
  DenoiserParams<float> params;
  ParamGrads<float> adam_m;
  ParamGrads<float> adam_v;
  std::int64_t step = 0;
  std::vector<std::pair<std::int64_t, double>> loss_history;
};

inline TrainState make_train_state(DenoiserParams<float> params) {
  TrainState s;
  s.adam_m = zero_grads(params);
  s.adam_v = zero_grads(params);
  s.params = std::move(params);
  return s;
}

/// MSE between the prediction at forward state t and HR.
template <typename S>
double loss(const DenoiserParams<S>& params, const LrHrPair& pair, int t, const EtaSchedule& s) {
  const DiffusionState y_t = forward_state(pair.hr, pair.lr_up, s, t);
  return mean_squared_error(predict(params, y_t.image, t, pair.lr_up), pair.hr);
}

/// Loss of one sample and its gradient, accumulated into grads with the given weight.
template <typename S>
double accumulate_loss_grad(DenoiserNet<S>& net, const LrHrPair& pair, int t, const EtaSchedule& s,
                            double weight, ParamGrads<S>& grads) {
  const DiffusionState y_t = forward_state(pair.hr, pair.lr_up, s, t);
  const nn::Tensor<S> lr_up = to_tensor<S>(pair.lr_up);
  const nn::Tensor<S> hr = to_tensor<S>(pair.hr);
  const nn::Tensor<S>& delta = net.forward(to_tensor<S>(y_t.image), t, lr_up);
  nn::Tensor<S> d_delta(delta.c, delta.h, delta.w);
  const double n = static_cast<double>(delta.v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < delta.v.size(); ++i) {
    const double diff = static_cast<double>(lr_up.v[i]) + delta.v[i] - hr.v[i];
    acc += diff * diff;
    d_delta.v[i] = static_cast<S>(weight * 2.0 * diff / n);
  }
  net.backward(d_delta, grads);
  return acc / n;
}

/// Per-step generator: the step's randomness depends only on (seed, step),
/// so resumed runs replay the same batches and timesteps.
inline std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step) {
  const auto s = static_cast<std::uint64_t>(step);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

/// One Adam step on the mean loss of the batch, with t ~ U{1..T} drawn per element.
template <typename Rng>
double train_step(TrainState& state, const std::vector<LrHrPair>& batch, const EtaSchedule& s, Rng& rng,
                  const TrainConfig& cfg) {
  if (batch.empty()) throw ArgumentError("train_step: empty batch");
  ParamGrads<float> grads = zero_grads(state.params);
  DenoiserNet<float> net(state.params);
  std::uniform_int_distribution<int> pick_t(1, s.steps());
  const double weight = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& pair : batch) {
    const int t = pick_t(rng);
    total += accumulate_loss_grad(net, pair, t, s, weight, grads);
  }
  const double mean_loss = total * weight;
  if (!std::isfinite(mean_loss)) {
    throw StateError("train_step: non-finite loss at step " + std::to_string(state.step + 1));
  }
  if (cfg.clip_grad) {
    double sq = 0.0;
    for (const auto& g : grads)
      for (float v : g) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_threshold) {
      const auto scale = static_cast<float>(cfg.clip_threshold / norm);
      for (auto& g : grads)
        for (float& v : g) v *= scale;
    }
  }
  ++state.step;
  const AdamConfig adam = cfg.adam();
  for (std::size_t i = 0; i < grads.size(); ++i) {
    adam_update<float>(state.params.tensors[i].values, grads[i], state.adam_m[i], state.adam_v[i], adam, state.step);
  }
  if (!state.params.all_finite()) {
    throw StateError("train_step: non-finite weights after step " + std::to_string(state.step));
  }
  state.loss_history.emplace_back(state.step, mean_loss);
  return mean_loss;
}

/// Draws a training batch of random patches from a pool of HR images.
template <typename Rng>
std::vector<LrHrPair> draw_batch(const std::vector<ImagePlane>& pool, const DatasetSpec& spec, int batch_size,
                                 Rng& rng) {
  if (pool.empty()) throw ArgumentError("draw_batch: empty image pool");
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<LrHrPair> batch;
  batch.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) batch.push_back(random_patch(pool[pick(rng)], spec, rng));
  return batch;
}

/// Mean PSNR / SSIM of full reverse-process samples against HR, plus the
/// same metrics for the lr_up baseline.
struct SampleEval {
  double psnr = 0.0;
  double ssim = 0.0;
  double baseline_psnr = 0.0;
  double baseline_ssim = 0.0;
};

template <typename S>
SampleEval evaluate_samples(const DenoiserParams<S>& params, const std::vector<LrHrPair>& pairs,
                            const EtaSchedule& s) {
  SampleEval e;
  if (pairs.empty()) return e;
  DenoiserPredictor<S> predictor{&params};
  for (const auto& p : pairs) {
    const ImagePlane sr = sample(p.lr_up, predictor, s).first;
    e.psnr += psnr(sr, p.hr);
    e.baseline_psnr += psnr(p.lr_up, p.hr);
    if (p.hr.height() >= 11 && p.hr.width() >= 11) {
      e.ssim += ssim(sr, p.hr);
      e.baseline_ssim += ssim(p.lr_up, p.hr);
    }
  }
  const double n = static_cast<double>(pairs.size());
  e.psnr /= n;
  e.ssim /= n;
  e.baseline_psnr /= n;
  e.baseline_ssim /= n;
  return e;
}

struct TrainHooks {
  /// Called every log_every steps with (step, loss); returns nothing.
  std::function<void(std::int64_t, double)> on_log;
  /// Called every checkpoint_every steps and after the final step.
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Runs train_step until state.step reaches cfg.max_steps.
inline void train(TrainState& state, const std::vector<ImagePlane>& pool, const DatasetSpec& spec,
                  const EtaSchedule& s, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  validate(cfg);
  validate(spec, state.params.config.depth);
  while (state.step < cfg.max_steps) {
    auto rng = step_rng(cfg.seed, state.step);
    const auto batch = draw_batch(pool, spec, cfg.batch_size, rng);
    const double l = train_step(state, batch, s, rng, cfg);
    if (hooks.on_log && cfg.log_every > 0 && state.step % cfg.log_every == 0) hooks.on_log(state.step, l);
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 &&
        state.step != cfg.max_steps) {
      hooks.on_checkpoint(state);
    }
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(state);
}

}  // namespace deltadiff
