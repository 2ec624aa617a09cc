// Copyright 2026 The emalab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
//
// The training step:
//   views -> online forward (both views) -> target path per policy -> loss
//   -> backward -> SGD with momentum -> BN running stats -> EMA of targets
//   -> queue / center bookkeeping -> telemetry.

#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "emalab/data.hpp"
#include "emalab/encoder.hpp"
#include "emalab/eval.hpp"
#include "emalab/momentum.hpp"
#include "emalab/objectives.hpp"
#include "emalab/ops.hpp"
#include "emalab/telemetry.hpp"

namespace emalab {

struct TrainConfig {
  std::size_t steps = 300;
  std::size_t batch = 64;
  double lr = 0.05;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;  // linear weights only
  std::size_t warmup_steps = 0;
  std::uint64_t seed = 0;
  ObjectiveSpec objective;
  MomentumPolicy policy = policy_preset("projector-only", 0.99);
  AugSpec aug;
  bool swap_views = false;  // feed (x2, x1) instead of (x1, x2)

  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& cfg, const EncoderConfig& enc) {
  if (cfg.batch == 0) throw ConfigError("train batch must be positive");
  if (!(cfg.lr > 0.0)) throw ConfigError("train lr must be positive");
  if (!(cfg.sgd_momentum >= 0.0 && cfg.sgd_momentum < 1.0)) throw ConfigError("sgd_momentum out of range [0,1)");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (cfg.steps > 0 && cfg.warmup_steps >= cfg.steps) throw ConfigError("warmup_steps must be smaller than steps");
  validate(enc);
  validate(cfg.policy);
  validate(cfg.objective, enc.has_predictor());
  validate(cfg.aug);
}

// Linear warmup from 0 to lr over warmup_steps, then half-cosine decay to 0.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
  const auto w = static_cast<double>(cfg.warmup_steps);
  const auto t = static_cast<double>(step);
  if (step < cfg.warmup_steps) return cfg.lr * t / w;
  const double span = static_cast<double>(cfg.steps) - w;
  if (span <= 0.0) return cfg.lr;
  return cfg.lr * (1.0 + std::cos(std::numbers::pi * (t - w) / span)) / 2.0;
}

// Heavy-ball SGD on flat buffers: v = mu*v + (g + wd*theta); theta -= lr*v.
inline void sgd_update(std::span<double> theta, std::span<const double> grad, std::span<double> velocity, double lr,
                       double momentum, double weight_decay) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i] + weight_decay * theta[i];
    velocity[i] = momentum * velocity[i] + g;
    theta[i] -= lr * velocity[i];
  }
}

// Velocity buffers laid out like the trainable tensors of a ParamSet.
struct OptimState {
  std::vector<std::vector<std::vector<double>>> velocity;  // [stage][param]
  std::size_t step = 0;

  static OptimState zeros_like(const ParamSet& ps) {
    OptimState s;
    for (const auto& st : ps.stages) {
      auto& v = s.velocity.emplace_back();
      for (const auto& p : st.params) v.emplace_back(is_trainable(p.role) ? p.value.numel() : 0, 0.0);
    }
    return s;
  }
};

// Applies one SGD step to `params` using the gradients of their bound copies.
// Parameters without a gradient entry take a zero gradient.
inline void sgd_step(ParamSet& params, const ParamSet& bound, const GradMap& grads, OptimState& opt, double lr,
                     const TrainConfig& cfg) {
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    auto& st = params.stages[s];
    for (std::size_t i = 0; i < st.params.size(); ++i) {
      Param& p = st.params[i];
      if (!is_trainable(p.role)) continue;
      std::vector<double> theta(p.value.values());
      std::vector<double> g(theta.size(), 0.0);
      if (const Tensor* gt = grads.find(bound.stages[s].params[i].value)) g = gt->values();
      const double wd = p.role == ParamRole::weight ? cfg.weight_decay : 0.0;
      sgd_update(theta, g, opt.velocity[s][i], lr, cfg.sgd_momentum, wd);
      p.value = Tensor(p.value.shape(), std::move(theta));
    }
  }
  ++opt.step;
}

struct TrainState {
  ParamSet online;
  TargetParams target;
  OptimState opt;
  FeatureQueue queue;
  CenterState center;
  ForwardCounter counter;
  Rng aug_rng;
  std::size_t step = 0;
};

inline TrainState init_state(const EncoderConfig& enc, const TrainConfig& cfg) {
  validate(cfg, enc);
  TrainState st;
  st.online = build_encoder(enc);
  st.target = init_target(st.online, cfg.policy);
  st.opt = OptimState::zeros_like(st.online);
  st.queue = FeatureQueue(cfg.objective.queue_size);
  st.center.momentum = cfg.objective.center_momentum;
  st.counter.target_param_bytes = st.target.bytes();
  st.counter.online_param_bytes = online_target_eligible_bytes(st.online);
  std::seed_seq seq{cfg.seed, std::uint64_t{0xA5A5}};
  st.aug_rng.seed(seq);
  return st;
}

struct StepMetrics {
  double loss = 0.0;
  double lr = 0.0;
  std::vector<GradTraceRow> grads;
  ForwardCounter forwards;
  std::size_t target_grad_entries = 0;  // gradients that reached target parameters; must be 0
  std::size_t online_grad_entries = 0;
  double view_gap = 0.0;                // max |x1 - x2|, for liveness diagnostics
};

namespace detail {

inline std::size_t count_grad_entries(const GradMap& grads, const ParamSet& bound) {
  std::size_t n = 0;
  for (const auto& st : bound.stages) {
    for (const auto& p : st.params) n += grads.contains(p.value) ? 1 : 0;
  }
  return n;
}

inline std::size_t count_grad_entries(const GradMap& grads, const TargetParams& bound) {
  std::size_t n = 0;
  for (const auto& st : bound.stages) {
    if (!st) continue;
    for (const auto& p : st->params) n += grads.contains(p.value) ? 1 : 0;
  }
  return n;
}

inline Tensor objective_loss(Tape& tape, const TrainConfig& cfg, const TrainState& st,
                             std::span<const StageActivations> online, std::span<const StageActivations> target) {
  const ObjectiveSpec& obj = cfg.objective;
  const Tensor& z1m = target[0].at(Stage::projector);
  const Tensor& z2m = target[1].at(Stage::projector);
  switch (obj.kind) {
    case ObjectiveKind::neg_cosine:
      return loss_negcos(tape, online[0].at(Stage::predictor), online[1].at(Stage::predictor), z1m, z2m);
    case ObjectiveKind::infonce: {
      const Tensor a = loss_infonce(tape, online[0].at(Stage::projector), z2m, st.queue, obj.tau);
      const Tensor b = loss_infonce(tape, online[1].at(Stage::projector), z1m, st.queue, obj.tau);
      return ops::scale(tape, ops::add(tape, a, b), 0.5);
    }
    case ObjectiveKind::soft_ce: {
      const CenterState* c = obj.centering ? &st.center : nullptr;
      const Tensor a = loss_softce(tape, online[0].at(Stage::projector), z2m, obj.tau_s, obj.tau_t, c);
      const Tensor b = loss_softce(tape, online[1].at(Stage::projector), z1m, obj.tau_s, obj.tau_t, c);
      return ops::scale(tape, ops::add(tape, a, b), 0.5);
    }
  }
  throw ContractError("unknown objective");
}

}  // namespace detail

// One optimizer step on a batch of raw rows. Throws NumericError naming the
// step (and the stage, when an activation went non-finite) on divergence.
inline StepMetrics train_step(TrainState& st, const TrainConfig& cfg, const Tensor& batch) {
  if (batch.rank() != 2 || batch.rows() == 0) throw ContractError("train_step: batch must be non-empty");
  const std::size_t step = st.step;
  const std::string where = "step " + std::to_string(step) + ": ";

  auto [x1, x2] = make_views(batch, cfg.aug, st.aug_rng);
  if (cfg.swap_views) std::swap(x1, x2);
  const std::array<Tensor, 2> views = {x1, x2};

  StepMetrics m;
  m.lr = lr_at(step, cfg);
  m.view_gap = max_abs_diff(x1, x2);

  Tape tape;
  const ParamSet bound = bind(tape, st.online);
  const TargetParams target_bound = bind(tape, st.target);
  std::array<StageActivations, 2> online;
  TargetForward target;
  Tensor loss;
  try {
    online[0] = forward_stages(tape, bound, x1, {Mode::train, true});
    online[1] = forward_stages(tape, bound, x2, {Mode::train, true});
    target = resolve_target_forward(tape, online, bound, target_bound, cfg.policy, views, Mode::train);
    loss = detail::objective_loss(tape, cfg, st, online, target.views);
  } catch (const NumericError& e) {
    throw NumericError(where + e.what());
  }
  if (!std::isfinite(loss.item())) throw NumericError(where + "non-finite loss");

  const GradMap grads = tape.backward(loss);
  m.loss = loss.item();
  m.grads = record_stage_grads(step, grads, online);
  m.target_grad_entries = detail::count_grad_entries(grads, target_bound);
  m.online_grad_entries = detail::count_grad_entries(grads, bound);

  sgd_step(st.online, bound, grads, st.opt, m.lr, cfg);
  for (const auto& acts : online) apply_bn_updates(st.online, acts);
  ema_update(st.target, st.online, cfg.policy, step, cfg.steps);

  const Tensor& z1m = target.views[0].at(Stage::projector);
  const Tensor& z2m = target.views[1].at(Stage::projector);
  if (cfg.objective.kind == ObjectiveKind::infonce) {
    queue_push(st.queue, z1m);
    queue_push(st.queue, z2m);
  } else if (cfg.objective.kind == ObjectiveKind::soft_ce && cfg.objective.centering) {
    Tape scratch;
    center_update(st.center, ops::concat_rows(scratch, z1m, z2m));
  }

  for (const auto& acts : online) count_online(m.forwards, acts);
  m.forwards += target.delta;
  st.counter += m.forwards;
  ++st.step;
  return m;
}

struct RunOptions {
  std::size_t eval_every = 0;  // 0: probe only before the first and after the last step
  bool probes = true;
  ProbeConfig probe;
  std::optional<WeightSelector> weights;
  std::size_t grad_stride = 1;
};

struct RunArtifacts {
  std::vector<double> loss;
  std::vector<double> lr;
  std::vector<GradTraceRow> grads;
  std::vector<WeightTrajectoryRow> weights;
  std::vector<ProbeReport> probes;
  ForwardCounter counter;
  std::size_t max_target_grad_entries = 0;
  ParamSet online;
  TargetParams target;
};

// Full training run on `data` (split 80/20 with the train seed for probes).
// Batches come from a seeded per-epoch shuffle; the trailing partial batch of
// each epoch is dropped.
inline RunArtifacts run_training(const EncoderConfig& enc, const TrainConfig& cfg, const Dataset& data,
                                 const RunOptions& opts = {}) {
  TrainState st = init_state(enc, cfg);
  auto [train, test] = split_train_test(data, cfg.seed);
  if (train.dim() != enc.input_dim) {
    throw ConfigError("dataset width " + std::to_string(train.dim()) + " differs from encoder input_dim " +
                      std::to_string(enc.input_dim));
  }
  if (cfg.steps > 0 && train.size() < cfg.batch) {
    throw ConfigError("train split has " + std::to_string(train.size()) + " rows, fewer than one batch of " +
                      std::to_string(cfg.batch));
  }

  RunArtifacts art;
  auto record_weights = [&](std::size_t step) {
    if (!opts.weights || step % std::max<std::size_t>(1, opts.weights->stride) != 0) return;
    auto rows = record_weight_slice(step, st.online, st.target, cfg.policy, *opts.weights);
    art.weights.insert(art.weights.end(), rows.begin(), rows.end());
  };
  auto run_probe = [&](std::size_t step) {
    if (opts.probes) art.probes.push_back(probe(st.online, train, test, step, opts.probe));
  };

  run_probe(0);

  std::seed_seq seq{cfg.seed, std::uint64_t{0x5EED}};
  Rng shuffle_rng(seq);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t per_epoch = cfg.steps > 0 ? train.size() / cfg.batch : 0;
  std::size_t cursor = per_epoch;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor == per_epoch) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      cursor = 0;
    }
    const Dataset b =
        train.subset(std::span<const std::size_t>(order).subspan(cursor * cfg.batch, cfg.batch), "batch");
    ++cursor;

    StepMetrics m = train_step(st, cfg, b.X);
    art.loss.push_back(m.loss);
    art.lr.push_back(m.lr);
    art.max_target_grad_entries = std::max(art.max_target_grad_entries, m.target_grad_entries);
    if (step % std::max<std::size_t>(1, opts.grad_stride) == 0) {
      art.grads.insert(art.grads.end(), m.grads.begin(), m.grads.end());
    }
    record_weights(step);
    if (opts.eval_every > 0 && (step + 1) % opts.eval_every == 0 && step + 1 < cfg.steps) run_probe(step + 1);
  }
  if (cfg.steps > 0) run_probe(cfg.steps);

  art.counter = st.counter;
  art.online = std::move(st.online);
  art.target = std::move(st.target);
  return art;
}

struct CountReport {
  std::array<std::size_t, kStageCount> online{};
  std::array<std::size_t, kStageCount> target{};
  std::size_t target_param_bytes = 0;
  std::size_t online_param_bytes = 0;
  double target_backbone_fwd_ratio = 0.0;
};

inline CountReport count_report(const ForwardCounter& c) {
  CountReport r;
  r.online = c.online;
  r.target = c.target;
  r.target_param_bytes = c.target_param_bytes;
  r.online_param_bytes = c.online_param_bytes;
  const std::size_t on = c.online_backbone();
  r.target_backbone_fwd_ratio = on == 0 ? 0.0 : static_cast<double>(c.target_backbone()) / static_cast<double>(on);
  return r;
}

}  // namespace emalab
