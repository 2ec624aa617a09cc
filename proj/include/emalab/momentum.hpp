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
// Target (momentum) parameters under a per-stage policy.
//
// Every non-predictor stage is assigned one of
//   share   - the target reads the online weights, gradient detached (beta 0)
//   ema(b)  - target weights follow xi <- b*xi + (1-b)*theta
//   frozen  - target weights keep their initial copy (beta 1)
// The target path reuses online activations through the longest leading run
// of shared stages and only runs dedicated forwards after it. With only the
// projector under EMA the backbone is therefore forwarded once per view.

#pragma once

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emalab/encoder.hpp"
#include "emalab/tensor.hpp"

namespace emalab {

struct MomentumMode {
  enum class Kind { share, ema, frozen };
  Kind kind = Kind::share;
  double beta = 0.0;

  static MomentumMode share() { return {Kind::share, 0.0}; }
  static MomentumMode ema(double beta) { return {Kind::ema, beta}; }
  static MomentumMode frozen() { return {Kind::frozen, 1.0}; }

  double effective_beta() const {
    switch (kind) {
      case Kind::share: return 0.0;
      case Kind::frozen: return 1.0;
      case Kind::ema: return beta;
    }
    return beta;
  }

  bool operator==(const MomentumMode&) const = default;
};

inline std::string_view mode_name(MomentumMode::Kind k) {
  switch (k) {
    case MomentumMode::Kind::share: return "share";
    case MomentumMode::Kind::ema: return "ema";
    case MomentumMode::Kind::frozen: return "frozen";
  }
  return "?";
}

enum class BetaSchedule { constant, cosine };

struct MomentumPolicy {
  std::map<Stage, MomentumMode> modes;
  BetaSchedule schedule = BetaSchedule::constant;
  double beta_start = 0.0;  // cosine schedule only

  const MomentumMode& at(Stage s) const {
    auto it = modes.find(s);
    if (it == modes.end()) throw ConfigError("momentum policy has no entry for stage '" + std::string(stage_name(s)) + "'");
    return it->second;
  }

  // Number of leading stages in Share mode.
  std::size_t shared_prefix() const {
    std::size_t k = 0;
    while (k < kTargetStages.size() && at(kTargetStages[k]).kind == MomentumMode::Kind::share) ++k;
    return k;
  }

  // Beta used by ema_update at `step` of a `total_steps` run.
  double beta_at(Stage s, std::size_t step, std::size_t total_steps) const {
    const MomentumMode& m = at(s);
    if (m.kind != MomentumMode::Kind::ema || schedule == BetaSchedule::constant || total_steps == 0) {
      return m.effective_beta();
    }
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return m.beta - (m.beta - beta_start) * (std::cos(std::numbers::pi * t) + 1.0) / 2.0;
  }

  bool operator==(const MomentumPolicy&) const = default;
};

inline void validate(const MomentumPolicy& policy) {
  for (Stage s : kTargetStages) {
    if (!policy.modes.count(s)) {
      throw ConfigError("momentum policy has no entry for stage '" + std::string(stage_name(s)) + "'");
    }
  }
  if (policy.modes.count(Stage::predictor)) throw ConfigError("the predictor is online-only and takes no momentum mode");
  for (const auto& [s, m] : policy.modes) {
    if (!(m.beta >= 0.0 && m.beta <= 1.0)) throw ConfigError("beta out of range [0,1]");
  }
  if (policy.schedule == BetaSchedule::cosine && !(policy.beta_start >= 0.0 && policy.beta_start <= 1.0)) {
    throw ConfigError("beta out of range [0,1]");
  }
}

inline MomentumPolicy uniform_policy(MomentumMode mode) {
  MomentumPolicy p;
  for (Stage s : kTargetStages) p.modes[s] = mode;
  return p;
}

// Named policies used by sweeps. Stages not named by the preset share.
inline const std::vector<std::string>& policy_preset_names() {
  static const std::vector<std::string> names = {
      "none",         "conv1-only",     "block1-only",      "block2-only",   "block3-only",
      "block4-only",  "projector-only", "block4+projector", "backbone-only", "full"};
  return names;
}

inline MomentumPolicy policy_preset(const std::string& name, double beta) {
  MomentumPolicy p = uniform_policy(MomentumMode::share());
  auto set = [&](std::initializer_list<Stage> stages) {
    for (Stage s : stages) p.modes[s] = MomentumMode::ema(beta);
  };
  if (name == "none") return p;
  if (name == "conv1-only") {
    set({Stage::stem});
  } else if (name == "block1-only") {
    set({Stage::block1});
  } else if (name == "block2-only") {
    set({Stage::block2});
  } else if (name == "block3-only") {
    set({Stage::block3});
  } else if (name == "block4-only") {
    set({Stage::block4});
  } else if (name == "projector-only") {
    set({Stage::projector});
  } else if (name == "block4+projector") {
    set({Stage::block4, Stage::projector});
  } else if (name == "backbone-only") {
    set({Stage::stem, Stage::block1, Stage::block2, Stage::block3, Stage::block4});
  } else if (name == "full") {
    set({Stage::stem, Stage::block1, Stage::block2, Stage::block3, Stage::block4, Stage::projector});
  } else {
    throw ConfigError("unknown policy preset '" + name + "'");
  }
  validate(p);
  return p;
}

// Target copies xi, allocated only for stages whose mode is not Share.
struct TargetParams {
  std::array<std::optional<StageParams>, kTargetStages.size()> stages;

  bool has(Stage s) const { return s != Stage::predictor && stages[stage_index(s)].has_value(); }
  const StageParams& at(Stage s) const {
    if (!has(s)) throw ContractError("no target parameters for stage '" + std::string(stage_name(s)) + "'");
    return *stages[stage_index(s)];
  }
  StageParams& at(Stage s) { return const_cast<StageParams&>(static_cast<const TargetParams&>(*this).at(s)); }

  std::size_t bytes() const {
    std::size_t n = 0;
    for (const auto& st : stages) {
      if (st) n += stage_bytes(*st);
    }
    return n;
  }
};

// Bytes of the online stages that could have target copies.
inline std::size_t online_target_eligible_bytes(const ParamSet& online) {
  std::size_t n = 0;
  for (const auto& st : online.stages) {
    if (st.stage() != Stage::predictor) n += stage_bytes(st);
  }
  return n;
}

inline TargetParams init_target(const ParamSet& online, const MomentumPolicy& policy) {
  validate(policy);
  TargetParams target;
  for (Stage s : kTargetStages) {
    if (policy.at(s).kind == MomentumMode::Kind::share) continue;
    StageParams copy = online.at(s);
    for (auto& p : copy.params) p.value = p.value.detached();
    target.stages[stage_index(s)] = std::move(copy);
  }
  return target;
}

// xi' = beta*xi + (1-beta)*theta, with the endpoints returning theta / xi
// exactly.
inline Tensor ema_blend(const Tensor& xi, const Tensor& theta, double beta) {
  if (xi.shape() != theta.shape()) {
    throw ContractError("ema_update: target shape " + shape_str(xi.shape()) + " differs from online " +
                        shape_str(theta.shape()));
  }
  if (beta == 1.0) return xi.detached();
  if (beta == 0.0) return theta.detached();
  std::vector<double> out(xi.numel());
  const double keep = 1.0 - beta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = beta * xi[i] + keep * theta[i];
  return Tensor(xi.shape(), std::move(out));
}

// One momentum step over every allocated target stage. Running statistics
// are blended with the same beta as the weights.
inline void ema_update(TargetParams& target, const ParamSet& online, const MomentumPolicy& policy,
                       std::size_t step = 0, std::size_t total_steps = 0) {
  for (Stage s : kTargetStages) {
    if (!target.has(s)) continue;
    const MomentumMode& mode = policy.at(s);
    if (mode.kind != MomentumMode::Kind::ema) continue;
    const double beta = policy.beta_at(s, step, total_steps);
    StageParams& xi = target.at(s);
    const StageParams& theta = online.at(s);
    if (xi.params.size() != theta.params.size()) {
      throw ContractError("ema_update: stage " + std::string(stage_name(s)) + " parameter lists differ");
    }
    for (std::size_t i = 0; i < xi.params.size(); ++i) {
      xi.params[i].value = ema_blend(xi.params[i].value, theta.params[i].value, beta);
    }
  }
}

// The parameters the target path effectively uses: target copies where
// allocated, detached online weights for shared stages. No predictor.
inline ParamSet effective_target_params(const ParamSet& online, const TargetParams& target,
                                        const MomentumPolicy& policy) {
  ParamSet eff;
  for (Stage s : kTargetStages) {
    if (policy.at(s).kind == MomentumMode::Kind::share) {
      StageParams sp = online.at(s);
      for (auto& p : sp.params) p.value = p.value.detached();
      eff.stages.push_back(std::move(sp));
    } else {
      eff.stages.push_back(target.at(s));
    }
  }
  return eff;
}

// Binds the target copies' trainable tensors as tape leaves so that any
// gradient leaking into the target path would show up in the GradMap.
inline TargetParams bind(Tape& tape, const TargetParams& target, bool requires_grad = true) {
  TargetParams out = target;
  for (auto& st : out.stages) {
    if (!st) continue;
    for (auto& p : st->params) {
      p.value = is_trainable(p.role) ? tape.leaf(p.value, requires_grad) : p.value.detached();
    }
  }
  return out;
}

// Dedicated stage executions, split by network.
struct ForwardCounter {
  std::array<std::size_t, kStageCount> online{};
  std::array<std::size_t, kStageCount> target{};
  std::size_t target_param_bytes = 0;
  std::size_t online_param_bytes = 0;  // non-predictor stages

  std::size_t online_backbone() const {
    std::size_t n = 0;
    for (Stage s : kBackboneStages) n += online[stage_index(s)];
    return n;
  }
  std::size_t target_backbone() const {
    std::size_t n = 0;
    for (Stage s : kBackboneStages) n += target[stage_index(s)];
    return n;
  }

  ForwardCounter& operator+=(const ForwardCounter& o) {
    for (std::size_t i = 0; i < kStageCount; ++i) {
      online[i] += o.online[i];
      target[i] += o.target[i];
    }
    return *this;
  }

  bool operator==(const ForwardCounter&) const = default;
};

inline void count_online(ForwardCounter& counter, const StageActivations& acts) {
  for (const auto& [s, t] : acts.outputs) ++counter.online[stage_index(s)];
}

struct TargetForward {
  std::vector<StageActivations> views;
  ForwardCounter delta;
};

// Builds the target activations for each view. Stages in the shared prefix
// reuse the (detached) online activations; the remaining stages run on the
// effective target parameters. All returned activations are detached.
inline TargetForward resolve_target_forward(Tape& tape, std::span<const StageActivations> online_acts,
                                            const ParamSet& online, const TargetParams& target,
                                            const MomentumPolicy& policy, std::span<const Tensor> views,
                                            Mode mode = Mode::train) {
  if (online_acts.size() != views.size()) {
    throw ContractError("resolve_target_forward: need online activations for every view");
  }
  const std::size_t prefix = policy.shared_prefix();
  const ParamSet eff = effective_target_params(online, target, policy);

  TargetForward out;
  for (std::size_t v = 0; v < views.size(); ++v) {
    StageActivations acts;
    acts.target = true;
    for (std::size_t i = 0; i < prefix; ++i) {
      acts.outputs.emplace_back(kTargetStages[i], ops::detach(online_acts[v].at(kTargetStages[i])));
    }
    if (prefix < kTargetStages.size()) {
      const Stage start = kTargetStages[prefix];
      const Tensor input = prefix == 0 ? ops::detach(views[v]) : ops::detach(online_acts[v].at(kTargetStages[prefix - 1]));
      const StageActivations dedicated = forward_from(tape, eff, start, input, {mode, /*include_predictor=*/false});
      for (const auto& [s, t] : dedicated.outputs) {
        acts.outputs.emplace_back(s, ops::detach(t));
        ++out.delta.target[stage_index(s)];
      }
    }
    out.views.push_back(std::move(acts));
  }
  return out;
}

}  // namespace emalab
