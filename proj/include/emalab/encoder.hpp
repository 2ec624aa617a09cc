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
// The staged MLP encoder: stem -> block1..block4 -> projector [-> predictor].
// Stem plus the four blocks form the backbone; its output is the feature f,
// the projector output is z and the predictor output is p.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emalab/ops.hpp"
#include "emalab/tensor.hpp"

namespace emalab {

enum class Stage { stem, block1, block2, block3, block4, projector, predictor };

inline constexpr std::size_t kStageCount = 7;
inline constexpr std::array<Stage, kStageCount> kAllStages = {
    Stage::stem, Stage::block1, Stage::block2, Stage::block3, Stage::block4, Stage::projector, Stage::predictor};
// Stages that may carry a target copy (everything but the predictor).
inline constexpr std::array<Stage, 6> kTargetStages = {Stage::stem,   Stage::block1, Stage::block2,
                                                       Stage::block3, Stage::block4, Stage::projector};
inline constexpr std::array<Stage, 5> kBackboneStages = {Stage::stem, Stage::block1, Stage::block2, Stage::block3,
                                                         Stage::block4};

inline std::size_t stage_index(Stage s) { return static_cast<std::size_t>(s); }

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::stem: return "stem";
    case Stage::block1: return "block1";
    case Stage::block2: return "block2";
    case Stage::block3: return "block3";
    case Stage::block4: return "block4";
    case Stage::projector: return "projector";
    case Stage::predictor: return "predictor";
  }
  return "?";
}

inline std::optional<Stage> parse_stage(std::string_view name) {
  for (Stage s : kAllStages) {
    if (stage_name(s) == name) return s;
  }
  return std::nullopt;
}

inline bool is_backbone(Stage s) { return stage_index(s) <= stage_index(Stage::block4); }

struct Layer {
  enum class Kind { linear, bn, relu };
  Kind kind = Kind::relu;
  std::size_t in = 0;
  std::size_t out = 0;

  static Layer linear(std::size_t in, std::size_t out) { return {Kind::linear, in, out}; }
  static Layer bn() { return {Kind::bn, 0, 0}; }
  static Layer relu() { return {Kind::relu, 0, 0}; }

  bool operator==(const Layer&) const = default;
};

struct StageSpec {
  Stage name = Stage::stem;
  std::vector<Layer> layers;
  bool output_bn = false;  // extra BN on the stage output
  bool residual = false;   // output = layers(x) + x

  bool operator==(const StageSpec&) const = default;
};

struct EncoderConfig {
  std::size_t input_dim = 32;
  std::vector<StageSpec> stages;
  std::uint64_t seed = 0;

  bool has_predictor() const { return !stages.empty() && stages.back().name == Stage::predictor; }
  const StageSpec& spec(Stage s) const {
    for (const auto& st : stages) {
      if (st.name == s) return st;
    }
    throw ConfigError("encoder has no stage '" + std::string(stage_name(s)) + "'");
  }

  bool operator==(const EncoderConfig&) const = default;
};

// Output width of a stage given its input width; validates the layer chain.
inline std::size_t stage_output_dim(const StageSpec& spec, std::size_t in_dim) {
  std::size_t dim = in_dim;
  for (const Layer& l : spec.layers) {
    if (l.kind != Layer::Kind::linear) continue;
    if (l.in != dim || l.out == 0) {
      throw ConfigError("stage " + std::string(stage_name(spec.name)) + ": linear(" + std::to_string(l.in) + "," +
                        std::to_string(l.out) + ") does not chain from width " + std::to_string(dim));
    }
    dim = l.out;
  }
  if (spec.residual && dim != in_dim) {
    throw ConfigError("stage " + std::string(stage_name(spec.name)) + ": residual connection needs equal in/out width");
  }
  return dim;
}

inline void validate(const EncoderConfig& cfg) {
  if (cfg.input_dim == 0) throw ConfigError("encoder input_dim must be positive");
  if (cfg.stages.size() != 6 && cfg.stages.size() != 7) {
    throw ConfigError("encoder must list stem, block1..block4, projector and optionally predictor");
  }
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    if (cfg.stages[i].name != kAllStages[i]) {
      throw ConfigError("encoder stage " + std::to_string(i) + " must be '" + std::string(stage_name(kAllStages[i])) +
                        "', got '" + std::string(stage_name(cfg.stages[i].name)) + "'");
    }
  }
  std::size_t dim = cfg.input_dim;
  std::size_t projector_dim = 0;
  for (const auto& st : cfg.stages) {
    const std::size_t in = dim;
    dim = stage_output_dim(st, dim);
    if (st.name == Stage::projector) projector_dim = dim;
    if (st.name == Stage::predictor && (in != projector_dim || dim != projector_dim)) {
      throw ConfigError("predictor must map the projector width " + std::to_string(projector_dim) + " to itself");
    }
  }
}

// Two-layer MLP head: linear(in, hidden), bn, relu, linear(hidden, out).
inline std::vector<Layer> mlp_head(std::size_t in, std::size_t hidden, std::size_t out) {
  return {Layer::linear(in, hidden), Layer::bn(), Layer::relu(), Layer::linear(hidden, out)};
}

inline std::vector<Layer> mlp_block(std::size_t in, std::size_t out) {
  return {Layer::linear(in, out), Layer::bn(), Layer::relu(), Layer::linear(out, out), Layer::bn(), Layer::relu()};
}

struct EncoderShape {
  std::size_t input_dim = 32;
  std::size_t width = 64;
  std::size_t proj_hidden = 128;
  std::size_t proj_out = 32;
  std::size_t pred_hidden = 128;
  bool predictor = true;
  bool bn_after_backbone = false;   // BN1
  bool bn_after_projector = false;  // BN2
};

inline EncoderConfig make_encoder_config(const EncoderShape& s, std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.input_dim = s.input_dim;
  cfg.seed = seed;
  cfg.stages.push_back({Stage::stem, {Layer::linear(s.input_dim, s.width), Layer::bn(), Layer::relu()}});
  for (Stage b : {Stage::block1, Stage::block2, Stage::block3, Stage::block4}) {
    cfg.stages.push_back({b, mlp_block(s.width, s.width)});
  }
  cfg.stages.back().output_bn = s.bn_after_backbone;
  cfg.stages.push_back({Stage::projector, mlp_head(s.width, s.proj_hidden, s.proj_out), s.bn_after_projector});
  if (s.predictor) cfg.stages.push_back({Stage::predictor, mlp_head(s.proj_out, s.pred_hidden, s.proj_out)});
  return cfg;
}

// input 32, stem 32->64, four width-64 blocks, projector 64->128->32 and a
// predictor of the same shape.
inline EncoderConfig default_encoder_config(std::uint64_t seed = 0, bool predictor = true) {
  EncoderShape s;
  s.predictor = predictor;
  return make_encoder_config(s, seed);
}

// Projector with a 2-wide hidden layer so every row of its final weight is a
// 2-D filter that can be plotted.
inline EncoderConfig viz_config(std::uint64_t seed = 0, bool predictor = true) {
  EncoderShape s;
  s.proj_hidden = 2;
  s.predictor = predictor;
  return make_encoder_config(s, seed);
}

enum class ParamRole { weight, bias, gamma, beta, running_mean, running_var };

inline bool is_trainable(ParamRole r) { return r != ParamRole::running_mean && r != ParamRole::running_var; }

struct Param {
  std::string name;
  ParamRole role = ParamRole::weight;
  Tensor value;
};

struct StageParams {
  StageSpec spec;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<Param> params;

  Stage stage() const { return spec.name; }

  const Param& get(std::string_view name) const {
    for (const auto& p : params) {
      if (p.name == name) return p;
    }
    throw ConfigError("stage " + std::string(stage_name(spec.name)) + " has no parameter '" + std::string(name) + "'");
  }
  Param& get(std::string_view name) {
    return const_cast<Param&>(static_cast<const StageParams&>(*this).get(name));
  }
};

inline std::size_t scalar_count(const StageParams& sp, bool trainable_only) {
  std::size_t n = 0;
  for (const auto& p : sp.params) {
    if (!trainable_only || is_trainable(p.role)) n += p.value.numel();
  }
  return n;
}

// Online parameters (or any full-encoder parameter collection), one entry
// per configured stage in stage order.
struct ParamSet {
  std::vector<StageParams> stages;

  bool has(Stage s) const { return find(s) != nullptr; }
  const StageParams* find(Stage s) const {
    for (const auto& st : stages) {
      if (st.stage() == s) return &st;
    }
    return nullptr;
  }
  StageParams* find(Stage s) { return const_cast<StageParams*>(static_cast<const ParamSet&>(*this).find(s)); }
  const StageParams& at(Stage s) const {
    if (const auto* p = find(s)) return *p;
    throw ConfigError("parameter set has no stage '" + std::string(stage_name(s)) + "'");
  }
  StageParams& at(Stage s) { return const_cast<StageParams&>(static_cast<const ParamSet&>(*this).at(s)); }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& st : stages) n += scalar_count(st, true);
    return n;
  }
};

inline constexpr std::size_t kBytesPerScalar = sizeof(double);

// Storage of a stage: trainable parameters plus BN running statistics.
inline std::size_t stage_bytes(const StageParams& sp) { return scalar_count(sp, false) * kBytesPerScalar; }

// Trainable parameter count, computed from the configuration alone.
inline std::size_t stage_param_count(const StageSpec& spec, std::size_t in_dim) {
  std::size_t n = 0;
  std::size_t dim = in_dim;
  for (const Layer& l : spec.layers) {
    switch (l.kind) {
      case Layer::Kind::linear: n += l.in * l.out + l.out; dim = l.out; break;
      case Layer::Kind::bn: n += 2 * dim; break;
      case Layer::Kind::relu: break;
    }
  }
  if (spec.output_bn) n += 2 * dim;
  return n;
}

inline std::size_t parameter_count(const EncoderConfig& cfg) {
  validate(cfg);
  std::size_t n = 0, dim = cfg.input_dim;
  for (const auto& st : cfg.stages) {
    n += stage_param_count(st, dim);
    dim = stage_output_dim(st, dim);
  }
  return n;
}

namespace detail {

inline void add_bn_params(StageParams& sp, const std::string& prefix, std::size_t dim) {
  sp.params.push_back({prefix + ".gamma", ParamRole::gamma, Tensor::filled({dim}, 1.0)});
  sp.params.push_back({prefix + ".beta", ParamRole::beta, Tensor::zeros({dim})});
  sp.params.push_back({prefix + ".running_mean", ParamRole::running_mean, Tensor::zeros({dim})});
  sp.params.push_back({prefix + ".running_var", ParamRole::running_var, Tensor::filled({dim}, 1.0)});
}

}  // namespace detail

// Linear weights ~ N(0, 2/fan_in) stored [out, in]; biases 0; BN gamma 1,
// beta 0, running mean 0, running var 1. Deterministic in cfg.seed.
inline ParamSet build_encoder(const EncoderConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  ParamSet ps;
  std::size_t dim = cfg.input_dim;
  for (const auto& spec : cfg.stages) {
    StageParams sp;
    sp.spec = spec;
    sp.in_dim = dim;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const Layer& l = spec.layers[i];
      const std::string prefix = std::to_string(i);
      if (l.kind == Layer::Kind::linear) {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(l.in)));
        std::vector<double> w(l.in * l.out);
        for (double& v : w) v = normal(rng);
        sp.params.push_back({prefix + ".weight", ParamRole::weight, Tensor::matrix(l.out, l.in, std::move(w))});
        sp.params.push_back({prefix + ".bias", ParamRole::bias, Tensor::zeros({l.out})});
        dim = l.out;
      } else if (l.kind == Layer::Kind::bn) {
        detail::add_bn_params(sp, prefix, dim);
      }
    }
    if (spec.output_bn) detail::add_bn_params(sp, "out_bn", dim);
    sp.out_dim = dim;
    ps.stages.push_back(std::move(sp));
  }
  return ps;
}

// Returns a copy whose trainable tensors are tape leaves. Running statistics
// stay constants.
inline ParamSet bind(Tape& tape, const ParamSet& params, bool requires_grad = true) {
  ParamSet out = params;
  for (auto& st : out.stages) {
    for (auto& p : st.params) {
      p.value = is_trainable(p.role) ? tape.leaf(p.value, requires_grad) : p.value.detached();
    }
  }
  return out;
}

enum class Mode { train, eval };

struct BnUpdate {
  Stage stage;
  std::string prefix;
  ops::BatchStats stats;
};

struct StageActivations {
  std::vector<std::pair<Stage, Tensor>> outputs;  // in execution order
  std::vector<BnUpdate> bn_updates;               // train mode only
  bool target = false;

  bool has(Stage s) const { return find(s) != nullptr; }
  const Tensor* find(Stage s) const {
    for (const auto& [st, t] : outputs) {
      if (st == s) return &t;
    }
    return nullptr;
  }
  const Tensor& at(Stage s) const {
    if (const auto* t = find(s)) return *t;
    throw ContractError("no activation recorded for stage '" + std::string(stage_name(s)) + "'");
  }
};

struct ForwardOptions {
  Mode mode = Mode::train;
  bool include_predictor = true;
};

namespace detail {

inline Tensor run_bn(Tape& tape, const StageParams& sp, const std::string& prefix, const Tensor& h, Mode mode,
                     StageActivations& acts) {
  ops::BatchStats stats;
  Tensor out = ops::batch_norm(tape, h, sp.get(prefix + ".gamma").value, sp.get(prefix + ".beta").value,
                               sp.get(prefix + ".running_mean").value, sp.get(prefix + ".running_var").value,
                               mode == Mode::train, kBatchNormEps, mode == Mode::train ? &stats : nullptr);
  if (mode == Mode::train) acts.bn_updates.push_back({sp.stage(), prefix, std::move(stats)});
  return out;
}

inline Tensor run_stage(Tape& tape, const StageParams& sp, const Tensor& input, Mode mode, StageActivations& acts) {
  Tensor h = input;
  for (std::size_t i = 0; i < sp.spec.layers.size(); ++i) {
    const std::string prefix = std::to_string(i);
    switch (sp.spec.layers[i].kind) {
      case Layer::Kind::linear:
        h = ops::matmul(tape, h, sp.get(prefix + ".weight").value, /*transpose_b=*/true);
        h = ops::add_bias(tape, h, sp.get(prefix + ".bias").value);
        break;
      case Layer::Kind::bn: h = run_bn(tape, sp, prefix, h, mode, acts); break;
      case Layer::Kind::relu: h = ops::relu(tape, h); break;
    }
  }
  if (sp.spec.residual) h = ops::add(tape, h, input);
  if (sp.spec.output_bn) h = run_bn(tape, sp, "out_bn", h, mode, acts);
  return h;
}

}  // namespace detail

// Runs the stages of `params` from `start` onward on `input`.
inline StageActivations forward_from(Tape& tape, const ParamSet& params, Stage start, const Tensor& input,
                                     ForwardOptions opts = {}) {
  std::size_t first = params.stages.size();
  for (std::size_t i = 0; i < params.stages.size(); ++i) {
    if (params.stages[i].stage() == start) first = i;
  }
  if (first == params.stages.size()) {
    throw ConfigError("unknown start stage '" + std::string(stage_name(start)) + "' for this encoder");
  }
  const StageParams& entry = params.stages[first];
  if (input.rank() != 2 || input.cols() != entry.in_dim) {
    throw DimensionError("stage " + std::string(stage_name(start)) + " expects [batch," +
                         std::to_string(entry.in_dim) + "] input, got " + shape_str(input.shape()));
  }

  StageActivations acts;
  Tensor h = input;
  for (std::size_t i = first; i < params.stages.size(); ++i) {
    const StageParams& sp = params.stages[i];
    if (sp.stage() == Stage::predictor && !opts.include_predictor) break;
    try {
      h = detail::run_stage(tape, sp, h, opts.mode, acts);
    } catch (const NumericError& e) {
      throw NumericError("stage " + std::string(stage_name(sp.stage())) + ": " + e.what());
    }
    if (!h.all_finite()) {
      throw NumericError("stage " + std::string(stage_name(sp.stage())) + ": non-finite activation");
    }
    acts.outputs.emplace_back(sp.stage(), h);
  }
  return acts;
}

inline StageActivations forward_stages(Tape& tape, const ParamSet& params, const Tensor& x, ForwardOptions opts = {}) {
  return forward_from(tape, params, Stage::stem, x, opts);
}

// Folds the batch statistics gathered by a train-mode forward into the
// running statistics of `params`, in the order the BN layers ran.
inline void apply_bn_updates(ParamSet& params, const StageActivations& acts, double momentum = kBatchNormMomentum) {
  for (const auto& u : acts.bn_updates) {
    StageParams& sp = params.at(u.stage);
    ops::update_running_stats(sp.get(u.prefix + ".running_mean").value, sp.get(u.prefix + ".running_var").value,
                              u.stats, momentum);
  }
}

}  // namespace emalab
