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
// TOML experiment configuration. Parsing rejects unknown keys and validates
// everything before any compute starts; dump_config writes every default
// explicitly (encoder stages and per-stage momentum modes included), so a
// dumped file fully describes a run and parses back to the same config.

#pragma once

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <toml.hpp>

#include "emalab/data.hpp"
#include "emalab/encoder.hpp"
#include "emalab/eval.hpp"
#include "emalab/momentum.hpp"
#include "emalab/objectives.hpp"
#include "emalab/telemetry.hpp"
#include "emalab/trainer.hpp"

namespace emalab {

struct DataConfig {
  std::string source = "blobs";  // "blobs" or "csv"
  int classes = 8;
  std::size_t dim = 32;
  std::size_t n_per_class = 64;
  double spread = 0.1;
  std::uint64_t seed = 0;
  std::string path;  // csv source

  bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
  bool enabled = true;
  std::size_t every = 0;
  ProbeConfig probe;

  bool operator==(const EvalConfig&) const = default;
};

struct TelemetryConfig {
  bool weights = false;
  WeightSelector selector;
  std::size_t grad_stride = 1;

  bool operator==(const TelemetryConfig&) const = default;
};

struct ExperimentConfig {
  EncoderConfig encoder = default_encoder_config();
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  TelemetryConfig telemetry;
  std::string output_dir = "run";

  bool operator==(const ExperimentConfig&) const = default;
};

inline void validate(const ExperimentConfig& cfg) {
  validate(cfg.train, cfg.encoder);
  if (cfg.data.source != "blobs" && cfg.data.source != "csv") {
    throw ConfigError("data source must be \"blobs\" or \"csv\"");
  }
  if (cfg.data.source == "blobs") {
    if (cfg.data.classes < 2 || cfg.data.dim < 2 || cfg.data.n_per_class == 0) {
      throw ConfigError("blobs need classes >= 2, dim >= 2 and n_per_class >= 1");
    }
    if (cfg.data.dim != cfg.encoder.input_dim) {
      throw ConfigError("data dim " + std::to_string(cfg.data.dim) + " differs from encoder input_dim " +
                        std::to_string(cfg.encoder.input_dim));
    }
    if (!(cfg.data.spread >= 0.0)) throw ConfigError("blob spread must be >= 0");
  } else if (cfg.data.path.empty()) {
    throw ConfigError("csv data source needs a path");
  }
  if (cfg.telemetry.grad_stride == 0 || cfg.telemetry.selector.stride == 0) {
    throw ConfigError("telemetry strides must be positive");
  }
  if (cfg.eval.probe.epochs == 0 || cfg.eval.probe.batch == 0 || !(cfg.eval.probe.lr > 0.0)) {
    throw ConfigError("probe lr, epochs and batch must be positive");
  }
}

namespace detail {

inline void check_keys(const toml::table& t, std::initializer_list<std::string_view> allowed, std::string_view where) {
  for (const auto& [k, v] : t) {
    bool ok = false;
    for (auto a : allowed) ok = ok || k.str() == a;
    if (!ok) throw ConfigError("unknown key '" + std::string(k.str()) + "' in " + std::string(where));
  }
}

inline const toml::table* sub_table(const toml::table& t, std::string_view key) {
  const toml::node* n = t.get(key);
  if (!n) return nullptr;
  if (!n->is_table()) throw ConfigError("'" + std::string(key) + "' must be a table");
  return n->as_table();
}

inline void read(const toml::table& t, std::string_view key, double& out) {
  if (const toml::node* n = t.get(key)) {
    auto v = n->value<double>();
    if (!v || !(n->is_floating_point() || n->is_integer())) throw ConfigError("'" + std::string(key) + "' must be a number");
    out = *v;
  }
}

inline void read(const toml::table& t, std::string_view key, bool& out) {
  if (const toml::node* n = t.get(key)) {
    if (!n->is_boolean()) throw ConfigError("'" + std::string(key) + "' must be true or false");
    out = *n->value<bool>();
  }
}

inline void read(const toml::table& t, std::string_view key, std::string& out) {
  if (const toml::node* n = t.get(key)) {
    if (!n->is_string()) throw ConfigError("'" + std::string(key) + "' must be a string");
    out = *n->value<std::string>();
  }
}

template <typename Int>
  requires std::is_integral_v<Int>
inline void read(const toml::table& t, std::string_view key, Int& out) {
  if (const toml::node* n = t.get(key)) {
    if (!n->is_integer()) throw ConfigError("'" + std::string(key) + "' must be an integer");
    const std::int64_t v = *n->value<std::int64_t>();
    if (std::is_unsigned_v<Int> && v < 0) throw ConfigError("'" + std::string(key) + "' must be non-negative");
    out = static_cast<Int>(v);
  }
}

inline Layer parse_layer(const std::string& s) {
  if (s == "bn") return Layer::bn();
  if (s == "relu") return Layer::relu();
  std::size_t in = 0, out = 0;
  char sep1 = 0, sep2 = 0;
  std::istringstream is(s.size() > 6 && s.rfind("linear", 0) == 0 ? s.substr(6) : "");
  if (is >> sep1 >> in >> sep2 >> out && sep1 == ':' && sep2 == ':' && is.peek() == EOF) return Layer::linear(in, out);
  throw ConfigError("bad layer '" + s + "' (expected \"linear:IN:OUT\", \"bn\" or \"relu\")");
}

inline std::string layer_string(const Layer& l) {
  switch (l.kind) {
    case Layer::Kind::linear: return "linear:" + std::to_string(l.in) + ":" + std::to_string(l.out);
    case Layer::Kind::bn: return "bn";
    case Layer::Kind::relu: return "relu";
  }
  return "?";
}

inline EncoderConfig parse_encoder(const toml::table& t) {
  check_keys(t,
             {"input_dim", "seed", "preset", "width", "proj_hidden", "proj_out", "pred_hidden", "predictor",
              "bn_after_backbone", "bn_after_projector", "stages"},
             "[encoder]");
  const bool has_stages = t.contains("stages");
  const bool has_shape = t.contains("preset") || t.contains("width") || t.contains("proj_hidden") ||
                         t.contains("proj_out") || t.contains("pred_hidden") || t.contains("predictor") ||
                         t.contains("bn_after_backbone") || t.contains("bn_after_projector");
  if (has_stages && has_shape) throw ConfigError("[encoder] takes either explicit stages or a preset, not both");

  std::uint64_t seed = 0;
  read(t, "seed", seed);
  EncoderConfig cfg;
  if (has_stages) {
    read(t, "input_dim", cfg.input_dim);
    const toml::array* arr = t.get_as<toml::array>("stages");
    if (!arr) throw ConfigError("encoder stages must be an array of tables");
    for (const auto& node : *arr) {
      const toml::table* st = node.as_table();
      if (!st) throw ConfigError("encoder stages must be an array of tables");
      check_keys(*st, {"name", "layers", "output_bn", "residual"}, "[[encoder.stages]]");
      StageSpec spec;
      std::string name;
      read(*st, "name", name);
      auto stage = parse_stage(name);
      if (!stage) throw ConfigError("unknown stage '" + name + "'");
      spec.name = *stage;
      read(*st, "output_bn", spec.output_bn);
      read(*st, "residual", spec.residual);
      const toml::array* layers = st->get_as<toml::array>("layers");
      if (!layers) throw ConfigError("stage '" + name + "' needs a layers array");
      for (const auto& l : *layers) {
        auto s = l.value<std::string>();
        if (!s) throw ConfigError("stage '" + name + "': layers must be strings");
        spec.layers.push_back(parse_layer(*s));
      }
      cfg.stages.push_back(std::move(spec));
    }
  } else {
    EncoderShape shape;
    std::string preset = "default";
    read(t, "preset", preset);
    if (preset == "viz") {
      shape.proj_hidden = 2;
    } else if (preset != "default") {
      throw ConfigError("unknown encoder preset '" + preset + "' (expected \"default\" or \"viz\")");
    }
    read(t, "input_dim", shape.input_dim);
    read(t, "width", shape.width);
    read(t, "proj_hidden", shape.proj_hidden);
    read(t, "proj_out", shape.proj_out);
    read(t, "pred_hidden", shape.pred_hidden);
    read(t, "predictor", shape.predictor);
    read(t, "bn_after_backbone", shape.bn_after_backbone);
    read(t, "bn_after_projector", shape.bn_after_projector);
    cfg = make_encoder_config(shape, seed);
  }
  cfg.seed = seed;
  return cfg;
}

inline MomentumMode parse_mode(const toml::node& n, std::string_view stage) {
  std::string mode;
  double beta = -1.0;
  if (auto s = n.value<std::string>()) {
    mode = *s;
  } else if (const toml::table* t = n.as_table()) {
    check_keys(*t, {"mode", "beta"}, "momentum stage '" + std::string(stage) + "'");
    read(*t, "mode", mode);
    read(*t, "beta", beta);
  } else {
    throw ConfigError("momentum stage '" + std::string(stage) + "' must be a mode string or {mode, beta} table");
  }
  if (mode == "share") return MomentumMode::share();
  if (mode == "frozen") return MomentumMode::frozen();
  if (mode == "ema") {
    if (beta < 0.0 && !n.is_table()) throw ConfigError("ema mode for stage '" + std::string(stage) + "' needs a beta");
    return MomentumMode::ema(beta);
  }
  throw ConfigError("unknown momentum mode '" + mode + "' (expected share, ema or frozen)");
}

inline MomentumPolicy parse_momentum(const toml::table& t) {
  check_keys(t, {"preset", "beta", "stages", "schedule", "beta_start"}, "[momentum]");
  MomentumPolicy policy;
  if (t.contains("stages")) {
    if (t.contains("preset")) throw ConfigError("[momentum] takes either a preset or explicit stages, not both");
    const toml::table* st = sub_table(t, "stages");
    for (const auto& [k, v] : *st) {
      auto stage = parse_stage(k.str());
      if (!stage) throw ConfigError("unknown stage '" + std::string(k.str()) + "' in [momentum.stages]");
      if (*stage == Stage::predictor) throw ConfigError("the predictor is online-only and takes no momentum mode");
      policy.modes[*stage] = parse_mode(v, k.str());
    }
  } else {
    std::string preset = "projector-only";
    double beta = 0.99;
    read(t, "preset", preset);
    read(t, "beta", beta);
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta out of range [0,1]");
    policy = policy_preset(preset, beta);
  }
  std::string schedule = "constant";
  read(t, "schedule", schedule);
  if (schedule == "cosine") {
    policy.schedule = BetaSchedule::cosine;
  } else if (schedule != "constant") {
    throw ConfigError("unknown beta schedule '" + schedule + "'");
  }
  read(t, "beta_start", policy.beta_start);
  return policy;
}

inline ObjectiveSpec parse_objective(const toml::table& t) {
  check_keys(t, {"kind", "tau", "tau_s", "tau_t", "queue_size", "center_momentum", "centering"}, "[objective]");
  ObjectiveSpec o;
  std::string kind = "negcos";
  read(t, "kind", kind);
  if (kind == "negcos") {
    o.kind = ObjectiveKind::neg_cosine;
  } else if (kind == "infonce") {
    o.kind = ObjectiveKind::infonce;
  } else if (kind == "softce") {
    o.kind = ObjectiveKind::soft_ce;
  } else {
    throw ConfigError("unknown objective kind '" + kind + "' (expected negcos, infonce or softce)");
  }
  read(t, "tau", o.tau);
  read(t, "tau_s", o.tau_s);
  read(t, "tau_t", o.tau_t);
  read(t, "queue_size", o.queue_size);
  read(t, "center_momentum", o.center_momentum);
  read(t, "centering", o.centering);
  return o;
}

}  // namespace detail

inline ExperimentConfig parse_config(const toml::table& root) {
  using namespace detail;
  check_keys(root, {"output_dir", "data", "encoder", "train", "objective", "momentum", "augment", "eval", "telemetry"},
             "config");
  ExperimentConfig cfg;
  read(root, "output_dir", cfg.output_dir);

  if (const auto* t = sub_table(root, "data")) {
    check_keys(*t, {"source", "classes", "dim", "n_per_class", "spread", "seed", "path"}, "[data]");
    read(*t, "source", cfg.data.source);
    read(*t, "classes", cfg.data.classes);
    read(*t, "dim", cfg.data.dim);
    read(*t, "n_per_class", cfg.data.n_per_class);
    read(*t, "spread", cfg.data.spread);
    read(*t, "seed", cfg.data.seed);
    read(*t, "path", cfg.data.path);
  }

  if (const auto* t = sub_table(root, "objective")) cfg.train.objective = parse_objective(*t);

  if (const auto* t = sub_table(root, "encoder")) {
    cfg.encoder = parse_encoder(*t);
  }
  if (!root.contains("encoder") || !sub_table(root, "encoder")->contains("stages")) {
    // Preset encoders carry a predictor only when the objective uses one.
    const toml::table* t = sub_table(root, "encoder");
    if (!t || !t->contains("predictor")) {
      toml::table copy = t ? *t : toml::table{};
      copy.insert_or_assign("predictor", cfg.train.objective.kind == ObjectiveKind::neg_cosine);
      if (!copy.contains("input_dim")) copy.insert_or_assign("input_dim", static_cast<std::int64_t>(cfg.data.dim));
      cfg.encoder = parse_encoder(copy);
    }
  }

  if (const auto* t = sub_table(root, "train")) {
    check_keys(*t, {"steps", "batch", "lr", "sgd_momentum", "weight_decay", "warmup_steps", "seed"}, "[train]");
    read(*t, "steps", cfg.train.steps);
    read(*t, "batch", cfg.train.batch);
    read(*t, "lr", cfg.train.lr);
    read(*t, "sgd_momentum", cfg.train.sgd_momentum);
    read(*t, "weight_decay", cfg.train.weight_decay);
    read(*t, "warmup_steps", cfg.train.warmup_steps);
    read(*t, "seed", cfg.train.seed);
  }
  if (const auto* t = sub_table(root, "momentum")) cfg.train.policy = parse_momentum(*t);
  if (const auto* t = sub_table(root, "augment")) {
    check_keys(*t, {"noise_std", "mask_prob", "scale_lo", "scale_hi"}, "[augment]");
    read(*t, "noise_std", cfg.train.aug.noise_std);
    read(*t, "mask_prob", cfg.train.aug.mask_prob);
    read(*t, "scale_lo", cfg.train.aug.scale_lo);
    read(*t, "scale_hi", cfg.train.aug.scale_hi);
  }
  if (const auto* t = sub_table(root, "eval")) {
    check_keys(*t, {"enabled", "every", "probe_lr", "probe_epochs", "probe_batch", "probe_seed"}, "[eval]");
    read(*t, "enabled", cfg.eval.enabled);
    read(*t, "every", cfg.eval.every);
    read(*t, "probe_lr", cfg.eval.probe.lr);
    read(*t, "probe_epochs", cfg.eval.probe.epochs);
    read(*t, "probe_batch", cfg.eval.probe.batch);
    read(*t, "probe_seed", cfg.eval.probe.seed);
  }
  if (const auto* t = sub_table(root, "telemetry")) {
    check_keys(*t, {"weights", "stage", "param", "filters", "stride", "grad_stride"}, "[telemetry]");
    read(*t, "weights", cfg.telemetry.weights);
    std::string stage = "projector";
    read(*t, "stage", stage);
    auto s = parse_stage(stage);
    if (!s) throw ConfigError("unknown telemetry stage '" + stage + "'");
    cfg.telemetry.selector.stage = *s;
    read(*t, "param", cfg.telemetry.selector.param);
    if (const toml::array* f = t->get_as<toml::array>("filters")) {
      for (const auto& n : *f) {
        auto v = n.value<std::int64_t>();
        if (!v || *v < 0) throw ConfigError("telemetry filters must be non-negative integers");
        cfg.telemetry.selector.filters.push_back(static_cast<std::size_t>(*v));
      }
    } else if (t->contains("filters")) {
      throw ConfigError("telemetry filters must be an array");
    }
    read(*t, "stride", cfg.telemetry.selector.stride);
    read(*t, "grad_stride", cfg.telemetry.grad_stride);
  }
  validate(cfg);
  return cfg;
}

inline ExperimentConfig parse_config_string(std::string_view text, std::string_view source = "config") {
  try {
    return parse_config(toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config parse error: " << e.description() << " (" << e.source().begin << ")";
    throw ConfigError(os.str());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str(), path);
}

inline std::string dump_config(const ExperimentConfig& cfg) {
  auto i64 = [](auto v) { return static_cast<std::int64_t>(v); };
  toml::table root;
  root.insert("output_dir", cfg.output_dir);

  root.insert("data", toml::table{{"source", cfg.data.source},
                                  {"classes", i64(cfg.data.classes)},
                                  {"dim", i64(cfg.data.dim)},
                                  {"n_per_class", i64(cfg.data.n_per_class)},
                                  {"spread", cfg.data.spread},
                                  {"seed", i64(cfg.data.seed)},
                                  {"path", cfg.data.path}});

  toml::array stages;
  for (const auto& st : cfg.encoder.stages) {
    toml::array layers;
    for (const auto& l : st.layers) layers.push_back(detail::layer_string(l));
    stages.push_back(toml::table{{"name", std::string(stage_name(st.name))},
                                 {"layers", layers},
                                 {"output_bn", st.output_bn},
                                 {"residual", st.residual}});
  }
  root.insert("encoder",
              toml::table{{"input_dim", i64(cfg.encoder.input_dim)}, {"seed", i64(cfg.encoder.seed)}, {"stages", stages}});

  const TrainConfig& tr = cfg.train;
  root.insert("train", toml::table{{"steps", i64(tr.steps)},
                                   {"batch", i64(tr.batch)},
                                   {"lr", tr.lr},
                                   {"sgd_momentum", tr.sgd_momentum},
                                   {"weight_decay", tr.weight_decay},
                                   {"warmup_steps", i64(tr.warmup_steps)},
                                   {"seed", i64(tr.seed)}});

  const ObjectiveSpec& o = tr.objective;
  root.insert("objective", toml::table{{"kind", std::string(objective_name(o.kind))},
                                       {"tau", o.tau},
                                       {"tau_s", o.tau_s},
                                       {"tau_t", o.tau_t},
                                       {"queue_size", i64(o.queue_size)},
                                       {"center_momentum", o.center_momentum},
                                       {"centering", o.centering}});

  toml::table modes;
  for (const auto& [s, m] : tr.policy.modes) {
    toml::table entry{{"mode", std::string(mode_name(m.kind))}};
    if (m.kind == MomentumMode::Kind::ema) entry.insert("beta", m.beta);
    modes.insert(std::string(stage_name(s)), entry);
  }
  root.insert("momentum",
              toml::table{{"schedule", tr.policy.schedule == BetaSchedule::cosine ? "cosine" : "constant"},
                          {"beta_start", tr.policy.beta_start},
                          {"stages", modes}});

  root.insert("augment", toml::table{{"noise_std", tr.aug.noise_std},
                                     {"mask_prob", tr.aug.mask_prob},
                                     {"scale_lo", tr.aug.scale_lo},
                                     {"scale_hi", tr.aug.scale_hi}});

  root.insert("eval", toml::table{{"enabled", cfg.eval.enabled},
                                  {"every", i64(cfg.eval.every)},
                                  {"probe_lr", cfg.eval.probe.lr},
                                  {"probe_epochs", i64(cfg.eval.probe.epochs)},
                                  {"probe_batch", i64(cfg.eval.probe.batch)},
                                  {"probe_seed", i64(cfg.eval.probe.seed)}});

  toml::array filters;
  for (std::size_t f : cfg.telemetry.selector.filters) filters.push_back(i64(f));
  root.insert("telemetry", toml::table{{"weights", cfg.telemetry.weights},
                                       {"stage", std::string(stage_name(cfg.telemetry.selector.stage))},
                                       {"param", cfg.telemetry.selector.param},
                                       {"filters", filters},
                                       {"stride", i64(cfg.telemetry.selector.stride)},
                                       {"grad_stride", i64(cfg.telemetry.grad_stride)}});

  std::ostringstream os;
  os << root << '\n';
  return os.str();
}

}  // namespace emalab
