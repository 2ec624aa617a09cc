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
// Training diagnostics and their CSV encodings:
//   grads.csv    step,stage,linf,l2
//   weights.csv  step,network,filter,w0,w1,...
//   curve.csv    step,loss,lr
//   probe.csv    step,knn1,linear,embed_std
// Reals are written with 17 significant digits so they parse back bit-exact.

#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "emalab/encoder.hpp"
#include "emalab/eval.hpp"
#include "emalab/momentum.hpp"

namespace emalab {

struct GradTraceRow {
  std::size_t step = 0;
  Stage stage = Stage::stem;
  double linf = 0.0;
  double l2 = 0.0;
};

struct WeightTrajectoryRow {
  std::size_t step = 0;
  std::string network;  // "online" or "target"
  std::size_t filter = 0;
  std::vector<double> w;
};

// One row per stage of the first view's activations. The norms run over the
// gradient of the loss w.r.t. that stage's output across all views. A stage
// output that is on the tape but unreachable from the loss reports 0.
inline std::vector<GradTraceRow> record_stage_grads(std::size_t step, const GradMap& grads,
                                                    std::span<const StageActivations> views) {
  std::vector<GradTraceRow> rows;
  if (views.empty()) return rows;
  for (const auto& [stage, unused] : views.front().outputs) {
    GradTraceRow row{step, stage, 0.0, 0.0};
    double ss = 0.0;
    for (const auto& acts : views) {
      const Tensor& out = acts.at(stage);
      if (!out.node()) {
        throw ContractError("no retained gradient slot for stage '" + std::string(stage_name(stage)) +
                            "': its output is not on the tape");
      }
      if (const Tensor* g = grads.find(out)) {
        for (double v : g->data()) {
          row.linf = std::max(row.linf, std::abs(v));
          ss += v * v;
        }
      }
    }
    row.l2 = std::sqrt(ss);
    rows.push_back(row);
  }
  return rows;
}

struct WeightSelector {
  Stage stage = Stage::projector;
  std::string param;                 // empty: last linear weight of the stage
  std::vector<std::size_t> filters;  // empty: every row
  std::size_t stride = 1;

  bool operator==(const WeightSelector&) const = default;
};

inline std::string resolve_param_name(const StageSpec& spec, const WeightSelector& sel) {
  if (!sel.param.empty()) return sel.param;
  for (std::size_t i = spec.layers.size(); i-- > 0;) {
    if (spec.layers[i].kind == Layer::Kind::linear) return std::to_string(i) + ".weight";
  }
  throw ConfigError("weight selector: stage '" + std::string(stage_name(spec.name)) + "' has no linear layer");
}

// Rows for the online weights and for the weights the target path uses
// (the online ones when the stage is shared).
inline std::vector<WeightTrajectoryRow> record_weight_slice(std::size_t step, const ParamSet& online,
                                                            const TargetParams& target, const MomentumPolicy& policy,
                                                            const WeightSelector& sel) {
  const StageParams* sp = online.find(sel.stage);
  if (!sp) throw ConfigError("weight selector: unknown stage '" + std::string(stage_name(sel.stage)) + "'");
  const std::string name = resolve_param_name(sp->spec, sel);
  const Tensor& w_online = sp->get(name).value;
  const bool has_target = sel.stage != Stage::predictor && target.has(sel.stage) &&
                          policy.at(sel.stage).kind != MomentumMode::Kind::share;
  const Tensor& w_target = has_target ? target.at(sel.stage).get(name).value : w_online;

  std::vector<std::size_t> filters = sel.filters;
  if (filters.empty()) {
    filters.resize(w_online.rows());
    for (std::size_t i = 0; i < filters.size(); ++i) filters[i] = i;
  }
  std::vector<WeightTrajectoryRow> rows;
  for (const char* net : {"online", "target"}) {
    const Tensor& w = std::string_view(net) == "online" ? w_online : w_target;
    for (std::size_t f : filters) {
      if (f >= w.rows()) {
        throw ConfigError("weight selector: filter " + std::to_string(f) + " out of range for " + name + " " +
                          shape_str(w.shape()));
      }
      auto r = w.row(f);
      rows.push_back({step, net, f, {r.begin(), r.end()}});
    }
  }
  return rows;
}

inline std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

inline double parse_real(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("not a real number: '" + s + "'");
  return v;
}

using CsvTable = std::vector<std::vector<std::string>>;

inline void export_csv(const std::string& path, const std::vector<std::string>& header, const CsvTable& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out << ',';
      out << fields[i];
    }
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw ContractError("export_csv: row width differs from header");
    line(r);
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

// Header row first.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    t.push_back(std::move(fields));
  }
  return t;
}

inline const std::vector<std::string>& grads_header() {
  static const std::vector<std::string> h = {"step", "stage", "linf", "l2"};
  return h;
}

inline CsvTable grads_table(const std::vector<GradTraceRow>& rows) {
  CsvTable t;
  for (const auto& r : rows) {
    t.push_back({std::to_string(r.step), std::string(stage_name(r.stage)), format_real(r.linf), format_real(r.l2)});
  }
  return t;
}

inline std::vector<std::string> weights_header(std::size_t width) {
  std::vector<std::string> h = {"step", "network", "filter"};
  for (std::size_t i = 0; i < width; ++i) h.push_back("w" + std::to_string(i));
  return h;
}

inline CsvTable weights_table(const std::vector<WeightTrajectoryRow>& rows) {
  CsvTable t;
  for (const auto& r : rows) {
    if (!t.empty() && r.w.size() + 3 != t.front().size()) {
      throw ContractError("weight trajectory rows must share one slice width");
    }
    std::vector<std::string> f = {std::to_string(r.step), r.network, std::to_string(r.filter)};
    for (double v : r.w) f.push_back(format_real(v));
    t.push_back(std::move(f));
  }
  return t;
}

inline const std::vector<std::string>& curve_header() {
  static const std::vector<std::string> h = {"step", "loss", "lr"};
  return h;
}

inline CsvTable curve_table(const std::vector<double>& loss, const std::vector<double>& lr) {
  CsvTable t;
  for (std::size_t i = 0; i < loss.size(); ++i) t.push_back({std::to_string(i), format_real(loss[i]), format_real(lr[i])});
  return t;
}

inline const std::vector<std::string>& probe_header() {
  static const std::vector<std::string> h = {"step", "knn1", "linear", "embed_std"};
  return h;
}

inline CsvTable probe_table(const std::vector<ProbeReport>& reports) {
  CsvTable t;
  for (const auto& r : reports) {
    t.push_back({std::to_string(r.step), format_real(r.knn1_acc), format_real(r.linear_acc),
                 format_real(r.embed_std_mean)});
  }
  return t;
}

}  // namespace emalab
