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
// Batch commands behind the emalab tool. Each returns a process exit code:
// 0 ok, 2 config/validation/artifact error, 3 numeric abort. The grad-check
// command returns 1 when a case exceeds its tolerance.
//
// A run directory holds curve.csv, grads.csv, weights.csv, probe.csv,
// counts.json, params.json, config.toml and manifest.json.

#pragma once

#include <charconv>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "emalab/config.hpp"
#include "emalab/gradcheck_suite.hpp"
#include "emalab/telemetry.hpp"
#include "emalab/trainer.hpp"

namespace emalab {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

inline Dataset load_dataset(const DataConfig& d) {
  if (d.source == "csv") return load_csv_dataset(d.path);
  return gen_blobs(d.classes, d.dim, d.n_per_class, d.spread, d.seed);
}

inline RunOptions run_options(const ExperimentConfig& cfg) {
  RunOptions o;
  o.probes = cfg.eval.enabled;
  o.eval_every = cfg.eval.every;
  o.probe = cfg.eval.probe;
  if (cfg.telemetry.weights) o.weights = cfg.telemetry.selector;
  o.grad_stride = cfg.telemetry.grad_stride;
  return o;
}

// -- counts.json / params.json ------------------------------------------------

inline json counts_json(const ForwardCounter& c) {
  json online = json::object(), target = json::object();
  for (Stage s : kAllStages) {
    online[std::string(stage_name(s))] = c.online[stage_index(s)];
    if (s != Stage::predictor) target[std::string(stage_name(s))] = c.target[stage_index(s)];
  }
  const CountReport r = count_report(c);
  return json{{"online_forwards", online},
              {"target_forwards", target},
              {"online_backbone_forwards", c.online_backbone()},
              {"target_backbone_forwards", c.target_backbone()},
              {"target_backbone_fwd_ratio", r.target_backbone_fwd_ratio},
              {"target_param_bytes", c.target_param_bytes},
              {"online_param_bytes", c.online_param_bytes}};
}

inline json stage_params_json(const StageParams& sp) {
  json out = json::object();
  for (const auto& p : sp.params) out[p.name] = json{{"shape", p.value.shape()}, {"data", p.value.values()}};
  return out;
}

inline json params_json(const ParamSet& online, const TargetParams& target) {
  json on = json::object(), tg = json::object();
  for (const auto& sp : online.stages) on[std::string(stage_name(sp.spec.name))] = stage_params_json(sp);
  for (Stage s : kTargetStages) {
    if (target.has(s)) tg[std::string(stage_name(s))] = stage_params_json(target.at(s));
  }
  return json{{"online", on}, {"target", tg}};
}

// Overwrites the values of `ps` from a params.json section; shapes must match.
inline void load_stage_params(StageParams& sp, const json& j, const std::string& where) {
  for (auto& p : sp.params) {
    const std::string key = where + "." + p.name;
    if (!j.contains(p.name)) throw ParseError("params: missing " + key);
    const json& e = j.at(p.name);
    if (!e.is_object() || !e.contains("shape") || !e.contains("data")) throw ParseError("params: malformed " + key);
    const auto shape = e.at("shape").get<Shape>();
    auto data = e.at("data").get<std::vector<double>>();
    if (shape != p.value.shape() || data.size() != p.value.numel()) {
      throw ParseError("params: shape mismatch for " + key + ", expected " + shape_str(p.value.shape()));
    }
    p.value = Tensor(shape, std::move(data));
  }
}

inline ParamSet load_online_params(const fs::path& path, const EncoderConfig& enc) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError("params: " + std::string(e.what()));
  }
  ParamSet ps = build_encoder(enc);
  if (!j.is_object() || !j.contains("online")) throw ParseError("params: missing 'online' section");
  try {
    for (auto& sp : ps.stages) {
      const std::string name(stage_name(sp.spec.name));
      if (!j["online"].contains(name)) throw ParseError("params: missing stage online." + name);
      load_stage_params(sp, j["online"][name], "online." + name);
    }
  } catch (const json::exception& e) {
    throw ParseError("params: " + std::string(e.what()));
  }
  return ps;
}

// -- train ---------------------------------------------------------------------

inline double mean_linf(const std::vector<GradTraceRow>& rows, Stage s) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.stage == s) {
      sum += r.linf;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

inline void write_run(const fs::path& dir, const ExperimentConfig& cfg, const RunArtifacts& art) {
  fs::create_directories(dir);
  export_csv((dir / "curve.csv").string(), curve_header(), curve_table(art.loss, art.lr));
  export_csv((dir / "grads.csv").string(), grads_header(), grads_table(art.grads));
  const std::size_t width = art.weights.empty() ? 0 : art.weights.front().w.size();
  export_csv((dir / "weights.csv").string(), weights_header(width), weights_table(art.weights));
  export_csv((dir / "probe.csv").string(), probe_header(), probe_table(art.probes));
  write_file(dir / "counts.json", counts_json(art.counter).dump(2) + "\n");
  write_file(dir / "params.json", params_json(art.online, art.target).dump() + "\n");
  const std::string config_text = dump_config(cfg);
  write_file(dir / "config.toml", config_text);

  json files = json::object();
  for (const char* f : {"curve.csv", "grads.csv", "weights.csv", "probe.csv", "counts.json", "params.json",
                        "config.toml"}) {
    files[f] = sha256_hex(read_file(dir / f));
  }
  json manifest{{"config_sha256", sha256_hex(config_text)},
                {"seed", cfg.train.seed},
                {"encoder_seed", cfg.encoder.seed},
                {"data_seed", cfg.data.seed},
                {"artifacts", files}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  const Dataset data = load_dataset(cfg.data);
  return run_training(cfg.encoder, cfg.train, data, run_options(cfg));
}

inline void apply_seed_override(ExperimentConfig& cfg, std::optional<std::uint64_t> seed) {
  if (!seed) return;
  cfg.train.seed = *seed;
  cfg.encoder.seed = *seed;
}

inline int cmd_train(ExperimentConfig cfg, std::optional<fs::path> out = {}, std::ostream& err = std::cerr) {
  try {
    validate(cfg);
    const fs::path dir = out ? *out : fs::path(cfg.output_dir);
    const RunArtifacts art = run_experiment(cfg);
    write_run(dir, cfg, art);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << '\n';
    return 3;
  }
}

inline int cmd_train(const fs::path& config_path, std::optional<fs::path> out = {},
                     std::optional<std::uint64_t> seed = {}, std::ostream& err = std::cerr) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path.string());
    apply_seed_override(cfg, seed);
    validate(cfg);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  }
  return cmd_train(std::move(cfg), std::move(out), err);
}

// -- compare -------------------------------------------------------------------

struct SweepSpec {
  ExperimentConfig base;
  std::vector<std::string> presets;
  std::vector<double> betas;
};

// A sweep file is an experiment config plus a [sweep] table with `presets`
// and `betas` arrays; any [momentum] table in it is ignored.
inline SweepSpec parse_sweep(std::string_view text, std::string_view source = "sweep") {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "sweep parse error: " << e.description() << " (" << e.source().begin << ")";
    throw ConfigError(os.str());
  }
  const toml::table* sweep = root["sweep"].as_table();
  if (!sweep) throw ConfigError("sweep file needs a [sweep] table");
  detail::check_keys(*sweep, {"presets", "betas"}, "[sweep]");
  SweepSpec spec;
  const auto* presets = sweep->get_as<toml::array>("presets");
  const auto* betas = sweep->get_as<toml::array>("betas");
  if (!presets || presets->empty() || !betas || betas->empty()) {
    throw ConfigError("[sweep] needs non-empty presets and betas arrays");
  }
  const auto& names = policy_preset_names();
  for (const auto& n : *presets) {
    auto s = n.value<std::string>();
    if (!s || std::find(names.begin(), names.end(), *s) == names.end()) {
      throw ConfigError("unknown sweep preset '" + s.value_or("?") + "'");
    }
    spec.presets.push_back(*s);
  }
  for (const auto& n : *betas) {
    auto b = n.value<double>();
    if (!b || !(*b >= 0.0 && *b <= 1.0)) throw ConfigError("beta out of range [0,1]");
    spec.betas.push_back(*b);
  }
  root.erase("sweep");
  root.erase("momentum");
  spec.base = parse_config(root);
  return spec;
}

inline const std::vector<std::string>& summary_header() {
  static const std::vector<std::string> h = {"preset", "beta", "final_loss", "knn1", "linear", "embed_std",
                                             "target_backbone_fwd_ratio", "target_param_bytes",
                                             "proj_block1_grad_ratio", "status"};
  return h;
}

// Shortest round-trip spelling of beta, e.g. "full_b0.99".
inline std::string cell_name(const std::string& preset, double beta) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), beta);
  return preset + "_b" + std::string(buf, ptr);
}

inline std::vector<std::string> run_cell(const ExperimentConfig& base, const std::string& preset, double beta,
                                         const std::optional<fs::path>& cell_dir) {
  auto clean = [](std::string s) {
    for (char& c : s) {
      if (c == ',' || c == '\n') c = ';';
    }
    return s;
  };
  std::vector<std::string> row = {preset, format_real(beta), "", "", "", "", "", "", "", ""};
  try {
    ExperimentConfig cfg = base;
    cfg.train.policy = policy_preset(preset, beta);
    const RunArtifacts art = run_experiment(cfg);
    if (cell_dir) write_run(*cell_dir, cfg, art);
    const CountReport cr = count_report(art.counter);
    const double block1 = mean_linf(art.grads, Stage::block1);
    row[2] = art.loss.empty() ? "" : format_real(art.loss.back());
    if (!art.probes.empty()) {
      row[3] = format_real(art.probes.back().knn1_acc);
      row[4] = format_real(art.probes.back().linear_acc);
      row[5] = format_real(art.probes.back().embed_std_mean);
    }
    row[6] = format_real(cr.target_backbone_fwd_ratio);
    row[7] = std::to_string(art.counter.target_param_bytes);
    row[8] = block1 > 0.0 ? format_real(mean_linf(art.grads, Stage::projector) / block1) : "";
    row[9] = "ok";
  } catch (const NumericError& e) {
    row[9] = clean(std::string("numeric_abort: ") + e.what());
  } catch (const Error& e) {
    row[9] = clean(std::string("error: ") + e.what());
  }
  return row;
}

inline int cmd_compare(const SweepSpec& sweep, const fs::path& out, std::ostream& err = std::cerr) {
  try {
    fs::create_directories(out);
    CsvTable rows;
    for (const auto& preset : sweep.presets) {
      for (double beta : sweep.betas) rows.push_back(run_cell(sweep.base, preset, beta, out / cell_name(preset, beta)));
    }
    export_csv((out / "summary.csv").string(), summary_header(), rows);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return 2;
  }
}

inline int cmd_compare(const fs::path& sweep_path, std::optional<fs::path> out = {},
                       std::optional<std::uint64_t> seed = {}, std::ostream& err = std::cerr) {
  SweepSpec sweep;
  try {
    sweep = parse_sweep(read_file(sweep_path), sweep_path.string());
    apply_seed_override(sweep.base, seed);
    validate(sweep.base);
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  }
  return cmd_compare(sweep, out ? *out : fs::path(sweep.base.output_dir), err);
}

// -- probe ---------------------------------------------------------------------

inline json probe_json(const ProbeReport& r) {
  return json{{"step", r.step},
              {"knn1", r.knn1_acc},
              {"linear", r.linear_acc},
              {"embed_std", r.embed_std_mean},
              {"embed_std_per_dim", r.embed_std}};
}

// Re-evaluates the final online snapshot of a run directory.
inline int cmd_probe(const fs::path& run_dir, std::optional<fs::path> out = {}, std::ostream& err = std::cerr) {
  try {
    if (!fs::exists(run_dir / "config.toml") || !fs::exists(run_dir / "params.json")) {
      throw IoError("run directory '" + run_dir.string() + "' lacks config.toml or params.json");
    }
    const ExperimentConfig cfg = load_config((run_dir / "config.toml").string());
    const ParamSet online = load_online_params(run_dir / "params.json", cfg.encoder);
    const Dataset data = load_dataset(cfg.data);
    const auto [train, test] = split_train_test(data, cfg.train.seed);
    const ProbeReport r = probe(online, train, test, cfg.train.steps, cfg.eval.probe);
    write_file(out ? *out : run_dir / "probe.json", probe_json(r).dump(2) + "\n");
    return 0;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

// -- grad-check ----------------------------------------------------------------

inline int cmd_grad_check(std::size_t instances = 100, double tolerance = 1e-6, std::ostream& os = std::cout) {
  bool ok = true;
  auto run = [&](const std::vector<GradCheckCase>& cases) {
    for (const auto& gc : cases) {
      const GradCheckSummary s = run_grad_check_case(gc, instances);
      const bool pass = s.worst <= tolerance;
      ok = ok && pass;
      os << (pass ? "PASS " : "FAIL ") << s.name << " max_rel_error=" << format_real(s.worst)
         << " worst_seed=" << s.worst_seed << '\n';
    }
  };
  run(primitive_grad_checks());
  run(loss_grad_checks());
  return ok ? 0 : 1;
}

}  // namespace emalab
