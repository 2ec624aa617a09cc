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
// Acceptance suite. Prints one PASS/FAIL line per criterion.
//
//   acceptance [--strict] [--only N]
//
// Exit status is non-zero when a criterion fails that is not listed in
// kKnownFailures, or when any criterion fails under --strict. See README.md
// for the known failures.

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <set>

#include "emalab/commands.hpp"
#include "emalab/gradcheck_suite.hpp"
#include "oracles.hpp"

namespace emalab {
namespace {

namespace fs = std::filesystem;

const std::set<int> kKnownFailures = {3, 9};

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Fixture shared by the training criteria: 8 blobs in 32 dimensions.
Dataset blobs() { return gen_blobs(8, 32, 64, 0.1, 1); }

TrainConfig train_fixture(const std::string& preset, double beta, std::size_t steps) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch = 64;
  cfg.lr = 0.05;
  cfg.seed = 7;
  cfg.policy = policy_preset(preset, beta);
  return cfg;
}

Tensor batch_of(const Dataset& ds, std::size_t step, std::size_t batch) {
  std::vector<std::size_t> idx(batch);
  for (std::size_t i = 0; i < batch; ++i) idx[i] = (step * batch + i) % ds.size();
  return ds.subset(idx, "batch").X;
}

bool same_params(const StageParams& a, const StageParams& b) {
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (!bitwise_equal(a.params[i].value, b.params[i].value)) return false;
  }
  return true;
}

Outcome ema_algebra() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  EncoderShape shape;
  shape.input_dim = 4;
  shape.width = 3;
  shape.proj_hidden = 3;
  shape.proj_out = 2;
  shape.predictor = false;
  const EncoderConfig enc = make_encoder_config(shape, 1);
  std::size_t mismatches = 0, endpoint_mismatches = 0, coords = 0;

  for (int trial = 0; trial < 1000; ++trial) {
    ParamSet online = build_encoder(enc);
    for (auto& st : online.stages) {
      for (auto& p : st.params) p.value = detail::uniform_tensor(p.value.shape(), rng);
    }
    const double beta = unit(rng);
    MomentumPolicy policy = uniform_policy(MomentumMode::ema(beta));
    TargetParams target = init_target(build_encoder(make_encoder_config(shape, 1000 + trial)), policy);
    for (Stage s : kTargetStages) {
      for (auto& p : target.at(s).params) p.value = detail::uniform_tensor(p.value.shape(), rng);
    }
    const TargetParams before = target;
    ema_update(target, online, policy);
    for (Stage s : kTargetStages) {
      for (std::size_t i = 0; i < target.at(s).params.size(); ++i) {
        const Tensor& xi = before.at(s).params[i].value;
        const Tensor& th = online.at(s).params[i].value;
        const Tensor& got = target.at(s).params[i].value;
        for (std::size_t k = 0; k < xi.numel(); ++k, ++coords) {
          if (got[k] != beta * xi[k] + (1.0 - beta) * th[k]) ++mismatches;
        }
      }
    }
    for (double endpoint : {0.0, 1.0}) {
      policy = uniform_policy(MomentumMode::ema(endpoint));
      TargetParams t = before;
      ema_update(t, online, policy);
      for (Stage s : kTargetStages) {
        if (!same_params(t.at(s), endpoint == 0.0 ? online.at(s) : before.at(s))) ++endpoint_mismatches;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && endpoint_mismatches == 0 && secs < 1.0,
          "1000 triples, " + std::to_string(coords) + " coordinates, mismatches=" + std::to_string(mismatches) +
              ", endpoint mismatches=" + std::to_string(endpoint_mismatches) + ", " + fmt(secs) + " s"};
}

Outcome drift_law() {
  const Dataset data = blobs();
  const TrainConfig cfg = train_fixture("full", 0.99, 500);
  TrainState st = init_state(default_encoder_config(0), cfg);
  double worst = 0.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const TargetParams before = st.target;
    train_step(st, cfg, batch_of(data, step, cfg.batch));
    for (Stage s : kTargetStages) {
      for (std::size_t i = 0; i < st.target.at(s).params.size(); ++i) {
        const Tensor& x0 = before.at(s).params[i].value;
        const Tensor& x1 = st.target.at(s).params[i].value;
        const Tensor& th = st.online.at(s).params[i].value;
        for (std::size_t k = 0; k < x0.numel(); ++k) {
          worst = std::max(worst, std::abs(std::abs(x1[k] - x0[k]) - (1.0 - 0.99) * std::abs(th[k] - x0[k])));
        }
      }
    }
  }
  return {worst <= 1e-12, "500 steps full EMA beta=0.99, max deviation " + fmt(worst)};
}

Outcome grad_checks() {
  const auto t0 = Clock::now();
  std::vector<GradCheckCase> cases = primitive_grad_checks();
  for (auto& c : loss_grad_checks()) cases.push_back(std::move(c));
  std::string failing;
  double worst = 0.0;
  for (const auto& gc : cases) {
    const GradCheckSummary s = run_grad_check_case(gc, 100);
    worst = std::max(worst, s.worst);
    if (s.worst > 1e-6) failing += " " + s.name + "=" + fmt(s.worst) + "@seed" + std::to_string(s.worst_seed);
  }
  const double secs = seconds_since(t0);
  return {failing.empty() && secs < 30.0,
          std::to_string(cases.size()) + " cases x 100 instances, worst " + fmt(worst) + ", " + fmt(secs) + " s" +
              (failing.empty() ? "" : "; over 1e-6:" + failing)};
}

Outcome stop_gradient() {
  const Dataset data = blobs();
  std::string detail;
  bool ok = true;
  for (const char* preset : {"full", "projector-only"}) {
    const TrainConfig cfg = train_fixture(preset, 0.99, 200);
    TrainState st = init_state(default_encoder_config(0), cfg);
    std::size_t leaked = 0, min_online = std::numeric_limits<std::size_t>::max();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      const StepMetrics m = train_step(st, cfg, batch_of(data, step, cfg.batch));
      leaked += m.target_grad_entries;
      min_online = std::min(min_online, m.online_grad_entries);
    }
    ok = ok && leaked == 0 && min_online > 0;
    detail += std::string(detail.empty() ? "" : "; ") + preset + ": target entries " + std::to_string(leaked) +
              ", min online entries " + std::to_string(min_online);
  }
  return {ok, "200 steps each; " + detail};
}

Outcome loss_oracles() {
  std::mt19937_64 rng(55);
  std::uniform_int_distribution<std::size_t> batch(1, 4), dim(2, 8), qn(0, 5);
  std::uniform_real_distribution<double> temp(0.05, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t b = batch(rng), d = dim(rng);
    const auto p1 = oracle::random_rows(b, d, rng), p2 = oracle::random_rows(b, d, rng);
    const auto z1 = oracle::random_rows(b, d, rng), z2 = oracle::random_rows(b, d, rng);
    Tape tape;
    const double nc = loss_negcos(tape, oracle::tensor_of(p1), oracle::tensor_of(p2), oracle::tensor_of(z1),
                                  oracle::tensor_of(z2))
                          .item();
    worst = std::max(worst, std::abs(nc - oracle::negcos(p1, p2, z1, z2)));

    const auto queued = oracle::random_rows(qn(rng), d, rng);
    FeatureQueue q(8);
    if (!queued.empty()) queue_push(q, oracle::tensor_of(queued));
    const double tau = temp(rng);
    const double nce = loss_infonce(tape, oracle::tensor_of(p1), oracle::tensor_of(z2), q, tau).item();
    worst = std::max(worst, std::abs(nce - oracle::infonce(p1, z2, queued, tau)));

    std::vector<double> center(d);
    for (double& c : center) c = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    const CenterState cs{center, 0.9};
    const double ts = temp(rng), tt = temp(rng);
    const double sce = loss_softce(tape, oracle::tensor_of(p1), oracle::tensor_of(z1), ts, tt, &cs).item();
    worst = std::max(worst, std::abs(sce - oracle::softce(p1, z1, ts, tt, center)));
  }
  return {worst <= 1e-10, "50 instances x 3 losses, max |loss - oracle| " + fmt(worst)};
}

Outcome forward_accounting() {
  const Dataset data = blobs();
  const EncoderConfig enc = default_encoder_config(0);
  const ParamSet init = build_encoder(enc);
  RunOptions opts;
  opts.probes = false;
  std::string detail;
  bool ok = true;

  auto t0 = Clock::now();
  const RunArtifacts po = run_training(enc, train_fixture("projector-only", 0.99, 300), data, opts);
  const double po_secs = seconds_since(t0);
  const CountReport a = count_report(po.counter);
  const bool po_ok = po.counter.target_backbone() == 0 && a.target_param_bytes == stage_bytes(init.at(Stage::projector)) &&
                     po.counter.target[stage_index(Stage::projector)] == 2 * 300;
  detail += "projector-only: target backbone fwd " + std::to_string(po.counter.target_backbone()) + ", bytes " +
            std::to_string(a.target_param_bytes) + " (projector " +
            std::to_string(stage_bytes(init.at(Stage::projector))) + "), " + fmt(po_secs) + " s";

  t0 = Clock::now();
  const RunArtifacts full = run_training(enc, train_fixture("full", 0.99, 300), data, opts);
  const double full_secs = seconds_since(t0);
  const CountReport b = count_report(full.counter);
  bool per_stage = true;
  for (Stage s : kTargetStages) per_stage = per_stage && full.counter.target[stage_index(s)] == full.counter.online[stage_index(s)];
  const bool full_ok = per_stage && b.target_param_bytes == online_target_eligible_bytes(init) &&
                       b.target_backbone_fwd_ratio == 1.0;
  detail += "; full: per-stage target==online " + std::string(per_stage ? "yes" : "no") + ", bytes " +
            std::to_string(b.target_param_bytes) + " (online non-predictor " +
            std::to_string(online_target_eligible_bytes(init)) + "), " + fmt(full_secs) + " s";
  ok = po_ok && full_ok && po_secs < 10.0 && full_secs < 10.0;
  return {ok, detail};
}

Outcome symmetric_loss() {
  const Dataset data = blobs();
  TrainConfig cfg = train_fixture("projector-only", 0.99, 100);
  TrainState a = init_state(default_encoder_config(0), cfg);
  TrainConfig swapped = cfg;
  swapped.swap_views = true;
  TrainState b = init_state(default_encoder_config(0), swapped);
  std::size_t differing = 0;
  double worst = 0.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double la = train_step(a, cfg, batch_of(data, step, cfg.batch)).loss;
    const double lb = train_step(b, swapped, batch_of(data, step, cfg.batch)).loss;
    if (std::memcmp(&la, &lb, sizeof(double)) != 0) ++differing;
    worst = std::max(worst, std::abs(la - lb));
  }
  return {differing == 0, "100 steps NegCosine, steps with differing loss bits " + std::to_string(differing) +
                              ", max |diff| " + fmt(worst)};
}

Outcome frozen_projector() {
  const Dataset data = blobs();
  const TrainConfig cfg = train_fixture("projector-only", 1.0, 500);
  TrainState st = init_state(default_encoder_config(0), cfg);
  const StageParams initial = st.target.at(Stage::projector);
  std::size_t changed = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    train_step(st, cfg, batch_of(data, step, cfg.batch));
    if (!same_params(st.target.at(Stage::projector), initial)) ++changed;
  }
  const bool online_moved = !same_params(st.online.at(Stage::projector), initial);
  return {changed == 0 && online_moved, "500 steps beta=1, steps with changed target projector " +
                                            std::to_string(changed) + ", online projector moved " +
                                            (online_moved ? "yes" : "no")};
}

Outcome collapse_contrast() {
  const auto t0 = Clock::now();
  const Dataset data = blobs();
  auto final_std = [&](const std::string& preset, double beta) {
    TrainConfig cfg = train_fixture(preset, beta, 1000);
    cfg.objective.kind = ObjectiveKind::soft_ce;
    cfg.objective.centering = false;
    RunOptions opts;
    opts.probe.epochs = 20;
    return run_training(default_encoder_config(0, false), cfg, data, opts).probes.back().embed_std_mean;
  };
  const double shared = final_std("none", 0.0);
  const double ema = final_std("projector-only", 0.99);
  const double secs = seconds_since(t0);
  return {shared < 0.02 && ema > 0.05 && secs < 120.0,
          "seed 7, SoftCE without centering, 1000 steps: all-share embed std " + fmt(shared) +
              " (want < 0.02), projector-only beta=0.99 embed std " + fmt(ema) + " (want > 0.05), " + fmt(secs) +
              " s"};
}

Outcome smoke_learning() {
  const auto t0 = Clock::now();
  RunOptions opts;
  opts.probe.epochs = 20;
  const RunArtifacts art =
      run_training(default_encoder_config(0), train_fixture("projector-only", 0.99, 2000), blobs(), opts);
  const double gain = art.probes.back().knn1_acc - art.probes.front().knn1_acc;
  const double secs = seconds_since(t0);
  return {gain >= 0.10 && secs < 180.0, "seed 7, KNN-1 " + fmt(art.probes.front().knn1_acc) + " -> " +
                                            fmt(art.probes.back().knn1_acc) + " (gain " + fmt(gain) + "), " +
                                            fmt(secs) + " s"};
}

ExperimentConfig cli_fixture(const std::string& preset) {
  ExperimentConfig cfg;
  cfg.data.seed = 1;
  cfg.train = train_fixture(preset, 0.99, 100);
  cfg.eval.probe.epochs = 20;
  return cfg;
}

Outcome gradient_trace() {
  const fs::path dir = fs::temp_directory_path() / "emalab_acceptance_trace";
  fs::remove_all(dir);
  std::ostringstream err;
  if (cmd_train(cli_fixture("projector-only"), dir / "run", err) != 0) return {false, "cmd_train failed: " + err.str()};
  const CsvTable t = read_csv((dir / "run" / "grads.csv").string());
  std::map<std::size_t, std::set<std::string>> stages;
  bool finite = true;
  for (std::size_t i = 1; i < t.size(); ++i) {
    stages[std::stoul(t[i][0])].insert(t[i][1]);
    finite = finite && std::isfinite(parse_real(t[i][2])) && std::isfinite(parse_real(t[i][3]));
  }
  bool complete = stages.size() == 100;
  for (const auto& [step, names] : stages) complete = complete && names.size() == kStageCount;

  SweepSpec sweep{cli_fixture("projector-only"), {"projector-only"}, {0.99}};
  if (cmd_compare(sweep, dir / "sweep", err) != 0) return {false, "cmd_compare failed: " + err.str()};
  const CsvTable summary = read_csv((dir / "sweep" / "summary.csv").string());
  const std::string ratio = summary.size() == 2 ? summary[1][8] : "";
  const bool ratio_ok = !ratio.empty() && std::isfinite(parse_real(ratio));
  return {complete && finite && ratio_ok, std::to_string(t.size() - 1) + " rows over " +
                                              std::to_string(stages.size()) + " steps, all stages " +
                                              (complete ? "present" : "missing") + ", finite " +
                                              (finite ? "yes" : "no") + "; proj/block1 linf ratio " + ratio};
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "emalab_acceptance_det";
  fs::remove_all(dir);
  const ExperimentConfig cfg = cli_fixture("projector-only");
  if (cmd_train(cfg, dir / "a") != 0 || cmd_train(cfg, dir / "b") != 0) return {false, "cmd_train failed"};
  std::string differing;
  for (const char* f : {"curve.csv", "grads.csv", "counts.json"}) {
    if (read_file(dir / "a" / f) != read_file(dir / "b" / f)) differing += std::string(" ") + f;
  }
  return {differing.empty(), differing.empty() ? "curve.csv grads.csv counts.json identical" : "differ:" + differing};
}

}  // namespace
}  // namespace emalab

int main(int argc, char** argv) {
  using namespace emalab;
  bool strict = false;
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) strict = true;
    else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"EMA algebra", ema_algebra},
      {"drift law", drift_law},
      {"gradient checks", grad_checks},
      {"stop-gradient", stop_gradient},
      {"loss oracles", loss_oracles},
      {"forward accounting", forward_accounting},
      {"symmetric loss", symmetric_loss},
      {"frozen projector", frozen_projector},
      {"collapse contrast", collapse_contrast},
      {"smoke learning", smoke_learning},
      {"gradient trace", gradient_trace},
      {"determinism", determinism},
  };

  int unexpected = 0, failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (only && only != id) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool known = kKnownFailures.count(id) > 0;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail
              << (!o.pass && known ? " (known failure)" : "") << std::endl;
    if (!o.pass) {
      ++failed;
      if (!known) ++unexpected;
    }
  }
  std::cout << failed << " of " << (only ? 1 : criteria.size()) << " criteria failed" << std::endl;
  return (strict ? failed : unexpected) == 0 ? 0 : 1;
}
