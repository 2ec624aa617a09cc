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

#include <cmath>

#include <gtest/gtest.h>

#include "emalab/encoder.hpp"
#include "test_util.hpp"

namespace emalab {
namespace {

using testing::small_encoder;
using testing::uniform;

bool same_params(const ParamSet& a, const ParamSet& b) {
  if (a.stages.size() != b.stages.size()) return false;
  for (std::size_t s = 0; s < a.stages.size(); ++s) {
    const auto& pa = a.stages[s].params;
    const auto& pb = b.stages[s].params;
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (pa[i].name != pb[i].name || !bitwise_equal(pa[i].value, pb[i].value)) return false;
    }
  }
  return true;
}

// stem linear(4,3); blocks linear(3,3); projector linear(3,2),bn,relu,linear(2,16); BN1 after block4.
EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.input_dim = 4;
  cfg.stages.push_back({Stage::stem, {Layer::linear(4, 3)}});
  for (Stage s : {Stage::block1, Stage::block2, Stage::block3, Stage::block4}) {
    cfg.stages.push_back({s, {Layer::linear(3, 3)}});
  }
  cfg.stages.back().output_bn = true;
  cfg.stages.push_back({Stage::projector, mlp_head(3, 2, 16)});
  return cfg;
}

TEST(BuildEncoder, DeterministicInSeed) {
  EXPECT_TRUE(same_params(build_encoder(small_encoder(3)), build_encoder(small_encoder(3))));
  EXPECT_FALSE(same_params(build_encoder(small_encoder(3)), build_encoder(small_encoder(4))));
}

TEST(BuildEncoder, ProjectorParameterCount) {
  const StageSpec projector{Stage::projector, mlp_head(8, 2, 16)};
  EXPECT_EQ(stage_param_count(projector, 8), 8u * 2 + 2 + 2 * 2 + 2 * 16 + 16);
  EXPECT_EQ(stage_param_count(projector, 8), 70u);
}

TEST(BuildEncoder, ReferenceParameterCounts) {
  // stem 32*64+64+2*64; blocks 4*2*(64*64+64+2*64); projector and predictor
  // linear, bn, linear.
  const std::size_t stem = 32 * 64 + 64 + 128;
  const std::size_t blocks = 4 * 2 * (64 * 64 + 64 + 128);
  const std::size_t projector = 64 * 128 + 128 + 256 + 128 * 32 + 32;
  const std::size_t predictor = 32 * 128 + 128 + 256 + 128 * 32 + 32;
  EXPECT_EQ(parameter_count(default_encoder_config()), stem + blocks + projector + predictor);
  EXPECT_EQ(parameter_count(default_encoder_config()), 57856u);

  const std::size_t viz_projector = 64 * 2 + 2 + 4 + 2 * 32 + 32;
  EXPECT_EQ(parameter_count(viz_config(0, false)), stem + blocks + viz_projector);

  // 4*3+3, 4*(3*3+3), BN1 2*3, 3*2+2+2*2+2*16+16
  EXPECT_EQ(parameter_count(tiny_config()), 15u + 48u + 6u + 60u);
  EXPECT_EQ(build_encoder(tiny_config()).trainable_count(), parameter_count(tiny_config()));
  EXPECT_EQ(build_encoder(default_encoder_config()).trainable_count(), 57856u);
}

TEST(BuildEncoder, Initialization) {
  const ParamSet ps = build_encoder(default_encoder_config(9));
  const Tensor& w = ps.at(Stage::block2).get("0.weight").value;
  ASSERT_EQ(w.shape(), (Shape{64, 64}));
  double mean = 0.0, sq = 0.0;
  for (double v : w.data()) mean += v;
  mean /= static_cast<double>(w.numel());
  for (double v : w.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(w.numel()));
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(sd, std::sqrt(2.0 / 64.0), 0.05 * std::sqrt(2.0 / 64.0));
  for (double v : ps.at(Stage::block2).get("0.bias").value.data()) EXPECT_EQ(v, 0.0);
  for (double v : ps.at(Stage::block2).get("1.gamma").value.data()) EXPECT_EQ(v, 1.0);
  for (double v : ps.at(Stage::block2).get("1.beta").value.data()) EXPECT_EQ(v, 0.0);
  for (double v : ps.at(Stage::block2).get("1.running_var").value.data()) EXPECT_EQ(v, 1.0);
}

TEST(BuildEncoder, RejectsBrokenChains) {
  EncoderConfig cfg = tiny_config();
  cfg.stages[2].layers = {Layer::linear(4, 3)};
  EXPECT_THROW(build_encoder(cfg), ConfigError);

  cfg = tiny_config();
  std::swap(cfg.stages[1], cfg.stages[2]);
  EXPECT_THROW(build_encoder(cfg), ConfigError);

  cfg = small_encoder();
  cfg.stages.back().layers.back() = Layer::linear(16, 5);
  EXPECT_THROW(build_encoder(cfg), ConfigError);
}

TEST(BuildEncoder, OutputBnFlagsAddParameters) {
  const ParamSet ps = build_encoder(tiny_config());
  EXPECT_NO_THROW(ps.at(Stage::block4).get("out_bn.gamma"));
  EXPECT_THROW(ps.at(Stage::block3).get("out_bn.gamma"), ConfigError);
}

TEST(Forward, IdentityStagesPassInputThrough) {
  EncoderConfig cfg;
  cfg.input_dim = 3;
  for (Stage s : kAllStages) cfg.stages.push_back({s, {Layer::linear(3, 3)}});
  ParamSet ps = build_encoder(cfg);
  for (auto& st : ps.stages) {
    st.get("0.weight").value = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  }
  const Tensor x = uniform({5, 3}, 1);
  Tape tape;
  const StageActivations acts = forward_stages(tape, ps, x, {Mode::eval, true});
  ASSERT_EQ(acts.outputs.size(), 7u);
  for (const auto& [s, t] : acts.outputs) EXPECT_TRUE(bitwise_equal(t, x)) << stage_name(s);
}

TEST(Forward, ShapesPropagate) {
  EncoderShape shape;
  shape.input_dim = 8;
  shape.width = 16;
  shape.proj_hidden = 16;
  shape.proj_out = 6;
  shape.pred_hidden = 10;
  const ParamSet ps = build_encoder(make_encoder_config(shape, 1));
  Tape tape;
  const StageActivations acts = forward_stages(tape, ps, uniform({4, 8}, 2));
  for (Stage s : {Stage::stem, Stage::block1, Stage::block2, Stage::block3, Stage::block4}) {
    EXPECT_EQ(acts.at(s).shape(), (Shape{4, 16}));
  }
  EXPECT_EQ(acts.at(Stage::projector).shape(), (Shape{4, 6}));
  EXPECT_EQ(acts.at(Stage::predictor).shape(), acts.at(Stage::projector).shape());
}

TEST(Forward, WrongInputWidthIsDimensionError) {
  const ParamSet ps = build_encoder(small_encoder());
  Tape tape;
  EXPECT_THROW(forward_stages(tape, ps, uniform({4, 7}, 2)), DimensionError);
}

TEST(Forward, UnknownStartStageIsConfigError) {
  const ParamSet ps = build_encoder(small_encoder(3, /*predictor=*/false));
  Tape tape;
  EXPECT_THROW(forward_from(tape, ps, Stage::predictor, uniform({4, 6}, 2)), ConfigError);
}

TEST(Forward, SuffixConsistency) {
  const ParamSet ps = build_encoder(small_encoder(5));
  const Tensor x = uniform({6, 8}, 3);
  for (Mode mode : {Mode::eval, Mode::train}) {
    Tape tape;
    const StageActivations full = forward_stages(tape, ps, x, {mode, true});
    for (std::size_t k = 1; k < kAllStages.size(); ++k) {
      const StageActivations suffix = forward_from(tape, ps, kAllStages[k], full.at(kAllStages[k - 1]), {mode, true});
      ASSERT_EQ(suffix.outputs.size(), kAllStages.size() - k);
      for (const auto& [s, t] : suffix.outputs) {
        EXPECT_LE(max_abs_diff(t, full.at(s)), mode == Mode::eval ? 1e-12 : 0.0) << stage_name(s);
      }
    }
    EXPECT_TRUE(bitwise_equal(forward_from(tape, ps, Stage::stem, x, {mode, true}).at(Stage::predictor),
                              full.at(Stage::predictor)));
  }
}

TEST(Forward, StartAtBlock3RunsOnlyLaterStages) {
  const ParamSet ps = build_encoder(small_encoder(5, /*predictor=*/false));
  Tape tape;
  const StageActivations full = forward_stages(tape, ps, uniform({4, 8}, 3));
  const StageActivations rest = forward_from(tape, ps, Stage::block3, full.at(Stage::block2));
  ASSERT_EQ(rest.outputs.size(), 3u);
  EXPECT_EQ(rest.outputs[0].first, Stage::block3);
  EXPECT_EQ(rest.outputs[1].first, Stage::block4);
  EXPECT_EQ(rest.outputs[2].first, Stage::projector);
}

TEST(Forward, EvalModeIsPure) {
  const ParamSet ps = build_encoder(small_encoder(5));
  const Tensor x = uniform({4, 8}, 3);
  Tape t1, t2;
  EXPECT_TRUE(bitwise_equal(forward_stages(t1, ps, x, {Mode::eval, true}).at(Stage::predictor),
                            forward_stages(t2, ps, x, {Mode::eval, true}).at(Stage::predictor)));
}

TEST(Forward, ResidualAddsTheInput) {
  EncoderConfig cfg = tiny_config();
  cfg.stages[2].residual = true;
  const ParamSet ps = build_encoder(cfg);
  EncoderConfig plain_cfg = tiny_config();
  const ParamSet plain = build_encoder(plain_cfg);
  const Tensor x = uniform({3, 3}, 8);
  Tape tape;
  const Tensor with = forward_from(tape, ps, Stage::block2, x, {Mode::eval, false}).at(Stage::block2);
  const Tensor without = forward_from(tape, plain, Stage::block2, x, {Mode::eval, false}).at(Stage::block2);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(with[i], without[i] + x[i]);
}

TEST(Forward, TrainModeRecordsBatchStatistics) {
  ParamSet ps = build_encoder(small_encoder(5));
  Tape tape;
  const StageActivations acts = forward_stages(tape, ps, uniform({6, 8}, 3));
  EXPECT_FALSE(acts.bn_updates.empty());
  const Tensor before = ps.at(Stage::stem).get("1.running_mean").value;
  apply_bn_updates(ps, acts);
  EXPECT_FALSE(bitwise_equal(before, ps.at(Stage::stem).get("1.running_mean").value));
}

}  // namespace
}  // namespace emalab
