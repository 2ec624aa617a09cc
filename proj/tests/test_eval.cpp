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

#include "emalab/eval.hpp"
#include "test_util.hpp"

namespace emalab {
namespace {

using testing::uniform;

TEST(Knn, IdenticalPointWins) {
  const Tensor train = Tensor::matrix(3, 2, {1, 0, 0, 1, -1, 0});
  const std::vector<int> labels = {0, 1, 2};
  EXPECT_EQ(knn_eval(train, labels, Tensor::matrix(1, 2, {0, 1}), std::vector<int>{1}), 1.0);
}

TEST(Knn, TiesGoToTheLowestIndex) {
  const Tensor train = Tensor::matrix(2, 2, {1, 0, 2, 0});
  EXPECT_EQ(knn_eval(train, std::vector<int>{4, 5}, Tensor::matrix(1, 2, {3, 0}), std::vector<int>{4}), 1.0);
}

TEST(Knn, RawBlobs) {
  const auto [train, test] = split_train_test(gen_blobs(8, 32, 64, 0.05, 2), 1);
  EXPECT_GE(knn_eval(train.X, train.y, test.X, test.y), 0.99);
}

TEST(Knn, SingleClassTrainSet) {
  const Tensor train = uniform({5, 3}, 1);
  const std::vector<int> ytr(5, 2);
  const std::vector<int> yte = {2, 0, 2, 1};
  EXPECT_EQ(knn_eval(train, ytr, uniform({4, 3}, 2), yte), 0.5);
}

TEST(Knn, InvariantToPositiveRescaling) {
  const auto [train, test] = split_train_test(gen_blobs(4, 6, 20, 0.8, 2), 1);
  std::vector<double> scaled(train.X.values());
  for (double& v : scaled) v *= 13.0;
  EXPECT_EQ(knn_eval(train.X, train.y, test.X, test.y),
            knn_eval(Tensor(train.X.shape(), scaled), train.y, test.X, test.y));
}

TEST(Knn, EmptyTrainSetIsContractError) {
  EXPECT_THROW(knn_eval(Tensor(), std::vector<int>{}, Tensor(), std::vector<int>{0}), ContractError);
}

TEST(LinearProbe, SeparableTwoClass) {
  const Tensor x = Tensor::matrix(6, 2, {1, 0.1, 2, -0.2, 1.5, 0.3, -1, 0.2, -2, 0.1, -1.2, -0.4});
  const std::vector<int> y = {0, 0, 0, 1, 1, 1};
  EXPECT_EQ(linear_probe(x, y, x, y), 1.0);
}

TEST(LinearProbe, ConstantFeaturesScoreTheMajority) {
  const Tensor x = Tensor::filled({10, 3}, 0.5);
  const std::vector<int> ytr = {0, 0, 0, 0, 0, 0, 0, 1, 1, 1};
  const std::vector<int> yte = {0, 0, 0, 1};
  EXPECT_EQ(linear_probe(x, ytr, Tensor::filled({4, 3}, 0.5), yte), 0.75);
}

TEST(LinearProbe, RawBlobs) {
  const auto [train, test] = split_train_test(gen_blobs(8, 32, 64, 0.1, 2), 1);
  EXPECT_GE(linear_probe(train.X, train.y, test.X, test.y), 0.95);
}

TEST(LinearProbe, RequiresDetachedFeatures) {
  Tape tape;
  const Tensor f = tape.leaf(uniform({4, 3}, 1));
  EXPECT_THROW(linear_probe(f, std::vector<int>{0, 1, 0, 1}, f.detached(), std::vector<int>{0, 1, 0, 1}),
               ContractError);
}

TEST(Probe, LeavesEncoderUntouched) {
  const ParamSet ps = build_encoder(testing::small_encoder());
  const ParamSet copy = ps;
  const auto [train, test] = split_train_test(testing::small_blobs(), 1);
  const ProbeReport r = probe(ps, train, test, 0, {0.1, 5, 8, 0});
  EXPECT_GE(r.knn1_acc, 0.0);
  EXPECT_LE(r.linear_acc, 1.0);
  for (std::size_t s = 0; s < ps.stages.size(); ++s) {
    for (std::size_t i = 0; i < ps.stages[s].params.size(); ++i) {
      EXPECT_TRUE(bitwise_equal(ps.stages[s].params[i].value, copy.stages[s].params[i].value));
    }
  }
}

TEST(EmbeddingStats, IdenticalRowsAreCollapsed) {
  const EmbeddingStats s = embedding_stats(Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2}));
  for (double v : s.per_dim) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_GT(embedding_stats(Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2.001})).mean, 0.0);
}

TEST(EmbeddingStats, AlternatingAxis) {
  const EmbeddingStats s = embedding_stats(Tensor::matrix(4, 3, {1, 0, 0, -1, 0, 0, 1, 0, 0, -1, 0, 0}));
  EXPECT_EQ(s.per_dim, (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(EmbeddingStats, UniformSphere) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(256 * 32);
  for (double& x : v) x = n(rng);
  EXPECT_NEAR(embedding_stats(Tensor::matrix(256, 32, v)).mean, 1.0 / std::sqrt(32.0), 0.01);
  EXPECT_THROW(embedding_stats(Tensor::matrix(1, 32, std::vector<double>(32, 1.0))), ContractError);
}

}  // namespace
}  // namespace emalab
