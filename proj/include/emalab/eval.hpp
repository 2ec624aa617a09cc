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
// Representation probes on frozen features: cosine KNN-1, a softmax linear
// classifier, and per-dimension spread of normalized embeddings (collapse).

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "emalab/data.hpp"
#include "emalab/encoder.hpp"
#include "emalab/ops.hpp"

namespace emalab {

inline double knn_eval(const Tensor& train_feats, std::span<const int> train_labels, const Tensor& test_feats,
                       std::span<const int> test_labels) {
  if (train_labels.empty()) throw ContractError("knn_eval: empty train set");
  if (train_feats.rows() != train_labels.size() || test_feats.rows() != test_labels.size()) {
    throw DimensionError("knn_eval: feature rows and labels disagree");
  }
  if (train_feats.cols() != test_feats.cols()) throw DimensionError("knn_eval: feature widths differ");
  if (test_labels.empty()) return 0.0;

  Tape scratch;
  const Tensor tr = ops::l2_normalize(scratch, train_feats.detached());
  const Tensor te = ops::l2_normalize(scratch, test_feats.detached());
  const Tensor sims = ops::matmul(scratch, te, tr, /*transpose_b=*/true);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < te.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < tr.rows(); ++j) {
      if (sims.at(i, j) > sims.at(i, best)) best = j;  // ties keep the lowest index
    }
    if (train_labels[best] == test_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_labels.size());
}

struct ProbeConfig {
  double lr = 0.1;
  std::size_t epochs = 200;
  std::size_t batch = 32;
  std::uint64_t seed = 0;

  bool operator==(const ProbeConfig&) const = default;
};

// Softmax-regression probe trained by minibatch SGD on standardized train
// features (statistics from the train split), scored on the test split.
inline double linear_probe(const Tensor& train_feats, std::span<const int> train_labels, const Tensor& test_feats,
                           std::span<const int> test_labels, const ProbeConfig& cfg = {}) {
  if (train_feats.requires_grad() || test_feats.requires_grad()) {
    throw ContractError("linear_probe: features must be gradient-detached");
  }
  if (train_labels.empty()) throw ContractError("linear_probe: empty train set");
  if (train_feats.rows() != train_labels.size() || test_feats.rows() != test_labels.size()) {
    throw DimensionError("linear_probe: feature rows and labels disagree");
  }
  if (test_labels.empty()) return 0.0;
  const std::size_t d = train_feats.cols();
  const int classes = std::max(*std::max_element(train_labels.begin(), train_labels.end()),
                               *std::max_element(test_labels.begin(), test_labels.end())) + 1;
  const auto K = static_cast<std::size_t>(classes);

  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  const std::size_t n = train_feats.rows();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) mu[c] += train_feats.at(r, c);
  }
  for (double& m : mu) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) sd[c] += (train_feats.at(r, c) - mu[c]) * (train_feats.at(r, c) - mu[c]);
  }
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(n)) + 1e-8;
  auto standardize = [&](const Tensor& f) {
    std::vector<double> out(f.values());
    for (std::size_t r = 0; r < f.rows(); ++r) {
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] = (out[r * d + c] - mu[c]) / sd[c];
    }
    return Tensor(f.shape(), std::move(out));
  };
  const Tensor xtr = standardize(train_feats);
  const Tensor xte = standardize(test_feats);

  Tensor W = Tensor::zeros({K, d});
  Tensor b = Tensor::zeros({K});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.seed);
  const std::size_t bs = std::max<std::size_t>(1, std::min(cfg.batch, n));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t m = std::min(bs, n - start);
      std::vector<double> xb, yb(m * K, 0.0);
      xb.reserve(m * d);
      for (std::size_t i = 0; i < m; ++i) {
        auto r = xtr.row(order[start + i]);
        xb.insert(xb.end(), r.begin(), r.end());
        yb[i * K + static_cast<std::size_t>(train_labels[order[start + i]])] = 1.0;
      }
      Tape tape;
      const Tensor w = tape.leaf(W);
      const Tensor bias = tape.leaf(b);
      const Tensor logits =
          ops::add_bias(tape, ops::matmul(tape, Tensor::matrix(m, d, std::move(xb)), w, true), bias);
      const Tensor loss = ops::soft_cross_entropy(tape, logits, Tensor::matrix(m, K, std::move(yb)));
      const GradMap g = tape.backward(loss);
      std::vector<double> wv(W.values()), bv(b.values());
      for (std::size_t i = 0; i < wv.size(); ++i) wv[i] -= cfg.lr * g.at(w)[i];
      for (std::size_t i = 0; i < bv.size(); ++i) bv[i] -= cfg.lr * g.at(bias)[i];
      W = Tensor(W.shape(), std::move(wv));
      b = Tensor(b.shape(), std::move(bv));
    }
  }

  Tape scratch;
  const Tensor scores = ops::add_bias(scratch, ops::matmul(scratch, xte, W, true), b);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (scores.at(i, k) > scores.at(i, best)) best = k;
    }
    if (static_cast<int>(best) == test_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_labels.size());
}

struct EmbeddingStats {
  std::vector<double> per_dim;
  double mean = 0.0;
};

// Population standard deviation of each coordinate of the l2-normalized rows.
inline EmbeddingStats embedding_stats(const Tensor& z) {
  if (z.rank() != 2 || z.rows() < 2) throw ContractError("embedding_stats: need a batch of at least 2 rows");
  Tape scratch;
  const Tensor zn = ops::l2_normalize(scratch, z.detached());
  const std::size_t n = zn.rows(), d = zn.cols();
  EmbeddingStats out;
  out.per_dim.assign(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < n; ++r) mu += zn.at(r, c);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (zn.at(r, c) - mu) * (zn.at(r, c) - mu);
    out.per_dim[c] = std::sqrt(var / static_cast<double>(n));
  }
  out.mean = std::accumulate(out.per_dim.begin(), out.per_dim.end(), 0.0) / static_cast<double>(d);
  return out;
}

struct Features {
  Tensor backbone;    // f, output of block4
  Tensor projection;  // z, output of the projector
};

// Eval-mode forward of the online encoder; no gradients are recorded.
inline Features extract_features(const ParamSet& params, const Tensor& x) {
  Tape scratch;
  const StageActivations acts =
      forward_stages(scratch, params, x.detached(), {Mode::eval, /*include_predictor=*/false});
  return {acts.at(Stage::block4).detached(), acts.at(Stage::projector).detached()};
}

struct ProbeReport {
  std::size_t step = 0;
  double knn1_acc = 0.0;
  double linear_acc = 0.0;
  std::vector<double> embed_std;
  double embed_std_mean = 0.0;
};

// KNN-1 and linear probe on backbone features, collapse statistic on the
// test-split projections.
inline ProbeReport probe(const ParamSet& params, const Dataset& train, const Dataset& test, std::size_t step,
                         const ProbeConfig& cfg = {}) {
  const Features ftr = extract_features(params, train.X);
  const Features fte = extract_features(params, test.X);
  ProbeReport r;
  r.step = step;
  r.knn1_acc = knn_eval(ftr.backbone, train.y, fte.backbone, test.y);
  r.linear_acc = linear_probe(ftr.backbone, train.y, fte.backbone, test.y, cfg);
  const EmbeddingStats st = embedding_stats(fte.projection);
  r.embed_std = st.per_dim;
  r.embed_std_mean = st.mean;
  return r;
}

}  // namespace emalab
