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
// Self-supervised objectives. Target-side inputs (z*m, z_t) must already be
// detached; the losses refuse anything that would let a gradient into the
// target path.

#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "emalab/ops.hpp"
#include "emalab/tensor.hpp"

namespace emalab {

enum class ObjectiveKind { neg_cosine, infonce, soft_ce };

inline std::string_view objective_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::neg_cosine: return "negcos";
    case ObjectiveKind::infonce: return "infonce";
    case ObjectiveKind::soft_ce: return "softce";
  }
  return "?";
}

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::neg_cosine;
  double tau = 0.2;    // InfoNCE
  double tau_s = 0.1;  // SoftCE student
  double tau_t = 0.04; // SoftCE teacher
  std::size_t queue_size = 0;
  double center_momentum = 0.9;
  bool centering = true;

  bool operator==(const ObjectiveSpec&) const = default;
};

inline void validate(const ObjectiveSpec& spec, bool has_predictor) {
  if (!(spec.tau > 0.0) || !(spec.tau_s > 0.0) || !(spec.tau_t > 0.0)) {
    throw ConfigError("temperatures must be strictly positive");
  }
  if (!(spec.center_momentum >= 0.0 && spec.center_momentum <= 1.0)) {
    throw ConfigError("center_momentum out of range [0,1]");
  }
  if (spec.kind == ObjectiveKind::neg_cosine && !has_predictor) {
    throw ConfigError("negcos objective needs a predictor stage");
  }
  if (spec.kind != ObjectiveKind::neg_cosine && has_predictor) {
    throw ConfigError(std::string(objective_name(spec.kind)) + " objective does not use a predictor stage");
  }
}

namespace detail {

inline void require_detached(const Tensor& t, const char* op, const char* what) {
  if (t.requires_grad()) throw ContractError(std::string(op) + ": " + what + " must be gradient-detached");
}

inline void require_rows(const Tensor& t, const char* op) {
  if (t.rank() != 2 || t.rows() == 0) throw ContractError(std::string(op) + ": batch must be non-empty");
}

}  // namespace detail

// Fixed-capacity FIFO of unit-norm feature rows, oldest first.
class FeatureQueue {
 public:
  explicit FeatureQueue(std::size_t capacity = 0) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const std::vector<double>& row(std::size_t i) const { return rows_.at(i); }

  void push_row(std::vector<double> unit_row) {
    if (capacity_ == 0) return;
    if (!rows_.empty() && rows_.front().size() != unit_row.size()) {
      throw DimensionError("feature queue: row width " + std::to_string(unit_row.size()) + " differs from " +
                           std::to_string(rows_.front().size()));
    }
    rows_.push_back(std::move(unit_row));
    while (rows_.size() > capacity_) rows_.pop_front();
  }

  Tensor as_tensor() const {
    if (rows_.empty()) throw ContractError("feature queue is empty");
    std::vector<double> flat;
    flat.reserve(rows_.size() * rows_.front().size());
    for (const auto& r : rows_) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::matrix(rows_.size(), rows_.front().size(), std::move(flat));
  }

 private:
  std::size_t capacity_;
  std::deque<std::vector<double>> rows_;
};

// Normalizes z rowwise and appends it to the queue.
inline void queue_push(FeatureQueue& queue, const Tensor& z) {
  detail::require_detached(z, "queue_push", "z");
  if (queue.capacity() == 0) return;
  Tape scratch;
  const Tensor zn = ops::l2_normalize(scratch, z);
  for (std::size_t r = 0; r < zn.rows(); ++r) {
    auto row = zn.row(r);
    queue.push_row({row.begin(), row.end()});
  }
}

struct CenterState {
  std::vector<double> center;
  double momentum = 0.9;
};

// c' = m*c + (1-m)*mean over rows of z_t. An empty center takes the width
// of z_t, starting from zero.
inline void center_update(CenterState& state, const Tensor& z_t) {
  if (z_t.rank() != 2) throw DimensionError("center_update: expected a batch matrix, got " + shape_str(z_t.shape()));
  if (state.center.empty()) state.center.assign(z_t.cols(), 0.0);
  if (state.center.size() != z_t.cols()) throw DimensionError("center_update: width mismatch");
  std::vector<double> mean(z_t.cols(), 0.0);
  for (std::size_t r = 0; r < z_t.rows(); ++r) {
    for (std::size_t c = 0; c < z_t.cols(); ++c) mean[c] += z_t.at(r, c);
  }
  const double m = state.momentum;
  for (std::size_t c = 0; c < mean.size(); ++c) {
    mean[c] /= static_cast<double>(z_t.rows());
    state.center[c] = m * state.center[c] + (1.0 - m) * mean[c];
  }
}

// -1/2 * (mean_i cos(p1_i, z2m_i) + mean_i cos(p2_i, z1m_i)).
inline Tensor loss_negcos(Tape& tape, const Tensor& p1, const Tensor& p2, const Tensor& z1m, const Tensor& z2m) {
  detail::require_rows(p1, "loss_negcos");
  detail::require_detached(z1m, "loss_negcos", "z1m");
  detail::require_detached(z2m, "loss_negcos", "z2m");
  const Tensor a = ops::mean(tape, ops::neg_cosine_rowwise(tape, p1, z2m));
  const Tensor b = ops::mean(tape, ops::neg_cosine_rowwise(tape, p2, z1m));
  return ops::scale(tape, ops::add(tape, a, b), 0.5);
}

// Cross-entropy of the positive pair (z1_i, z2m_i) against the other in-batch
// targets and every queued row, all at temperature tau. One direction only;
// the trainer averages both view orders.
inline Tensor loss_infonce(Tape& tape, const Tensor& z1, const Tensor& z2m, const FeatureQueue& queue, double tau) {
  detail::require_rows(z1, "loss_infonce");
  detail::require_detached(z2m, "loss_infonce", "z2m");
  if (!(tau > 0.0)) throw ConfigError("loss_infonce: temperature must be positive");
  if (z1.shape() != z2m.shape()) {
    throw DimensionError("loss_infonce: " + shape_str(z1.shape()) + " vs " + shape_str(z2m.shape()));
  }
  const Tensor anchors = ops::l2_normalize(tape, z1);
  Tensor keys = ops::l2_normalize(tape, z2m);
  if (!queue.empty()) keys = ops::concat_rows(tape, keys, queue.as_tensor());
  const Tensor logits = ops::scale(tape, ops::matmul(tape, anchors, keys, /*transpose_b=*/true), 1.0 / tau);

  const std::size_t batch = z1.rows(), k = keys.rows();
  std::vector<double> onehot(batch * k, 0.0);
  for (std::size_t i = 0; i < batch; ++i) onehot[i * k + i] = 1.0;
  return ops::soft_cross_entropy(tape, logits, Tensor::matrix(batch, k, std::move(onehot)));
}

// Teacher distribution softmax((z_t - c)/tau_t) against student
// log softmax(z_s/tau_s). A null center disables centering.
inline Tensor loss_softce(Tape& tape, const Tensor& z_s, const Tensor& z_t, double tau_s, double tau_t,
                          const CenterState* center) {
  if (!(tau_s > 0.0) || !(tau_t > 0.0)) throw ConfigError("loss_softce: temperatures must be positive");
  detail::require_rows(z_s, "loss_softce");
  detail::require_detached(z_t, "loss_softce", "z_t");
  if (z_s.shape() != z_t.shape()) {
    throw DimensionError("loss_softce: " + shape_str(z_s.shape()) + " vs " + shape_str(z_t.shape()));
  }
  std::vector<double> shifted(z_t.values());
  if (center && !center->center.empty()) {
    if (center->center.size() != z_t.cols()) throw DimensionError("loss_softce: center width mismatch");
    for (std::size_t r = 0; r < z_t.rows(); ++r) {
      for (std::size_t c = 0; c < z_t.cols(); ++c) shifted[r * z_t.cols() + c] -= center->center[c];
    }
  }
  for (double& v : shifted) v /= tau_t;
  const Tensor teacher = ops::softmax(tape, Tensor(z_t.shape(), std::move(shifted)));
  const Tensor logits = ops::scale(tape, z_s, 1.0 / tau_s);
  return ops::soft_cross_entropy(tape, logits, teacher);
}

}  // namespace emalab
