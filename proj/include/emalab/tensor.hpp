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
// Dense 64-bit tensors and a step-scoped reverse-mode tape.
//
// A Tensor is an immutable value (shape + shared row-major buffer). When it
// was produced on a Tape from inputs that require gradients it also carries
// the id of the recording node. Tensors without a node are constants as far
// as differentiation is concerned, which is exactly how stop-gradient works:
// detached() drops the node, so nothing upstream can be reached from a loss.

#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "emalab/error.hpp"

namespace emalab {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class Tape;

class Tensor {
 public:
  Tensor() : data_(std::make_shared<const std::vector<double>>(std::vector<double>{0.0})) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
    if (shape_numel(shape_) != data.size()) {
      throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
  }

  static Tensor zeros(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor filled(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor scalar(double value) { return Tensor({}, {value}); }
  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_->size(); }
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }
  bool is_scalar() const { return numel() == 1 && shape_.size() <= 1; }

  std::span<const double> data() const { return *data_; }
  const std::vector<double>& values() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  double item() const {
    if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
  }
  std::span<const double> row(std::size_t r) const {
    return data().subspan(r * cols(), cols());
  }

  bool requires_grad() const { return requires_grad_; }
  std::optional<NodeId> node() const {
    return node_ == kNoNode ? std::nullopt : std::optional<NodeId>(node_);
  }
  std::uint64_t tape_generation() const { return tape_gen_; }

  // Same values, no tape node, requires_grad=false.
  Tensor detached() const {
    Tensor out;
    out.shape_ = shape_;
    out.data_ = data_;
    return out;
  }

  bool shares_storage_with(const Tensor& other) const { return data_ == other.data_; }

  bool all_finite() const {
    for (double v : *data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  NodeId node_ = kNoNode;
  std::uint64_t tape_gen_ = 0;
  bool requires_grad_ = false;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(x[i]) != std::bit_cast<std::uint64_t>(y[i])) return false;
  }
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

enum class Primitive {
  leaf,
  matmul,
  add_bias,
  add,
  mul,
  relu,
  batch_norm,
  l2_normalize,
  softmax,
  concat_rows,
  scale,
  detach_mark,
  sum,
  mean,
  neg_cosine_rowwise,
  soft_cross_entropy,
};

inline std::string_view primitive_name(Primitive p) {
  switch (p) {
    case Primitive::leaf: return "leaf";
    case Primitive::matmul: return "matmul";
    case Primitive::add_bias: return "add_bias";
    case Primitive::add: return "add";
    case Primitive::mul: return "mul";
    case Primitive::relu: return "relu";
    case Primitive::batch_norm: return "batch_norm";
    case Primitive::l2_normalize: return "l2_normalize";
    case Primitive::softmax: return "softmax";
    case Primitive::concat_rows: return "concat_rows";
    case Primitive::scale: return "scale";
    case Primitive::detach_mark: return "detach_mark";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
    case Primitive::neg_cosine_rowwise: return "neg_cosine_rowwise";
    case Primitive::soft_cross_entropy: return "soft_cross_entropy";
  }
  return "unknown";
}

// Accumulates the node's input gradients given the gradient of its output.
// grad_in[k] is null when input k does not require a gradient; otherwise it
// points at a zero-initialised buffer.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

struct Node {
  Primitive kind = Primitive::leaf;
  std::vector<NodeId> inputs;  // kNoNode for constant inputs
  Shape shape;
  BackwardFn backward;
};

class GradMap {
 public:
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  bool contains(const Tensor& t) const { return t.node() && contains(*t.node()); }

  const Tensor& at(NodeId id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) throw ContractError("no gradient recorded for node " + std::to_string(id));
    return it->second;
  }
  const Tensor& at(const Tensor& t) const {
    if (!t.node()) throw ContractError("tensor has no tape node, so it cannot have a gradient");
    return at(*t.node());
  }
  const Tensor* find(const Tensor& t) const {
    if (!t.node()) return nullptr;
    auto it = grads_.find(*t.node());
    return it == grads_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  friend class Tape;
  std::unordered_map<NodeId, Tensor> grads_;
};

// Ordered record of one step's differentiable computation. Nodes are appended
// as operations execute, so inputs always precede their consumers. clear()
// starts a new generation; tensors from an older generation are rejected.
class Tape {
 public:
  Tape() : generation_(next_generation()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a value as a leaf. With requires_grad=false the value is
  // returned as a plain constant and nothing is recorded.
  Tensor leaf(const Tensor& value, bool requires_grad = true) {
    Tensor out = value.detached();
    if (!requires_grad) return out;
    Node n;
    n.kind = Primitive::leaf;
    n.shape = value.shape();
    return attach(std::move(out), std::move(n));
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::uint64_t generation() const { return generation_; }

  void clear() {
    nodes_.clear();
    generation_ = next_generation();
  }

  bool owns(const Tensor& t) const { return t.node() && t.tape_generation() == generation_; }

  // Appends a node for `out` when any input requires a gradient; otherwise
  // returns `out` untouched as a constant.
  Tensor record(Primitive kind, std::initializer_list<const Tensor*> inputs, Tensor out, BackwardFn backward) {
    Node n;
    n.kind = kind;
    n.shape = out.shape();
    bool any = false;
    for (const Tensor* in : inputs) {
      if (in->requires_grad()) {
        if (in->tape_generation() != generation_) {
          throw ContractError(std::string(primitive_name(kind)) +
                              ": input belongs to a different or cleared tape");
        }
        n.inputs.push_back(*in->node());
        any = true;
      } else {
        n.inputs.push_back(kNoNode);
      }
    }
    if (!any) return out;
    n.backward = std::move(backward);
    return attach(std::move(out), std::move(n));
  }

  // Reverse-mode sweep from a scalar loss. Every node reachable from the
  // loss gets an entry, leaves and intermediates alike.
  GradMap backward(const Tensor& loss) const {
    if (!loss.is_scalar()) {
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    GradMap out;
    if (!loss.requires_grad()) return out;
    if (!owns(loss)) throw ContractError("backward: loss does not belong to this tape");

    std::vector<std::vector<double>> grads(nodes_.size());
    grads[*loss.node()] = {1.0};
    // Per-node buffers, summed afterwards: a value used twice gets a + b
    // regardless of which use was recorded first.
    std::vector<std::vector<double>> local;
    std::vector<std::vector<double>*> slots;
    for (NodeId id = *loss.node() + 1; id-- > 0;) {
      if (grads[id].empty()) continue;
      const Node& n = nodes_[id];
      if (!n.backward) continue;
      local.assign(n.inputs.size(), {});
      slots.assign(n.inputs.size(), nullptr);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (n.inputs[k] == kNoNode) continue;
        local[k].assign(shape_numel(nodes_[n.inputs[k]].shape), 0.0);
        slots[k] = &local[k];
      }
      n.backward(grads[id], slots);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (!slots[k]) continue;
        std::vector<double>& acc = grads[n.inputs[k]];
        if (acc.empty()) {
          acc = std::move(local[k]);
        } else {
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += local[k][i];
        }
      }
    }
    for (NodeId id = 0; id < grads.size(); ++id) {
      if (!grads[id].empty()) out.grads_.emplace(id, Tensor(nodes_[id].shape, std::move(grads[id])));
    }
    return out;
  }

 private:
  static std::uint64_t next_generation() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  Tensor attach(Tensor out, Node n) {
    out.node_ = nodes_.size();
    out.tape_gen_ = generation_;
    out.requires_grad_ = true;
    nodes_.push_back(std::move(n));
    return out;
  }

  std::vector<Node> nodes_;
  std::uint64_t generation_;
};

}  // namespace emalab
