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
// Finite-difference checks for every primitive and every composed loss.
// Each case draws its input and constants uniformly from [-2, 2] and reduces
// the output to a scalar through a random weighting, so every output
// coordinate contributes to the checked gradient.

#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "emalab/gradcheck.hpp"
#include "emalab/objectives.hpp"
#include "emalab/ops.hpp"

namespace emalab {

struct GradCheckCase {
  std::string name;
  // Builds (chain, input) for one random instance.
  std::function<std::pair<Chain, Tensor>(std::uint64_t seed)> make;
};

namespace detail {

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// sum(y * w) for a constant weighting w of y's shape.
inline Tensor weighted_sum(Tape& tape, const Tensor& y, const Tensor& w) {
  return ops::sum(tape, ops::mul(tape, y, w));
}

// A probability matrix with rows summing to 1.
inline Tensor random_distribution(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Tape scratch;
  return ops::softmax(scratch, uniform_tensor({rows, cols}, rng));
}

}  // namespace detail

inline std::vector<GradCheckCase> primitive_grad_checks() {
  using detail::uniform_tensor;
  using detail::weighted_sum;
  std::vector<GradCheckCase> cases;

  cases.push_back({"matmul", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor b = uniform_tensor({2, 4}, rng), w = uniform_tensor({3, 4}, rng);
                     Chain c = [=](Tape& t, const Tensor& a) { return weighted_sum(t, ops::matmul(t, a, b), w); };
                     return std::pair{c, uniform_tensor({3, 2}, rng)};
                   }});
  cases.push_back({"matmul_transposed_rhs", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor a = uniform_tensor({3, 2}, rng), w = uniform_tensor({3, 4}, rng);
                     Chain c = [=](Tape& t, const Tensor& b) { return weighted_sum(t, ops::matmul(t, a, b, true), w); };
                     return std::pair{c, uniform_tensor({4, 2}, rng)};
                   }});
  cases.push_back({"add_bias", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = uniform_tensor({3, 4}, rng), w = uniform_tensor({3, 4}, rng);
                     Chain c = [=](Tape& t, const Tensor& b) { return weighted_sum(t, ops::add_bias(t, x, b), w); };
                     return std::pair{c, uniform_tensor({4}, rng)};
                   }});
  cases.push_back({"add", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor y = uniform_tensor({2, 3}, rng), w = uniform_tensor({2, 3}, rng);
                     Chain c = [=](Tape& t, const Tensor& x) { return weighted_sum(t, ops::add(t, x, y), w); };
                     return std::pair{c, uniform_tensor({2, 3}, rng)};
                   }});
  cases.push_back({"mul", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor w = uniform_tensor({2, 3}, rng);
                     Chain c = [=](Tape& t, const Tensor& x) { return weighted_sum(t, ops::mul(t, x, x), w); };
                     return std::pair{c, uniform_tensor({2, 3}, rng)};
                   }});
  cases.push_back({"relu", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor w = uniform_tensor({3, 4}, rng);
                     Chain c = [=](Tape& t, const Tensor& x) { return weighted_sum(t, ops::relu(t, x), w); };
                     return std::pair{c, uniform_tensor({3, 4}, rng)};
                   }});
  cases.push_back({"batch_norm_train", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor g = uniform_tensor({3}, rng), b = uniform_tensor({3}, rng), w = uniform_tensor({4, 3}, rng);
                     Tensor rm = Tensor::zeros({3}), rv = Tensor::filled({3}, 1.0);
                     Chain c = [=](Tape& t, const Tensor& x) {
                       return weighted_sum(t, ops::batch_norm(t, x, g, b, rm, rv, true), w);
                     };
                     return std::pair{c, uniform_tensor({4, 3}, rng)};
                   }});
  cases.push_back({"batch_norm_gamma", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = uniform_tensor({4, 3}, rng), b = uniform_tensor({3}, rng), w = uniform_tensor({4, 3}, rng);
                     Tensor rm = Tensor::zeros({3}), rv = Tensor::filled({3}, 1.0);
                     Chain c = [=](Tape& t, const Tensor& g) {
                       return weighted_sum(t, ops::batch_norm(t, x, g, b, rm, rv, true), w);
                     };
                     return std::pair{c, uniform_tensor({3}, rng)};
                   }});
  cases.push_back({"batch_norm_eval", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor g = uniform_tensor({3}, rng), b = uniform_tensor({3}, rng), w = uniform_tensor({4, 3}, rng);
                     Tensor rm = uniform_tensor({3}, rng), rv = uniform_tensor({3}, rng, 0.5, 2.0);
                     Chain c = [=](Tape& t, const Tensor& x) {
                       return weighted_sum(t, ops::batch_norm(t, x, g, b, rm, rv, false), w);
                     };
                     return std::pair{c, uniform_tensor({4, 3}, rng)};
                   }});
  cases.push_back({"matmul_batch_norm", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor W = uniform_tensor({3, 3}, rng), g = uniform_tensor({3}, rng), b = uniform_tensor({3}, rng);
                     Tensor w = uniform_tensor({4, 3}, rng);
                     Tensor rm = Tensor::zeros({3}), rv = Tensor::filled({3}, 1.0);
                     Chain c = [=](Tape& t, const Tensor& x) {
                       return weighted_sum(t, ops::batch_norm(t, ops::matmul(t, x, W), g, b, rm, rv, true), w);
                     };
                     return std::pair{c, uniform_tensor({4, 3}, rng)};
                   }});
  cases.push_back({"l2_normalize", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor w = uniform_tensor({3, 4}, rng);
                     Chain c = [=](Tape& t, const Tensor& x) { return weighted_sum(t, ops::l2_normalize(t, x), w); };
                     return std::pair{c, uniform_tensor({3, 4}, rng)};
                   }});
  cases.push_back({"softmax", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor w = uniform_tensor({3, 4}, rng);
                     Chain c = [=](Tape& t, const Tensor& x) { return weighted_sum(t, ops::softmax(t, x), w); };
                     return std::pair{c, uniform_tensor({3, 4}, rng)};
                   }});
  cases.push_back({"concat_rows", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor bottom = uniform_tensor({1, 3}, rng), w = uniform_tensor({3, 3}, rng);
                     Chain c = [=](Tape& t, const Tensor& x) { return weighted_sum(t, ops::concat_rows(t, x, bottom), w); };
                     return std::pair{c, uniform_tensor({2, 3}, rng)};
                   }});
  cases.push_back({"scale", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor w = uniform_tensor({2, 3}, rng);
                     const double f = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
                     Chain c = [=](Tape& t, const Tensor& x) { return weighted_sum(t, ops::scale(t, x, f), w); };
                     return std::pair{c, uniform_tensor({2, 3}, rng)};
                   }});
  cases.push_back({"mean", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Chain c = [](Tape& t, const Tensor& x) { return ops::mean(t, ops::mul(t, x, x)); };
                     return std::pair{c, uniform_tensor({2, 3}, rng)};
                   }});
  cases.push_back({"neg_cosine_rowwise", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor z = uniform_tensor({3, 4}, rng), w = uniform_tensor({3}, rng);
                     Chain c = [=](Tape& t, const Tensor& p) { return weighted_sum(t, ops::neg_cosine_rowwise(t, p, z), w); };
                     return std::pair{c, uniform_tensor({3, 4}, rng)};
                   }});
  cases.push_back({"neg_cosine_rowwise_rhs", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor z = uniform_tensor({3, 4}, rng), w = uniform_tensor({3}, rng), p = uniform_tensor({3, 4}, rng);
                     Chain c = [=](Tape& t, const Tensor& zi) { return weighted_sum(t, ops::neg_cosine_rowwise(t, p, zi), w); };
                     return std::pair{c, z};
                   }});
  cases.push_back({"soft_cross_entropy", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor q = detail::random_distribution(3, 4, rng);
                     Chain c = [=](Tape& t, const Tensor& l) { return ops::soft_cross_entropy(t, l, q); };
                     return std::pair{c, uniform_tensor({3, 4}, rng)};
                   }});
  cases.push_back({"soft_cross_entropy_targets", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor l = uniform_tensor({3, 4}, rng);
                     Chain c = [=](Tape& t, const Tensor& q) { return ops::soft_cross_entropy(t, l, q); };
                     return std::pair{c, uniform_tensor({3, 4}, rng)};
                   }});
  return cases;
}

inline std::vector<GradCheckCase> loss_grad_checks() {
  using detail::uniform_tensor;
  std::vector<GradCheckCase> cases;
  cases.push_back({"loss_negcos", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor p2 = uniform_tensor({4, 5}, rng), z1m = uniform_tensor({4, 5}, rng);
                     Tensor z2m = uniform_tensor({4, 5}, rng);
                     Chain c = [=](Tape& t, const Tensor& p1) { return loss_negcos(t, p1, p2, z1m, z2m); };
                     return std::pair{c, uniform_tensor({4, 5}, rng)};
                   }});
  cases.push_back({"loss_infonce", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor z2m = uniform_tensor({4, 5}, rng);
                     FeatureQueue queue(3);
                     queue_push(queue, uniform_tensor({3, 5}, rng));
                     Chain c = [=](Tape& t, const Tensor& z1) { return loss_infonce(t, z1, z2m, queue, 0.2); };
                     return std::pair{c, uniform_tensor({4, 5}, rng)};
                   }});
  cases.push_back({"loss_softce", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor zt = uniform_tensor({4, 5}, rng);
                     CenterState center;
                     center.center = uniform_tensor({5}, rng).values();
                     Chain c = [=](Tape& t, const Tensor& zs) { return loss_softce(t, zs, zt, 0.1, 0.04, &center); };
                     return std::pair{c, uniform_tensor({4, 5}, rng)};
                   }});
  return cases;
}

struct GradCheckSummary {
  std::string name;
  std::size_t instances = 0;
  double worst = 0.0;
  std::uint64_t worst_seed = 0;
};

inline GradCheckSummary run_grad_check_case(const GradCheckCase& gc, std::size_t instances, std::uint64_t base_seed = 0,
                                            double h = 1e-5) {
  GradCheckSummary s{gc.name, instances, 0.0, base_seed};
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t seed = base_seed + i;
    auto [chain, input] = gc.make(seed);
    const double err = grad_check(chain, input, h);
    if (err > s.worst) {
      s.worst = err;
      s.worst_seed = seed;
    }
  }
  return s;
}

}  // namespace emalab
