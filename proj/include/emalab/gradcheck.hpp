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

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "emalab/tensor.hpp"

namespace emalab {

// A scalar-valued computation of one tensor input, rebuilt on a fresh tape
// for every evaluation.
using Chain = std::function<Tensor(Tape&, const Tensor&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  std::vector<double> analytic_all;
  std::vector<double> numeric_all;
};

// Compares the tape gradient of `chain` at `input` with central differences
// of step h. Relative error per coordinate is
// |analytic - numeric| / max(|analytic|, 1e-8).
inline GradCheckResult grad_check_detailed(const Chain& chain, const Tensor& input, double h = 1e-5) {
  if (!(h > 0.0)) throw ContractError("grad_check: step size must be positive");

  Tape tape;
  const Tensor x = tape.leaf(input);
  const Tensor out = chain(tape, x);
  if (!out.is_scalar()) throw ContractError("grad_check: chain output must be scalar");
  const GradMap grads = tape.backward(out);
  const Tensor* g = grads.find(x);

  auto eval_at = [&](const std::vector<double>& values) {
    Tape scratch;
    return chain(scratch, Tensor(input.shape(), values)).item();
  };

  GradCheckResult result;
  std::vector<double> probe(input.values());
  std::vector<double> analytic_all(probe.size()), numeric_all(probe.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = eval_at(probe);
    probe[i] = saved - h;
    const double down = eval_at(probe);
    probe[i] = saved;

    const double numeric = (up - down) / (2.0 * h);
    const double analytic = g ? (*g)[i] : 0.0;
    analytic_all[i] = analytic;
    numeric_all[i] = numeric;
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-8);
    if (rel > result.max_rel_error || i == 0) {
      result.max_rel_error = rel;
      result.worst_index = i;
      result.analytic = analytic;
      result.numeric = numeric;
    }
  }
  result.analytic_all = std::move(analytic_all);
  result.numeric_all = std::move(numeric_all);
  return result;
}

inline double grad_check(const Chain& chain, const Tensor& input, double h = 1e-5) {
  return grad_check_detailed(chain, input, h).max_rel_error;
}

}  // namespace emalab
