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
// Differentiable primitives. Each function computes its forward value,
// validates shapes and finiteness of its inputs, and records a backward
// closure on the tape when any input requires a gradient. Matrices are
// row-major [rows, cols]; "rowwise" operations treat each row as a sample.

#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "emalab/tensor.hpp"

namespace emalab {

inline constexpr double kNormEps = 1e-12;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

namespace ops {
namespace detail {

inline void require_finite(Primitive p, std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (!t->all_finite()) {
      throw NumericError("non-finite input to " + std::string(primitive_name(p)));
    }
  }
}

inline void require_matrix(Primitive p, const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(primitive_name(p)) + ": " + what + " must be a matrix, got " +
                         shape_str(t.shape()));
  }
}

inline void require_same_shape(Primitive p, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(primitive_name(p)) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void require_feature_vector(Primitive p, const Tensor& v, std::size_t features, const char* what) {
  if (v.rank() != 1 || v.numel() != features) {
    throw DimensionError(std::string(primitive_name(p)) + ": " + what + " must have shape [" +
                         std::to_string(features) + "], got " + shape_str(v.shape()));
  }
}

inline void add_into(std::vector<double>* dst, std::span<const double> src) {
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

}  // namespace detail

// a[m,k] x b[k,n], or a[m,k] x b[n,k]^T when transpose_b is set.
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b = false) {
  constexpr auto kind = Primitive::matmul;
  detail::require_matrix(kind, a, "lhs");
  detail::require_matrix(kind, b, "rhs");
  const std::size_t m = a.rows(), k = a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         (transpose_b ? "^T" : ""));
  }
  detail::require_finite(kind, {&a, &b});

  auto A = a.data();
  auto B = b.data();
  std::vector<double> y(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (transpose_b) {
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] += av * B[j * k + p];
      } else {
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] += av * B[p * n + j];
      }
    }
  }
  return tape.record(kind, {&a, &b}, Tensor({m, n}, std::move(y)),
                     [a = a.detached(), b = b.detached(), m, k, n, transpose_b](
                         std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       auto A = a.data();
                       auto B = b.data();
                       if (auto* ga = gin[0]) {
                         // dA = G * B^T  (or G * B when b was transposed)
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < n; ++j) {
                             const double gv = g[i * n + j];
                             if (gv == 0.0) continue;
                             for (std::size_t p = 0; p < k; ++p) {
                               (*ga)[i * k + p] += gv * (transpose_b ? B[j * k + p] : B[p * n + j]);
                             }
                           }
                         }
                       }
                       if (auto* gb = gin[1]) {
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < n; ++j) {
                             const double gv = g[i * n + j];
                             if (gv == 0.0) continue;
                             for (std::size_t p = 0; p < k; ++p) {
                               if (transpose_b) {
                                 (*gb)[j * k + p] += gv * A[i * k + p];
                               } else {
                                 (*gb)[p * n + j] += gv * A[i * k + p];
                               }
                             }
                           }
                         }
                       }
                     });
}

// x[B,F] + bias[F] broadcast over rows.
inline Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  constexpr auto kind = Primitive::add_bias;
  detail::require_matrix(kind, x, "input");
  detail::require_feature_vector(kind, bias, x.cols(), "bias");
  detail::require_finite(kind, {&x, &bias});
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> y(x.values());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += bias[c];
  }
  return tape.record(kind, {&x, &bias}, Tensor(x.shape(), std::move(y)),
                     [rows, cols](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       if (gin[0]) detail::add_into(gin[0], g);
                       if (auto* gb = gin[1]) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g[r * cols + c];
                         }
                       }
                     });
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  constexpr auto kind = Primitive::add;
  detail::require_same_shape(kind, a, b);
  detail::require_finite(kind, {&a, &b});
  std::vector<double> y(a.values());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return tape.record(kind, {&a, &b}, Tensor(a.shape(), std::move(y)),
                     [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       if (gin[0]) detail::add_into(gin[0], g);
                       if (gin[1]) detail::add_into(gin[1], g);
                     });
}

// Elementwise (Hadamard) product.
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  constexpr auto kind = Primitive::mul;
  detail::require_same_shape(kind, a, b);
  detail::require_finite(kind, {&a, &b});
  std::vector<double> y(a.values());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b[i];
  return tape.record(kind, {&a, &b}, Tensor(a.shape(), std::move(y)),
                     [a = a.detached(), b = b.detached()](std::span<const double> g,
                                                          std::span<std::vector<double>* const> gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (gin[0]) (*gin[0])[i] += g[i] * b[i];
                         if (gin[1]) (*gin[1])[i] += g[i] * a[i];
                       }
                     });
}

inline Tensor relu(Tape& tape, const Tensor& x) {
  constexpr auto kind = Primitive::relu;
  detail::require_finite(kind, {&x});
  std::vector<double> y(x.values());
  for (double& v : y) v = v > 0.0 ? v : 0.0;
  return tape.record(kind, {&x}, Tensor(x.shape(), std::move(y)),
                     [x = x.detached()](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (x[i] > 0.0) (*gin[0])[i] += g[i];
                       }
                     });
}

inline Tensor scale(Tape& tape, const Tensor& x, double factor) {
  constexpr auto kind = Primitive::scale;
  detail::require_finite(kind, {&x});
  std::vector<double> y(x.values());
  for (double& v : y) v *= factor;
  return tape.record(kind, {&x}, Tensor(x.shape(), std::move(y)),
                     [factor](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += factor * g[i];
                     });
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  constexpr auto kind = Primitive::sum;
  detail::require_finite(kind, {&x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  return tape.record(kind, {&x}, Tensor::scalar(s),
                     [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       for (double& v : *gin[0]) v += g[0];
                     });
}

inline Tensor mean(Tape& tape, const Tensor& x) {
  constexpr auto kind = Primitive::mean;
  detail::require_finite(kind, {&x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.numel());
  return tape.record(kind, {&x}, Tensor::scalar(s / n),
                     [n](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       for (double& v : *gin[0]) v += g[0] / n;
                     });
}

// Stop-gradient: the result carries the same values but no tape node.
inline Tensor detach(const Tensor& x) { return x.detached(); }

// Stacks b's rows under a's rows.
inline Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b) {
  constexpr auto kind = Primitive::concat_rows;
  detail::require_matrix(kind, a, "top");
  detail::require_matrix(kind, b, "bottom");
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows: column counts differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  detail::require_finite(kind, {&a, &b});
  std::vector<double> y(a.values());
  y.insert(y.end(), b.values().begin(), b.values().end());
  const std::size_t split = a.numel();
  return tape.record(kind, {&a, &b}, Tensor({a.rows() + b.rows(), a.cols()}, std::move(y)),
                     [split](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       if (gin[0]) detail::add_into(gin[0], g.first(split));
                       if (gin[1]) detail::add_into(gin[1], g.subspan(split));
                     });
}

// Rowwise x / max(||x||_2, eps).
inline Tensor l2_normalize(Tape& tape, const Tensor& x, double eps = kNormEps) {
  constexpr auto kind = Primitive::l2_normalize;
  detail::require_matrix(kind, x, "input");
  detail::require_finite(kind, {&x});
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> y(x.numel());
  std::vector<double> denom(rows);
  std::vector<bool> clamped(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (double v : x.row(r)) ss += v * v;
    const double norm = std::sqrt(ss);
    clamped[r] = !(norm > eps);
    denom[r] = clamped[r] ? eps : norm;
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = x.at(r, c) / denom[r];
  }
  Tensor out({rows, cols}, std::move(y));
  return tape.record(
      kind, {&x}, out,
      [out = out.detached(), denom = std::move(denom), clamped = std::move(clamped), rows, cols](
          std::span<const double> g, std::span<std::vector<double>* const> gin) {
        auto& gx = *gin[0];
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t o = r * cols;
          if (clamped[r]) {
            for (std::size_t c = 0; c < cols; ++c) gx[o + c] += g[o + c] / denom[r];
            continue;
          }
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += out[o + c] * g[o + c];
          for (std::size_t c = 0; c < cols; ++c) gx[o + c] += (g[o + c] - out[o + c] * dot) / denom[r];
        }
      });
}

// Rowwise softmax with max-shift.
inline Tensor softmax(Tape& tape, const Tensor& x) {
  constexpr auto kind = Primitive::softmax;
  if (x.rank() != 1 && x.rank() != 2) {
    throw DimensionError("softmax: expected vector or matrix, got " + shape_str(x.shape()));
  }
  detail::require_finite(kind, {&x});
  const std::size_t rows = x.rank() == 1 ? 1 : x.rows();
  const std::size_t cols = x.rank() == 1 ? x.numel() : x.cols();
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * cols;
    double mx = x[o];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[o + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[o + c] = std::exp(x[o + c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[o + c] /= z;
  }
  Tensor out(x.shape(), std::move(y));
  return tape.record(kind, {&x}, out,
                     [out = out.detached(), rows, cols](std::span<const double> g,
                                                        std::span<std::vector<double>* const> gin) {
                       auto& gx = *gin[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t o = r * cols;
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += g[o + c] * out[o + c];
                         for (std::size_t c = 0; c < cols; ++c) gx[o + c] += out[o + c] * (g[o + c] - dot);
                       }
                     });
}

// Per-row -cos(p_i, z_i) with eps-clamped norms; result has shape [rows].
inline Tensor neg_cosine_rowwise(Tape& tape, const Tensor& p, const Tensor& z, double eps = kNormEps) {
  constexpr auto kind = Primitive::neg_cosine_rowwise;
  detail::require_matrix(kind, p, "prediction");
  detail::require_same_shape(kind, p, z);
  detail::require_finite(kind, {&p, &z});
  const std::size_t rows = p.rows(), cols = p.cols();
  std::vector<double> np(rows), nz(rows), cosv(rows), y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double pp = 0.0, zz = 0.0, pz = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      pp += p.at(r, c) * p.at(r, c);
      zz += z.at(r, c) * z.at(r, c);
      pz += p.at(r, c) * z.at(r, c);
    }
    np[r] = std::max(std::sqrt(pp), eps);
    nz[r] = std::max(std::sqrt(zz), eps);
    cosv[r] = pz / (np[r] * nz[r]);
    y[r] = -cosv[r];
  }
  return tape.record(
      kind, {&p, &z}, Tensor({rows}, std::move(y)),
      [p = p.detached(), z = z.detached(), np = std::move(np), nz = std::move(nz), cosv = std::move(cosv), rows, cols,
       eps](std::span<const double> g, std::span<std::vector<double>* const> gin) {
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t o = r * cols;
          const bool p_free = np[r] > eps;
          const bool z_free = nz[r] > eps;
          for (std::size_t c = 0; c < cols; ++c) {
            const double ph = p[o + c] / np[r];
            const double zh = z[o + c] / nz[r];
            // d cos / dp = (zh - cos * ph) / |p|; the cos*ph term vanishes when the norm is clamped.
            if (gin[0]) (*gin[0])[o + c] += -g[r] * (zh - (p_free ? cosv[r] * ph : 0.0)) / np[r];
            if (gin[1]) (*gin[1])[o + c] += -g[r] * (ph - (z_free ? cosv[r] * zh : 0.0)) / nz[r];
          }
        }
      });
}

// mean over rows of -sum_k targets[r,k] * log softmax(logits[r])_k.
inline Tensor soft_cross_entropy(Tape& tape, const Tensor& logits, const Tensor& targets) {
  constexpr auto kind = Primitive::soft_cross_entropy;
  detail::require_matrix(kind, logits, "logits");
  detail::require_same_shape(kind, logits, targets);
  detail::require_finite(kind, {&logits, &targets});
  const std::size_t rows = logits.rows(), cols = logits.cols();
  std::vector<double> logp(logits.numel());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * cols;
    double mx = logits[o];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, logits[o + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(logits[o + c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) {
      logp[o + c] = logits[o + c] - lse;
      total -= targets[o + c] * logp[o + c];
    }
  }
  const double n = static_cast<double>(rows);
  return tape.record(kind, {&logits, &targets}, Tensor::scalar(total / n),
                     [logp = std::move(logp), t = targets.detached(), rows, cols, n](
                         std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       const double s = g[0] / n;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t o = r * cols;
                         double mass = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) mass += t[o + c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           if (gin[0]) (*gin[0])[o + c] += s * (std::exp(logp[o + c]) * mass - t[o + c]);
                           if (gin[1]) (*gin[1])[o + c] += -s * logp[o + c];
                         }
                       }
                     });
}

// Batch mean and unbiased batch variance, as folded into running statistics.
struct BatchStats {
  Tensor mean;
  Tensor var;
};

// Normalizes x[B,F] per feature then applies gamma/beta. Training mode uses
// biased batch statistics and, if `stats` is given, reports the batch mean
// and unbiased variance for the running-statistics update. Eval mode uses the
// supplied running statistics.
inline Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         const Tensor& running_mean, const Tensor& running_var, bool training,
                         double eps = kBatchNormEps, BatchStats* stats = nullptr) {
  constexpr auto kind = Primitive::batch_norm;
  detail::require_matrix(kind, x, "input");
  const std::size_t B = x.rows(), F = x.cols();
  detail::require_feature_vector(kind, gamma, F, "gamma");
  detail::require_feature_vector(kind, beta, F, "beta");
  detail::require_feature_vector(kind, running_mean, F, "running_mean");
  detail::require_feature_vector(kind, running_var, F, "running_var");
  detail::require_finite(kind, {&x, &gamma, &beta, &running_mean, &running_var});

  std::vector<double> mu(F, 0.0), var(F, 0.0);
  if (training) {
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t c = 0; c < F; ++c) mu[c] += x.at(r, c);
    }
    for (double& m : mu) m /= static_cast<double>(B);
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t c = 0; c < F; ++c) {
        const double d = x.at(r, c) - mu[c];
        var[c] += d * d;
      }
    }
    for (double& v : var) v /= static_cast<double>(B);
    if (stats) {
      std::vector<double> unbiased(var);
      if (B > 1) {
        for (double& v : unbiased) v *= static_cast<double>(B) / static_cast<double>(B - 1);
      }
      stats->mean = Tensor::vector(mu);
      stats->var = Tensor::vector(std::move(unbiased));
    }
  } else {
    mu = running_mean.values();
    var = running_var.values();
  }

  std::vector<double> inv_std(F), xhat(x.numel()), y(x.numel());
  for (std::size_t c = 0; c < F; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t c = 0; c < F; ++c) {
      const std::size_t i = r * F + c;
      xhat[i] = (x[i] - mu[c]) * inv_std[c];
      y[i] = gamma[c] * xhat[i] + beta[c];
    }
  }

  return tape.record(
      kind, {&x, &gamma, &beta}, Tensor(x.shape(), std::move(y)),
      [xhat = std::move(xhat), inv_std = std::move(inv_std), gamma = gamma.detached(), B, F, training](
          std::span<const double> g, std::span<std::vector<double>* const> gin) {
        std::vector<double> sum_g(F, 0.0), sum_gx(F, 0.0);
        for (std::size_t r = 0; r < B; ++r) {
          for (std::size_t c = 0; c < F; ++c) {
            sum_g[c] += g[r * F + c];
            sum_gx[c] += g[r * F + c] * xhat[r * F + c];
          }
        }
        if (gin[1]) detail::add_into(gin[1], sum_gx);
        if (gin[2]) detail::add_into(gin[2], sum_g);
        if (auto* gx = gin[0]) {
          const double n = static_cast<double>(B);
          for (std::size_t r = 0; r < B; ++r) {
            for (std::size_t c = 0; c < F; ++c) {
              const std::size_t i = r * F + c;
              if (training) {
                // Batch statistics depend on x, hence the two centring terms.
                (*gx)[i] += gamma[c] * inv_std[c] / n * (n * g[i] - sum_g[c] - xhat[i] * sum_gx[c]);
              } else {
                (*gx)[i] += gamma[c] * inv_std[c] * g[i];
              }
            }
          }
        }
      });
}

inline void update_running_stats(Tensor& running_mean, Tensor& running_var, const BatchStats& batch,
                                 double momentum = kBatchNormMomentum) {
  std::vector<double> m(running_mean.values()), v(running_var.values());
  for (std::size_t c = 0; c < m.size(); ++c) {
    m[c] = momentum * m[c] + (1.0 - momentum) * batch.mean[c];
    v[c] = momentum * v[c] + (1.0 - momentum) * batch.var[c];
  }
  running_mean = Tensor(running_mean.shape(), std::move(m));
  running_var = Tensor(running_var.shape(), std::move(v));
}

// Attribute bag for the kind-dispatched entry point below.
struct Attrs {
  bool transpose_b = false;
  double factor = 1.0;
  double eps = -1.0;  // negative: use the primitive's default
  bool training = true;
  double momentum = kBatchNormMomentum;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
};

// Runs a primitive by kind. batch_norm in training mode folds the batch
// statistics into attrs.running_mean / attrs.running_var.
inline Tensor forward(Tape& tape, Primitive kind, std::span<const Tensor> in, Attrs& attrs) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw DimensionError(std::string(primitive_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                           std::to_string(in.size()));
    }
  };
  switch (kind) {
    case Primitive::leaf: arity(1); return tape.leaf(in[0]);
    case Primitive::matmul: arity(2); return matmul(tape, in[0], in[1], attrs.transpose_b);
    case Primitive::add_bias: arity(2); return add_bias(tape, in[0], in[1]);
    case Primitive::add: arity(2); return add(tape, in[0], in[1]);
    case Primitive::mul: arity(2); return mul(tape, in[0], in[1]);
    case Primitive::relu: arity(1); return relu(tape, in[0]);
    case Primitive::l2_normalize: arity(1); return l2_normalize(tape, in[0], attrs.eps < 0 ? kNormEps : attrs.eps);
    case Primitive::softmax: arity(1); return softmax(tape, in[0]);
    case Primitive::concat_rows: arity(2); return concat_rows(tape, in[0], in[1]);
    case Primitive::scale: arity(1); return scale(tape, in[0], attrs.factor);
    case Primitive::detach_mark: arity(1); return detach(in[0]);
    case Primitive::sum: arity(1); return sum(tape, in[0]);
    case Primitive::mean: arity(1); return mean(tape, in[0]);
    case Primitive::neg_cosine_rowwise:
      arity(2);
      return neg_cosine_rowwise(tape, in[0], in[1], attrs.eps < 0 ? kNormEps : attrs.eps);
    case Primitive::soft_cross_entropy: arity(2); return soft_cross_entropy(tape, in[0], in[1]);
    case Primitive::batch_norm: {
      arity(3);
      if (!attrs.running_mean || !attrs.running_var) {
        throw ContractError("batch_norm: running statistics must be supplied in attrs");
      }
      BatchStats stats;
      Tensor out = batch_norm(tape, in[0], in[1], in[2], *attrs.running_mean, *attrs.running_var, attrs.training,
                              attrs.eps < 0 ? kBatchNormEps : attrs.eps, &stats);
      if (attrs.training) update_running_stats(*attrs.running_mean, *attrs.running_var, stats, attrs.momentum);
      return out;
    }
  }
  throw ContractError("unknown primitive");
}

}  // namespace ops
}  // namespace emalab
