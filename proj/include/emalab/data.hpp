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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emalab/tensor.hpp"

namespace emalab {

using Rng = std::mt19937_64;

struct Dataset {
  Tensor X;
  std::vector<int> y;
  std::string split = "all";

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return X.cols(); }
  int num_classes() const { return y.empty() ? 0 : *std::max_element(y.begin(), y.end()) + 1; }

  Dataset subset(std::span<const std::size_t> idx, std::string tag) const {
    std::vector<double> flat;
    flat.reserve(idx.size() * dim());
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (std::size_t i : idx) {
      auto r = X.row(i);
      flat.insert(flat.end(), r.begin(), r.end());
      labels.push_back(y[i]);
    }
    return {Tensor::matrix(idx.size(), dim(), std::move(flat)), std::move(labels), std::move(tag)};
  }
};

// K Gaussian blobs in d dimensions. Class means are uniform on the unit
// sphere; rows are grouped by class.
inline Dataset gen_blobs(int classes, std::size_t dim, std::size_t n_per_class, double spread, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("gen_blobs: need at least 2 classes");
  if (dim < 2) throw ConfigError("gen_blobs: need at least 2 dimensions");
  if (n_per_class == 0) throw ConfigError("gen_blobs: n_per_class must be positive");
  if (!(spread >= 0.0)) throw ConfigError("gen_blobs: spread must be non-negative");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
  for (auto& m : means) {
    double ss = 0.0;
    do {
      ss = 0.0;
      for (double& v : m) {
        v = normal(rng);
        ss += v * v;
      }
    } while (ss == 0.0);
    const double norm = std::sqrt(ss);
    for (double& v : m) v /= norm;
  }

  std::vector<double> flat;
  flat.reserve(classes * n_per_class * dim);
  std::vector<int> labels;
  for (int k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      for (std::size_t c = 0; c < dim; ++c) flat.push_back(means[k][c] + spread * normal(rng));
      labels.push_back(k);
    }
  }
  return {Tensor::matrix(labels.size(), dim, std::move(flat)), std::move(labels), "all"};
}

// Seeded shuffle, then the first `train_fraction` of rows become the train
// split.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::uint64_t seed,
                                                    double train_fraction = 0.8) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ds.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, ds.size() > 1 ? ds.size() - 1 : 1);
  std::span<const std::size_t> all(idx);
  return {ds.subset(all.first(n_train), "train"), ds.subset(all.subspan(n_train), "test")};
}

struct AugSpec {
  double noise_std = 0.1;
  double mask_prob = 0.1;
  double scale_lo = 0.8;
  double scale_hi = 1.2;

  bool operator==(const AugSpec&) const = default;
};

inline void validate(const AugSpec& aug) {
  if (!(aug.noise_std >= 0.0)) throw ConfigError("augment noise_std must be >= 0");
  if (!(aug.mask_prob >= 0.0 && aug.mask_prob <= 1.0)) throw ConfigError("augment mask_prob out of range [0,1]");
  if (!(aug.scale_lo > 0.0 && aug.scale_lo <= aug.scale_hi)) {
    throw ConfigError("augment scale range must satisfy 0 < lo <= hi");
  }
}

namespace detail {

inline Tensor augment_once(const Tensor& x, const AugSpec& aug, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> out(x.values());
  const std::size_t cols = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double s = aug.scale_lo + (aug.scale_hi - aug.scale_lo) * unit(rng);
    for (std::size_t c = 0; c < cols; ++c) {
      double& v = out[r * cols + c];
      v += aug.noise_std * noise(rng);
      if (unit(rng) < aug.mask_prob) v = 0.0;
      v *= s;
    }
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace detail

// Two independent augmentations of the same batch: Gaussian noise, random
// coordinate masking, then a per-row scale.
inline std::pair<Tensor, Tensor> make_views(const Tensor& x, const AugSpec& aug, Rng& rng) {
  Tensor a = detail::augment_once(x, aug, rng);
  Tensor b = detail::augment_once(x, aug, rng);
  return {std::move(a), std::move(b)};
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view f = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    out.push_back(f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_double(std::string_view f, double& out) {
  if (!f.empty() && f.front() == '+') f.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), out);
  return ec == std::errc() && ptr == f.data() + f.size() && !f.empty();
}

}  // namespace detail

// Rows of "x_0,...,x_{d-1},label". A first line that does not parse as
// numbers is treated as a header.
inline Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");

  std::vector<double> flat;
  std::vector<int> labels;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = detail::split_fields(line);
    std::vector<double> values(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size(); ++i) numeric = numeric && detail::parse_double(fields[i], values[i]);
    if (!numeric) {
      if (first_content) {
        first_content = false;
        continue;
      }
      throw ParseError(path + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    first_content = false;
    if (fields.size() < 2) throw ParseError(path + ":" + std::to_string(lineno) + ": need features and a label");
    if (dim == 0) dim = fields.size() - 1;
    if (fields.size() - 1 != dim) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim + 1) + " fields, got " +
                       std::to_string(fields.size()));
    }
    const double label = values.back();
    if (!(label >= 0.0) || label != std::floor(label) || label > 1e9) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": label must be a non-negative integer");
    }
    flat.insert(flat.end(), values.begin(), values.end() - 1);
    labels.push_back(static_cast<int>(label));
  }
  if (labels.empty()) throw ParseError(path + ": no rows");
  return {Tensor::matrix(labels.size(), dim, std::move(flat)), std::move(labels), "all"};
}

}  // namespace emalab
