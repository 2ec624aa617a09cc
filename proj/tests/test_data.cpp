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

#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "emalab/data.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace emalab {
namespace {

std::string write_text(const std::string& name, const std::string& text) {
  const auto path = testing::scratch_dir("data") / name;
  std::ofstream(path) << text;
  return path.string();
}

TEST(Blobs, ZeroSpreadSitsOnTheMeans) {
  const Dataset ds = gen_blobs(3, 5, 4, 0.0, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t first = static_cast<std::size_t>(ds.y[i]) * 4;
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(ds.X.at(i, c), ds.X.at(first, c));
    EXPECT_NEAR(oracle::norm({ds.X.row(i).begin(), ds.X.row(i).end()}), 1.0, 1e-12);
  }
}

TEST(Blobs, Deterministic) {
  const Dataset a = gen_blobs(4, 6, 10, 0.2, 9), b = gen_blobs(4, 6, 10, 0.2, 9);
  EXPECT_TRUE(bitwise_equal(a.X, b.X));
  EXPECT_EQ(a.y, b.y);
  EXPECT_FALSE(bitwise_equal(a.X, gen_blobs(4, 6, 10, 0.2, 10).X));
}

TEST(Blobs, ShapeAndBalance) {
  const Dataset ds = gen_blobs(8, 32, 64, 0.1, 1);
  EXPECT_EQ(ds.X.shape(), (Shape{512, 32}));
  std::vector<int> counts(8, 0);
  for (int y : ds.y) ++counts[static_cast<std::size_t>(y)];
  for (int c : counts) EXPECT_EQ(c, 64);
  EXPECT_THROW(gen_blobs(1, 32, 4, 0.1, 1), ConfigError);
  EXPECT_THROW(gen_blobs(2, 1, 4, 0.1, 1), ConfigError);
}

TEST(Blobs, RawNearestNeighbourSanityAnchor) {
  const Dataset ds = gen_blobs(8, 32, 64, 0.1, 1);
  const auto [train, test] = split_train_test(ds, 3);
  const auto tr = oracle::rows_of(train.X), te = oracle::rows_of(test.X);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < te.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < tr.size(); ++j) {
      if (oracle::cosine(te[i], tr[j]) > oracle::cosine(te[i], tr[best])) best = j;
    }
    correct += train.y[best] == test.y[i];
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(te.size()), 0.99);
}

TEST(Split, EightyTwentyAndPure) {
  const Dataset ds = gen_blobs(4, 3, 25, 0.1, 2);
  const auto [a_tr, a_te] = split_train_test(ds, 5);
  const auto [b_tr, b_te] = split_train_test(ds, 5);
  EXPECT_EQ(a_tr.size(), 80u);
  EXPECT_EQ(a_te.size(), 20u);
  EXPECT_TRUE(bitwise_equal(a_tr.X, b_tr.X));
  std::set<std::vector<double>> rows;
  for (const Dataset* d : {&a_tr, &a_te}) {
    for (std::size_t i = 0; i < d->size(); ++i) rows.insert({d->X.row(i).begin(), d->X.row(i).end()});
  }
  EXPECT_EQ(rows.size(), 100u);
}

TEST(Views, IdentityAugmentation) {
  const Tensor x = testing::uniform({4, 5}, 1);
  Rng rng(3);
  const auto [a, b] = make_views(x, {0.0, 0.0, 1.0, 1.0}, rng);
  EXPECT_TRUE(bitwise_equal(a, x));
  EXPECT_TRUE(bitwise_equal(b, x));
}

TEST(Views, FullMaskingZeroesBothViews) {
  const Tensor x = testing::uniform({4, 5}, 1);
  Rng rng(3);
  const auto [a, b] = make_views(x, {0.1, 1.0, 0.8, 1.2}, rng);
  for (double v : a.data()) EXPECT_EQ(v, 0.0);
  for (double v : b.data()) EXPECT_EQ(v, 0.0);
}

TEST(Views, ReproducibleAndShapePreserving) {
  const Tensor x = testing::uniform({6, 5}, 1);
  Rng r1(7), r2(7);
  const auto [a1, b1] = make_views(x, {}, r1);
  const auto [a2, b2] = make_views(x, {}, r2);
  EXPECT_TRUE(bitwise_equal(a1, a2));
  EXPECT_TRUE(bitwise_equal(b1, b2));
  EXPECT_FALSE(bitwise_equal(a1, b1));
  EXPECT_EQ(a1.shape(), x.shape());
}

TEST(Views, AugSpecValidation) {
  EXPECT_THROW(validate(AugSpec{-0.1, 0.1, 0.8, 1.2}), ConfigError);
  EXPECT_THROW(validate(AugSpec{0.1, 1.5, 0.8, 1.2}), ConfigError);
  EXPECT_THROW(validate(AugSpec{0.1, 0.1, 0.0, 1.2}), ConfigError);
  EXPECT_THROW(validate(AugSpec{0.1, 0.1, 1.3, 1.2}), ConfigError);
}

TEST(Csv, ParsesRows) {
  const Dataset ds = load_csv_dataset(write_text("plain.csv", "1,2,0\n3,4,1\n5,6,0\n"));
  EXPECT_EQ(ds.X.shape(), (Shape{3, 2}));
  EXPECT_EQ(ds.y, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(ds.X.at(1, 1), 4.0);
}

TEST(Csv, HeaderIsTolerated) {
  const Dataset a = load_csv_dataset(write_text("h.csv", "f0,f1,label\n1,2,0\n3,4,1\n5,6,0\n"));
  const Dataset b = load_csv_dataset(write_text("nh.csv", "1,2,0\n3,4,1\n5,6,0\n"));
  EXPECT_TRUE(bitwise_equal(a.X, b.X));
  EXPECT_EQ(a.y, b.y);
}

TEST(Csv, Errors) {
  try {
    load_csv_dataset(write_text("empty.csv", ""));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("no rows"), std::string::npos);
  }
  try {
    load_csv_dataset(write_text("ragged.csv", "1,2,0\n3,1\n"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  try {
    load_csv_dataset(write_text("text.csv", "1,2,0\n3,x,1\n"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  EXPECT_THROW(load_csv_dataset(write_text("label.csv", "1,2,0.5\n")), ParseError);
  EXPECT_THROW(load_csv_dataset("/nonexistent/emalab.csv"), IoError);
}

}  // namespace
}  // namespace emalab
