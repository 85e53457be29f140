// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "mspt/balltree.hpp"
#include "mspt/error.hpp"
#include "oracles.hpp"

using namespace mspt;
using namespace mspt::balltree;

namespace {

Tensor<double> cloud(Rng& rng, std::size_t n, std::size_t d) {
  Tensor<double> c(n, d);
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] = rng.normal();
  return c;
}

}  // namespace

TEST(BallTree, InvariantsOnRandomClouds) {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.below(2000), d = 2 + rng.below(2), cap = 1 + rng.below(64);
    const auto c = cloud(rng, n, d);
    const auto tree = build_tree(c, cap);
    EXPECT_EQ(oracle::tree_violation(tree, c), "") << "n=" << n << " cap=" << cap;
    EXPECT_LE(tree.depth(), depth_bound(n, cap));
  }
}

TEST(BallTree, DuplicatePointsStayBalanced) {
  Tensor<double> c(37, 2, 0.5);
  const auto tree = build_tree(c, 4);
  EXPECT_EQ(oracle::tree_violation(tree, c), "");
  EXPECT_EQ(tree.root().radius, 0.0);
}

TEST(BallTree, DepthBoundFormula) {
  EXPECT_EQ(depth_bound(1, 1), 1u);
  EXPECT_EQ(depth_bound(8, 1), 4u);
  EXPECT_EQ(depth_bound(9, 1), 5u);
  EXPECT_EQ(depth_bound(100, 25), 3u);
}

TEST(BallTree, LeafOrderIsSpatiallyCoherent) {
  // Two well separated clusters end up in different halves of the order.
  Tensor<double> c(20, 2);
  for (std::size_t i = 0; i < 20; ++i) {
    c(i, 0) = (i % 2 ? 100.0 : 0.0) + 0.01 * static_cast<double>(i);
    c(i, 1) = 0.0;
  }
  const auto order = leaf_order(build_tree(c, 5));
  std::set<bool> first, second;
  for (std::size_t s = 0; s < 10; ++s) first.insert(order[s] % 2 == 1);
  for (std::size_t s = 10; s < 20; ++s) second.insert(order[s] % 2 == 1);
  EXPECT_EQ(first.size(), 1u);
  EXPECT_EQ(second.size(), 1u);
}

TEST(BallTree, Deterministic) {
  Rng rng(12);
  const auto c = cloud(rng, 300, 3);
  EXPECT_EQ(build_tree(c, 7).order, build_tree(c, 7).order);
}

TEST(BallTree, RejectsBadInput) {
  EXPECT_THROW(build_tree(Tensor<double>(0, 2), 4), InputError);
  EXPECT_THROW(build_tree(Tensor<double>(4, 2), 0), ConfigError);
  Tensor<double> bad(3, 2);
  bad[1] = std::nan("");
  EXPECT_THROW(build_tree(bad, 2), InputError);
}

TEST(Patches, PaddingAndInverse) {
  std::vector<std::int64_t> perm{3, 0, 4, 1, 2};
  const auto layout = make_patches(perm, 5, 2);
  EXPECT_EQ(layout.l, 3u);
  EXPECT_EQ(layout.padding(), 1u);
  EXPECT_EQ(layout.valid, (std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0}));
  for (std::size_t s = 0; s < 5; ++s) EXPECT_EQ(layout.inverse[static_cast<std::size_t>(perm[s])], std::int64_t(s));
  EXPECT_EQ(layout.to_padded_index(), (std::vector<std::int64_t>{3, 0, 4, 1, 2, -1}));
}

TEST(Patches, RejectsInvalidPartitions) {
  std::vector<std::int64_t> perm{0, 1, 1};
  EXPECT_THROW(make_patches(perm, 3, 1), InputError);
  std::vector<std::int64_t> ok{0, 1, 2};
  EXPECT_THROW(make_patches(ok, 3, 0), ConfigError);
  EXPECT_THROW(make_patches(ok, 3, 4), ConfigError);
  EXPECT_THROW(make_patches(ok, 4, 2), DimensionError);
}

TEST(Patches, PartitionIsBijection) {
  Rng rng(13);
  const auto c = cloud(rng, 1000, 2);
  for (std::size_t k : {1, 3, 8, 33}) {
    const auto layout = partition(c, k);
    auto sorted = layout.perm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::int64_t> iota(1000);
    std::iota(iota.begin(), iota.end(), 0);
    EXPECT_EQ(sorted, iota);
    EXPECT_LT(layout.padding(), layout.l);
  }
}

TEST(Patches, GridPassthroughIsIdentity) {
  const auto layout = grid_passthrough_layout(12, 4);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(layout.perm[i], std::int64_t(i));
}
