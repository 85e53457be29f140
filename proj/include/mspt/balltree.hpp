// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mspt/tensor.hpp"

namespace mspt::balltree {

struct BallNode {
  std::vector<double> center;  // mean of member coordinates
  double radius = 0.0;         // max distance from center to a member
  std::size_t begin = 0;       // member range [begin, end) in BallTree::order
  std::size_t end = 0;
  std::int32_t left = -1;
  std::int32_t right = -1;

  bool is_leaf() const noexcept { return left < 0; }
  std::size_t size() const noexcept { return end - begin; }
};

// Nodes are stored in pre-order; nodes[0] is the root. `order` holds original
// point indices arranged so every node owns a contiguous range.
struct BallTree {
  std::size_t dim = 0;
  std::size_t leaf_capacity = 1;
  std::vector<BallNode> nodes;
  std::vector<std::int64_t> order;

  const BallNode& root() const { return nodes.front(); }
  // Number of levels; a single-leaf tree has depth 1.
  std::size_t depth() const;
};

// Balanced binary ball tree over the rows of `coords` (N x D).
//
// Each internal node splits along the direction between two distant members
// found by a double farthest-point sweep started from the member with the
// lowest original index. The direction is sign-normalised (first non-zero
// component positive), members are ordered by projection with ties going to
// the lower original index, and the first ceil(n/2) go left.
BallTree build_tree(const Tensor<double>& coords, std::size_t leaf_capacity);

// Depth-first, left-first concatenation of leaf members.
std::vector<std::int64_t> leaf_order(const BallTree& tree);

// Upper bound on BallTree::depth(): ceil(log2(ceil(N / leaf_capacity))) + 1.
std::size_t depth_bound(std::size_t n, std::size_t leaf_capacity);

// Contiguous length-L patches cut from a permuted point sequence.
//
// Slot s of the padded sequence holds original point perm[s] for s < N and a
// padding slot otherwise. With L = ceil(N/K) the padding is shorter than L
// whenever K is the smallest patch count producing that L; larger K append
// whole padded patches, which downstream masking ignores.
struct PatchLayout {
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t l = 0;
  std::vector<std::int64_t> perm;     // slot -> original index (N entries)
  std::vector<std::int64_t> inverse;  // original index -> slot
  std::vector<std::uint8_t> valid;    // K*L entries, 0 on padded slots

  std::size_t padded() const noexcept { return k * l; }
  std::size_t padding() const noexcept { return k * l - n; }
  std::span<const std::uint8_t> patch_mask(std::size_t patch) const {
    return {valid.data() + patch * l, l};
  }
  // K*L entries: original index per slot, -1 on padding. Feeds ad::gather_rows.
  std::vector<std::int64_t> to_padded_index() const;
};

PatchLayout make_patches(std::span<const std::int64_t> perm, std::size_t n, std::size_t k);

// Identity permutation for inputs that already carry a natural ordering.
PatchLayout grid_passthrough_layout(std::size_t n, std::size_t k);

// Ball tree partitioning end to end; leaf_capacity 0 means "use L".
PatchLayout partition(const Tensor<double>& coords, std::size_t k, std::size_t leaf_capacity = 0);

}  // namespace mspt::balltree
