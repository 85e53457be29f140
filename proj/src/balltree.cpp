// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mspt/balltree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mspt/error.hpp"

namespace mspt::balltree {

namespace {

class Builder {
 public:
  Builder(const Tensor<double>& coords, BallTree& tree) : x_(coords), d_(coords.cols()), tree_(tree) {}

  std::int32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    {
      BallNode& node = tree_.nodes.back();
      node.begin = begin;
      node.end = end;
      fit_ball(node);
    }
    if (end - begin <= tree_.leaf_capacity) return id;

    const std::vector<double> dir = split_direction(begin, end);
    auto first = tree_.order.begin() + static_cast<std::ptrdiff_t>(begin);
    auto last = tree_.order.begin() + static_cast<std::ptrdiff_t>(end);
    const std::size_t n_left = (end - begin + 1) / 2;
    auto less = [&](std::int64_t a, std::int64_t b) {
      const double pa = project(a, dir);
      const double pb = project(b, dir);
      return pa < pb || (pa == pb && a < b);
    };
    std::nth_element(first, first + static_cast<std::ptrdiff_t>(n_left), last, less);

    const auto left = build(begin, begin + n_left);
    const auto right = build(begin + n_left, end);
    tree_.nodes[id].left = left;
    tree_.nodes[id].right = right;
    return id;
  }

 private:
  const double* point(std::int64_t i) const { return x_.data() + static_cast<std::size_t>(i) * d_; }

  double dist2(std::int64_t a, std::int64_t b) const {
    double s = 0;
    for (std::size_t c = 0; c < d_; ++c) {
      const double t = point(a)[c] - point(b)[c];
      s += t * t;
    }
    return s;
  }

  double project(std::int64_t i, const std::vector<double>& dir) const {
    double s = 0;
    for (std::size_t c = 0; c < d_; ++c) s += point(i)[c] * dir[c];
    return s;
  }

  void fit_ball(BallNode& node) const {
    node.center.assign(d_, 0.0);
    for (std::size_t s = node.begin; s < node.end; ++s)
      for (std::size_t c = 0; c < d_; ++c) node.center[c] += point(tree_.order[s])[c];
    for (auto& c : node.center) c /= static_cast<double>(node.size());
    double r2 = 0;
    for (std::size_t s = node.begin; s < node.end; ++s) {
      double t2 = 0;
      for (std::size_t c = 0; c < d_; ++c) {
        const double t = point(tree_.order[s])[c] - node.center[c];
        t2 += t * t;
      }
      r2 = std::max(r2, t2);
    }
    node.radius = std::sqrt(r2);
  }

  // Farthest member from `from`; ties resolve to the lower original index.
  std::int64_t farthest(std::size_t begin, std::size_t end, std::int64_t from) const {
    std::int64_t best = -1;
    double best_d = -1;
    for (std::size_t s = begin; s < end; ++s) {
      const auto i = tree_.order[s];
      const double dd = dist2(from, i);
      if (dd > best_d || (dd == best_d && i < best)) {
        best_d = dd;
        best = i;
      }
    }
    return best;
  }

  std::vector<double> split_direction(std::size_t begin, std::size_t end) const {
    const auto start = *std::min_element(tree_.order.begin() + static_cast<std::ptrdiff_t>(begin),
                                         tree_.order.begin() + static_cast<std::ptrdiff_t>(end));
    const auto p = farthest(begin, end, start);
    const auto q = farthest(begin, end, p);
    std::vector<double> dir(d_);
    for (std::size_t c = 0; c < d_; ++c) dir[c] = point(q)[c] - point(p)[c];
    for (double v : dir) {
      if (v == 0.0) continue;
      if (v < 0.0)
        for (auto& w : dir) w = -w;
      break;
    }
    return dir;
  }

  const Tensor<double>& x_;
  std::size_t d_;
  BallTree& tree_;
};

void collect_leaves(const BallTree& tree, std::int32_t id, std::vector<std::int64_t>& out) {
  const BallNode& node = tree.nodes[static_cast<std::size_t>(id)];
  if (node.is_leaf()) {
    for (std::size_t s = node.begin; s < node.end; ++s) out.push_back(tree.order[s]);
    return;
  }
  collect_leaves(tree, node.left, out);
  collect_leaves(tree, node.right, out);
}

std::size_t subtree_depth(const BallTree& tree, std::int32_t id) {
  const BallNode& node = tree.nodes[static_cast<std::size_t>(id)];
  if (node.is_leaf()) return 1;
  return 1 + std::max(subtree_depth(tree, node.left), subtree_depth(tree, node.right));
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

std::size_t BallTree::depth() const { return nodes.empty() ? 0 : subtree_depth(*this, 0); }

BallTree build_tree(const Tensor<double>& coords, std::size_t leaf_capacity) {
  if (coords.rank() != 2) throw InputError("build_tree: coordinates must be an N x D matrix");
  const std::size_t n = coords.rows();
  const std::size_t d = coords.cols();
  if (n == 0 || d == 0) throw InputError("build_tree: need at least one point with at least one coordinate");
  if (leaf_capacity == 0) throw ConfigError("build_tree: leaf_capacity must be positive");
  if (!coords.all_finite()) throw InputError("build_tree: non-finite coordinate");

  BallTree tree;
  tree.dim = d;
  tree.leaf_capacity = leaf_capacity;
  tree.order.resize(n);
  std::iota(tree.order.begin(), tree.order.end(), 0);
  tree.nodes.reserve(2 * ceil_div(n, leaf_capacity));
  Builder(coords, tree).build(0, n);
  return tree;
}

std::vector<std::int64_t> leaf_order(const BallTree& tree) {
  std::vector<std::int64_t> out;
  out.reserve(tree.order.size());
  if (!tree.nodes.empty()) collect_leaves(tree, 0, out);
  return out;
}

std::size_t depth_bound(std::size_t n, std::size_t leaf_capacity) {
  const std::size_t leaves = ceil_div(n, leaf_capacity);
  std::size_t levels = 0;
  while ((std::size_t{1} << levels) < leaves) ++levels;
  return levels + 1;
}

std::vector<std::int64_t> PatchLayout::to_padded_index() const {
  std::vector<std::int64_t> idx(padded(), -1);
  std::copy(perm.begin(), perm.end(), idx.begin());
  return idx;
}

PatchLayout make_patches(std::span<const std::int64_t> perm, std::size_t n, std::size_t k) {
  if (k == 0) throw ConfigError("make_patches: patch count K must be at least 1");
  if (n == 0) throw ConfigError("make_patches: empty point set");
  if (k > n)
    throw ConfigError("make_patches: K=" + std::to_string(k) + " exceeds N=" + std::to_string(n) +
                      " and would produce empty patches");
  if (perm.size() != n) throw DimensionError("make_patches: permutation length differs from N");

  PatchLayout layout;
  layout.n = n;
  layout.k = k;
  layout.l = ceil_div(n, k);
  layout.perm.assign(perm.begin(), perm.end());
  layout.inverse.assign(n, -1);
  for (std::size_t s = 0; s < n; ++s) {
    const auto i = perm[s];
    if (i < 0 || static_cast<std::size_t>(i) >= n || layout.inverse[static_cast<std::size_t>(i)] >= 0)
      throw InputError("make_patches: permutation is not a bijection on [0, N)");
    layout.inverse[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(s);
  }
  layout.valid.assign(layout.padded(), 0);
  std::fill_n(layout.valid.begin(), n, 1);
  return layout;
}

PatchLayout grid_passthrough_layout(std::size_t n, std::size_t k) {
  std::vector<std::int64_t> identity(n);
  std::iota(identity.begin(), identity.end(), 0);
  return make_patches(identity, n, k);
}

PatchLayout partition(const Tensor<double>& coords, std::size_t k, std::size_t leaf_capacity) {
  const std::size_t n = coords.rows();
  if (k == 0 || k > n) return make_patches({}, n, k);  // raises the configuration error
  const std::size_t cap = leaf_capacity ? leaf_capacity : ceil_div(n, k);
  const BallTree tree = build_tree(coords, cap);
  const auto order = leaf_order(tree);
  return make_patches(order, n, k);
}

}  // namespace mspt::balltree
