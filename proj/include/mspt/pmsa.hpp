// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mspt/autodiff.hpp"
#include "mspt/balltree.hpp"

namespace mspt::pmsa {

using balltree::PatchLayout;

enum class PoolingMode { mean, max, linear };

PoolingMode parse_pooling(const std::string& name);
std::string to_string(PoolingMode mode);

struct PoolingConfig {
  PoolingMode mode = PoolingMode::mean;
  // Supernodes per patch. Zero disables the global context entirely, which
  // reduces PMSA to independent per-patch attention (used by tests).
  std::size_t q = 1;
};

// Throws ConfigError when mean/max pooling cannot split L into Q equal parts.
void validate_pooling(const PoolingConfig& cfg, std::size_t patch_size);

// Pooled global context: K*Q supernode rows stacked in patch order, plus the
// fraction of valid points behind each one. Zero-weight supernodes are
// excluded as attention keys.
template <typename T>
struct SupernodeSet {
  ad::Var<T> s;
  std::vector<T> weight;
};

// Pools one L x F patch into Q x F supernodes. Padded rows (mask 0) never
// contribute; a sub-patch without valid rows yields a zero row with weight 0.
// `w_pool` (L x Q) is only read in linear mode.
template <typename T>
Tensor<T> pool_patch(const Tensor<T>& patch, std::span<const std::uint8_t> mask, const PoolingConfig& cfg,
                     const Tensor<T>* w_pool = nullptr, std::vector<T>* weight = nullptr);

// Stacks pool_patch over every patch of `h` (K*L x F) as a differentiable op.
template <typename T>
SupernodeSet<T> build_global_context(ad::Tape<T>* tape, const ad::Var<T>& h, const PatchLayout& layout,
                                     const PoolingConfig& cfg, const ad::Var<T>& w_pool = nullptr);

template <typename T>
struct AttentionParams {
  ad::Var<T> w_q;  // F x F
  ad::Var<T> w_k;
  ad::Var<T> w_v;
  ad::Var<T> w_o;
  std::size_t heads = 1;

  std::size_t width() const { return w_q->value.rows(); }
};

// Multi-head attention of every patch's local tokens over [local tokens;
// all supernodes]. Inputs are the projected token sets
// (K*L + K*Q) x F, local rows first. Key scores are scaled by
// 1/sqrt(F/heads); padded local keys and zero-weight supernode keys are
// masked out. Output rows are the per-head results concatenated along
// columns, zero on padded slots. With `supernode_rows`, the output also holds
// K*Q trailing rows where supernode m is updated from its own patch's token
// set. Patches run in parallel; per-patch partial gradients of the shared
// supernode keys/values are reduced in patch order.
template <typename T>
ad::Var<T> patch_attention(ad::Tape<T>* tape, const ad::Var<T>& q, const ad::Var<T>& k, const ad::Var<T>& v,
                           const PatchLayout& layout, std::size_t supernodes_per_patch,
                           std::span<const T> supernode_weight, std::size_t heads, bool supernode_rows);

struct PmsaOptions {
  // Also return updated supernodes (K*Q x F) for a carried supernode stream.
  bool persistent_supernodes = false;
};

template <typename T>
struct PmsaResult {
  ad::Var<T> h;  // K*L x F
  ad::Var<T> s;  // K*Q x F, only in persistent mode
};

// Parallelized multi-scale attention over a padded, patch-ordered token
// matrix. Supernodes are pooled from `h`; `carried` (optional, K*Q x F) is
// added to them before attention.
template <typename T>
PmsaResult<T> pmsa_forward(ad::Tape<T>* tape, const ad::Var<T>& h, const PatchLayout& layout,
                           const PoolingConfig& cfg, const AttentionParams<T>& params,
                           const ad::Var<T>& w_pool = nullptr, const ad::Var<T>& carried = nullptr,
                           const PmsaOptions& opts = {});

// Exact multiply-accumulate count of pmsa_forward:
//   3(N+KQ)F^2 projections + N F^2 output projection
//   + 2 K L (L+KQ) F for scores and weighted sums,
// plus N Q F for linear pooling and the supernode-row terms in persistent
// mode. Requires N == K*L.
std::uint64_t flop_count(std::uint64_t n, std::uint64_t k, std::uint64_t l, std::uint64_t q, std::uint64_t f,
                         std::uint64_t heads, PoolingMode mode = PoolingMode::mean, bool persistent = false);

}  // namespace mspt::pmsa
