// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mspt/autodiff.hpp"
#include "mspt/balltree.hpp"
#include "mspt/pmsa.hpp"

namespace mspt::model {

struct ModelConfig {
  std::size_t blocks = 4;
  std::size_t width = 64;  // F
  std::size_t heads = 4;
  std::size_t patches = 4;     // K
  std::size_t supernodes = 1;  // Q per patch
  pmsa::PoolingMode pooling = pmsa::PoolingMode::mean;
  std::size_t ffn_expansion = 2;
  std::size_t coord_dim = 2;
  std::size_t descriptor_dim = 0;
  std::size_t field_dim = 1;
  std::size_t out_dim = 1;
  // Patch length L; only needed (and then required) for linear pooling, whose
  // W_pool is L x Q.
  std::size_t patch_size = 0;
  std::size_t leaf_capacity = 0;  // 0: same as L
  bool persistent_supernodes = false;

  std::size_t in_dim() const noexcept { return coord_dim + descriptor_dim + field_dim; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct BlockParams {
  ad::Var<T> ln1_gain, ln1_bias;
  pmsa::AttentionParams<T> attn;
  ad::Var<T> w_pool;  // linear pooling only
  ad::Var<T> ln2_gain, ln2_bias;
  ad::Var<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <typename T>
struct MsptParams {
  ad::Var<T> embed_w1, embed_b1, embed_w2, embed_b2;
  std::vector<BlockParams<T>> blocks;
  ad::Var<T> head_ln_gain, head_ln_bias, head_w, head_b;

  // Stable name -> tensor listing; the order defines checkpoint layout and
  // optimizer state layout.
  std::vector<std::pair<std::string, ad::Var<T>>> named() const;
  std::size_t count() const;
  void zero_grad() const;
};

// Xavier-uniform weights, zero biases, unit LayerNorm gains.
template <typename T>
MsptParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

// Closed-form parameter count for `cfg`.
std::size_t parameter_count(const ModelConfig& cfg);

// Per-channel standardisation of raw inputs and targets.
struct Normalization {
  std::vector<double> in_mean, in_std;
  std::vector<double> out_mean, out_std;

  static Normalization identity(std::size_t in_dim, std::size_t out_dim);
  nlohmann::json to_json() const;
  static Normalization from_json(const nlohmann::json& j);
};

// Layout for one sample: grid passthrough for structured samples, ball tree
// partitioning otherwise. Computed once and shared by every block.
balltree::PatchLayout make_layout(const ModelConfig& cfg, const Tensor<double>& coords, bool structured);

// Shared two-layer embedding MLP: Linear -> GELU -> Linear.
template <typename T>
ad::Var<T> embed(ad::Tape<T>* tape, const MsptParams<T>& params, const ad::Var<T>& raw);

// One pre-norm block on padded, patch-ordered features. `carried` is the
// supernode stream in persistent mode (null otherwise) and is updated in place.
template <typename T>
ad::Var<T> mspt_block(ad::Tape<T>* tape, const ModelConfig& cfg, const BlockParams<T>& params,
                      const balltree::PatchLayout& layout, const ad::Var<T>& h, ad::Var<T>* carried = nullptr);

// Full network: normalised raw features (N x in_dim, original point order)
// -> predictions in target units (N x out_dim, original order).
template <typename T>
ad::Var<T> forward(ad::Tape<T>* tape, const ModelConfig& cfg, const MsptParams<T>& params, const Normalization& norm,
                   const Tensor<T>& raw, const balltree::PatchLayout& layout);

// Single-file checkpoint: "MSPTCKPT", u64 LE header length, JSON header, then
// little-endian f32 payloads at the offsets listed in the header.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const Normalization& norm,
                     const MsptParams<T>& params, const nlohmann::json& extra = {});

template <typename T>
struct Checkpoint {
  ModelConfig config;
  Normalization norm;
  MsptParams<T> params;
  nlohmann::json extra;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace mspt::model
