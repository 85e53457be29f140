// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mspt/autodiff.hpp"
#include "mspt/data.hpp"
#include "mspt/model.hpp"

namespace mspt::training {

enum class OptimizerKind { adamw, lion };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct LossSpec {
  double rel_l2_weight = 1.0;
  double grad_weight = 0.1;  // gradient regularizer, structured samples only
  // Used when a sample tags points by group; untagged points count as volume.
  double volume_weight = 1.0;
  double surface_weight = 0.5;
};

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adamw;
  double peak_lr = 1e-3;
  double final_lr = 1e-6;
  double weight_decay = 0.05;
  double warmup_fraction = 0.05;
  std::size_t epochs = 100;
  std::size_t batch_size = 1;  // samples accumulated per optimizer step
  LossSpec loss;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  // Optional explicit split: the first `train_count` samples train, the rest
  // validate. 0 selects the seeded val_fraction split.
  std::size_t train_count = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// --- losses ----------------------------------------------------------------------

// |pred - target| / |target| as a scalar node. A zero-norm target divides by
// metrics::kZeroNormEps and sets *zero_norm.
template <typename T>
ad::Var<T> relative_l2_loss(ad::Tape<T>* tape, const ad::Var<T>& pred, const Tensor<T>& target,
                            bool* zero_norm = nullptr);

// Central differences on an H x W grid (rows y * W + x, unit index spacing):
// d/dx at nodes with 0 < x < W-1 followed by d/dy at nodes with 0 < y < H-1,
// stacked as rows with the input's columns.
template <typename T>
ad::Var<T> grid_gradient(ad::Tape<T>* tape, const ad::Var<T>& u, std::size_t h, std::size_t w);
template <typename T>
Tensor<T> grid_gradient(const Tensor<T>& u, std::size_t h, std::size_t w);

// Relative L2 between the grid gradients of pred and target. Throws
// ConfigError when h * w does not match the sample or h, w < 3.
template <typename T>
ad::Var<T> gradient_regularizer(ad::Tape<T>* tape, const ad::Var<T>& pred, const Tensor<T>& target, std::size_t h,
                                std::size_t w, bool* zero_norm = nullptr);

// Full per-sample training objective in target units.
template <typename T>
ad::Var<T> sample_loss(ad::Tape<T>* tape, const LossSpec& spec, const ad::Var<T>& pred, const Tensor<T>& target,
                       const data::Sample& sample, bool* zero_norm = nullptr);

// --- optimizers -----------------------------------------------------------------

struct OptimizerHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;  // LION uses 0.99
  double eps = 1e-8;
  double weight_decay = 0.0;

  static OptimizerHyper defaults(OptimizerKind kind, double weight_decay);
};

template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> m, v;  // v is empty for LION
  std::uint64_t step = 0;
};

template <typename T>
OptimizerState<T> make_state(OptimizerKind kind, const std::vector<ad::Var<T>>& params);

// Both read each parameter's accumulated gradient (missing = zero) and throw
// NumericError before touching anything if a gradient is not finite.
template <typename T>
void adamw_step(const std::vector<ad::Var<T>>& params, OptimizerState<T>& state, double lr,
                const OptimizerHyper& hyper);
template <typename T>
void lion_step(const std::vector<ad::Var<T>>& params, OptimizerState<T>& state, double lr,
               const OptimizerHyper& hyper);

// Linear warmup from 0 over ceil(warmup_fraction * total) steps, then cosine
// decay from peak_lr to final_lr at step == total.
double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

// --- training loop -------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_rel_l2 = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // metrics.csv, best.ckpt, last.ckpt; empty = nothing written
  std::function<void(const std::string&)> log;  // warnings and progress; may be empty
  bool progress = false;                         // log one line per epoch
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
  bool stagnation_warning = false;
  std::size_t zero_norm_targets = 0;
};

// Normalisation statistics of the given samples; standard deviations below
// 1e-12 are replaced by 1.
model::Normalization fit_normalization(const data::Dataset& ds, const std::vector<std::size_t>& indices);

template <typename T>
TrainResult train(const model::ModelConfig& mcfg, const TrainConfig& tcfg, const data::Dataset& ds,
                  const TrainOptions& opts = {});

// Mean relative L2 of the model's predictions over `indices`.
template <typename T>
double evaluate(const model::ModelConfig& cfg, const model::MsptParams<T>& params, const model::Normalization& norm,
                const data::Dataset& ds, const std::vector<std::size_t>& indices);

template <typename T>
Tensor<T> predict(const model::ModelConfig& cfg, const model::MsptParams<T>& params, const model::Normalization& norm,
                  const data::Sample& sample);

// --- gradient checking -----------------------------------------------------------

struct GradcheckEntry {
  std::string name;
  std::size_t size = 0;
  double rel_error = 0.0;  // |g_tape - g_fd|_2 / max(|g_tape|_2, |g_fd|_2)
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst;
  double tolerance = 1e-5;
  bool passed = false;

  nlohmann::json to_json() const;
};

using LossFn = std::function<ad::Var<double>(ad::Tape<double>*)>;

// Compares tape gradients of `loss` against central differences with step h
// for every element of every listed parameter.
GradcheckReport gradcheck(const LossFn& loss, const std::vector<std::pair<std::string, ad::Var<double>>>& params,
                          double h = 1e-5, double tolerance = 1e-5);

// Two blocks, F=8, two heads, K=2, Q=1 on a 23-point cloud.
model::ModelConfig toy_config();

// Full-model check on a random instance drawn from `seed`.
GradcheckReport model_gradcheck(const model::ModelConfig& cfg, std::uint64_t seed, std::size_t points = 23);

}  // namespace mspt::training
