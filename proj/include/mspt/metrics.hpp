// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mspt/tensor.hpp"

namespace mspt::metrics {

// Denominator used when the reference has zero norm.
inline constexpr double kZeroNormEps = 1e-12;

struct RelativeL2 {
  double value = 0.0;
  bool zero_norm = false;  // reference norm was zero; value = |u - u_hat| / eps
};

// |u - u_hat|_2 / |u|_2 over the flattened arrays, accumulated in double.
template <typename T>
RelativeL2 relative_l2(std::span<const T> u, std::span<const T> u_hat);

template <typename T>
RelativeL2 relative_l2(const Tensor<T>& u, const Tensor<T>& u_hat) {
  require_same_shape(u.shape(), u_hat.shape(), "relative_l2");
  return relative_l2<T>(u.span(), u_hat.span());
}

// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> midranks(std::span<const double> x);

// Pearson correlation of midranks. Throws NumericError when either input has
// no rank variance (constant vector) and InputError when sizes differ or M < 2.
double spearman_rho(std::span<const double> t, std::span<const double> t_hat);

struct EvalReport {
  std::vector<double> rel_l2;          // per sample, all points
  std::vector<double> rel_l2_volume;   // per sample, NaN if the sample has no such points
  std::vector<double> rel_l2_surface;
  double mean = 0.0, median = 0.0;
  std::size_t zero_norm_samples = 0;
  std::optional<double> spearman;  // over the per-sample scalar, when available
};

struct SampleEval {
  Tensor<double> target, prediction;  // N x out
  std::vector<std::uint8_t> groups;   // data::GroupTag per point
  std::optional<double> scalar_target, scalar_prediction;
};

// Spearman is reported when every sample carries both scalars and M >= 2 and
// the ranks are not constant.
EvalReport make_report(const std::vector<SampleEval>& samples);

// One row per sample followed by summary rows.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace mspt::metrics
