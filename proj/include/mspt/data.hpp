// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mspt/tensor.hpp"

namespace mspt::data {

enum class GroupTag : std::uint8_t { none = 0, volume = 1, surface = 2 };

// One sample as stored: float32 arrays sharing the point count N.
struct Sample {
  Tensor<float> coords;     // N x D
  Tensor<float> in_fields;  // N x F_in
  Tensor<float> targets;    // N x F_out
  std::vector<std::uint8_t> groups;  // GroupTag per point
  std::size_t grid_h = 0, grid_w = 0;  // H x W when structured, else 0

  std::size_t points() const noexcept { return coords.rows(); }
  bool structured() const noexcept { return grid_h > 0; }
  // Throws InputError on inconsistent extents or non-finite values.
  void validate() const;
  // [coords | in_fields], N x (D + F_in).
  template <typename T>
  Tensor<T> features() const;
};

struct Dataset {
  std::size_t coord_dim = 0, in_dim = 0, out_dim = 0;
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
};

// Directory layout: manifest.json plus data.bin holding the per-sample blobs
// (coords, in_fields, targets as little-endian float32, then one group byte
// per point). Every blob has its FNV-1a 64 checksum in the manifest.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

std::uint64_t fnv1a64(const unsigned char* bytes, std::size_t n) noexcept;

// --- Darcy flow --------------------------------------------------------------

// -div(a grad u) = f on the unit square sampled at H x W nodes (spacing
// 1/(W-1) in x, 1/(H-1) in y), u = 0 on the boundary. 5-point stencil with
// arithmetic-mean face coefficients. Arrays are row-major, index y * W + x.
struct DarcyProblem {
  std::size_t h = 0, w = 0;
  std::vector<double> coeff;  // a > 0 at every node
  double forcing = 1.0;
};

// Direct sparse Cholesky solve. Throws NumericError if factorisation fails.
std::vector<double> solve_darcy(const DarcyProblem& p);
// max over interior nodes of |(A_h u)_i - f|.
double darcy_residual(const DarcyProblem& p, const std::vector<double>& u);

// Two-valued porous-medium coefficient: Gaussian-smoothed white noise
// thresholded at zero, values {high, low} with high/low = 10.
std::vector<double> sample_coefficient(std::size_t h, std::size_t w, std::uint64_t seed);

struct DarcyOptions {
  std::size_t h = 16, w = 16;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

// Inputs: node coordinates and a; target: u. Provenance records the largest
// residual over all samples.
Dataset gen_darcy(const DarcyOptions& opt);

// --- Point-cloud operator ------------------------------------------------------

// t_i = sum_j amp_j * exp(-|x_i - x_j|^2 / (2 sigma^2)), summed directly.
std::vector<double> kernel_smooth(const Tensor<double>& points, const std::vector<double>& amp, double sigma);

struct PointcloudOptions {
  std::size_t points = 256;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  double sigma = 0.15;
};

// Uniform random points in the unit square, standard normal source amplitudes
// as the input field, kernel_smooth of them as the target.
Dataset gen_pointcloud(const PointcloudOptions& opt);

// --- Splits and statistics -----------------------------------------------------

struct Split {
  std::vector<std::size_t> train, val;
};

// Seeded shuffle; the first round(val_fraction * M) indices (at least one when
// M >= 2) become validation.
Split split_dataset(std::size_t count, double val_fraction, std::uint64_t seed);

}  // namespace mspt::data
