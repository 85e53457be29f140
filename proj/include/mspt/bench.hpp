// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mspt/pmsa.hpp"

namespace mspt::bench {

enum class Precision { f32, f64 };

struct SweepSpec {
  std::vector<std::size_t> n{4096}, k{32}, q{1}, f{64}, heads{4};
  pmsa::PoolingMode pooling = pmsa::PoolingMode::mean;
  std::size_t reps = 5;
  std::size_t warmups = 2;
  Precision precision = Precision::f32;
  std::uint64_t memory_cap_bytes = 0;  // 0: no cap
  std::uint64_t seed = 0;
  // Also run each configuration once under the MAC counter and record the
  // count; skipped above this N.
  std::size_t count_macs_up_to = 4096;

  void validate() const;
};

struct CostRow {
  std::size_t n = 0, k = 0, l = 0, q = 0, f = 0, heads = 0;
  int threads = 1;
  std::uint64_t flops_analytic = 0;
  std::uint64_t macs_counted = 0;  // 0 when not counted
  std::uint64_t bytes_estimate = 0;
  std::int64_t bytes_peak = 0;
  double ms_median = 0.0;
  bool skipped = false;
};

// Upper estimate of the tensor bytes a forward pass holds at once; used to
// apply the memory cap before anything is allocated.
std::uint64_t estimate_bytes(std::size_t n, std::size_t k, std::size_t q, std::size_t f, std::size_t bytes_per_value,
                             int threads);

// Forward-only PMSA on random inputs for every (N, K, Q, F, heads)
// combination, one configuration at a time. N is padded to K * ceil(N/K).
std::vector<CostRow> run_sweep(const SweepSpec& spec);

// Appends rows; the header is written only when the file is new or empty.
void append_csv(const std::filesystem::path& path, const std::vector<CostRow>& rows);

struct TradeoffRow {
  std::size_t k = 0, l = 0;
  std::uint64_t flops = 0;
};

// Analytic cost for fixed N over the given patch counts.
std::vector<TradeoffRow> tradeoff_table(std::size_t n, const std::vector<std::size_t>& ks, std::size_t q,
                                        std::size_t f, std::size_t heads);

// True when the minimum lies strictly inside the table and the cost falls
// before it and rises after it.
bool has_interior_minimum(const std::vector<TradeoffRow>& rows);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace mspt::bench
