// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mspt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mspt/error.hpp"
#include "mspt/kernels.hpp"
#include "mspt/memory.hpp"
#include "mspt/random.hpp"

namespace mspt::bench {

void SweepSpec::validate() const {
  if (n.empty() || k.empty() || q.empty() || f.empty() || heads.empty())
    throw ConfigError("sweep: every dimension list needs at least one value");
  if (reps < 3) throw ConfigError("sweep: at least 3 repetitions are required");
  for (auto v : n)
    if (v == 0) throw ConfigError("sweep: N must be positive");
  for (auto v : k)
    if (v == 0) throw ConfigError("sweep: K must be positive");
  for (auto v : f)
    for (auto h : heads)
      if (h == 0 || v % h != 0)
        throw ConfigError("sweep: F=" + std::to_string(v) + " is not divisible by heads=" + std::to_string(h));
}

std::uint64_t estimate_bytes(std::size_t n, std::size_t k, std::size_t q, std::size_t f, std::size_t bpv,
                             int threads) {
  const std::uint64_t l = (n + k - 1) / k, np = k * l, kq = k * q, keys = l + kq;
  const std::uint64_t tokens = np + kq;
  const std::uint64_t shared = 4 * f * f + 3 * np * f + 4 * tokens * f + 2 * kq * f + np;
  const std::uint64_t scratch = 2 * l * keys + 6 * keys * f + 4 * l * f;
  return bpv * (shared + static_cast<std::uint64_t>(std::max(threads, 1)) * scratch);
}

namespace {

template <typename T>
Tensor<T> random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Tensor<T> t(rows, cols);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-scale, scale));
  return t;
}

template <typename T>
CostRow run_one(const SweepSpec& spec, std::size_t n, std::size_t k, std::size_t q, std::size_t f,
                std::size_t heads) {
  CostRow row;
  row.k = k;
  row.l = (n + k - 1) / k;
  row.n = k * row.l;
  row.q = q;
  row.f = f;
  row.heads = heads;
  row.threads = kernels::max_threads();
  row.flops_analytic = pmsa::flop_count(row.n, k, row.l, q, f, heads, spec.pooling);
  row.bytes_estimate = estimate_bytes(row.n, k, q, f, sizeof(T), row.threads);
  if (spec.memory_cap_bytes && row.bytes_estimate > spec.memory_cap_bytes) {
    row.skipped = true;
    return row;
  }

  Rng rng(spec.seed ^ (n * 0x9e3779b97f4a7c15ULL) ^ (k << 20) ^ (q << 40) ^ f);
  const double a = std::sqrt(3.0 / static_cast<double>(f));
  pmsa::AttentionParams<T> params{ad::constant(random_tensor<T>(rng, f, f, a)),
                                  ad::constant(random_tensor<T>(rng, f, f, a)),
                                  ad::constant(random_tensor<T>(rng, f, f, a)),
                                  ad::constant(random_tensor<T>(rng, f, f, a)), heads};
  ad::Var<T> w_pool;
  if (spec.pooling == pmsa::PoolingMode::linear)
    w_pool = ad::constant(random_tensor<T>(rng, row.l, q, 1.0 / static_cast<double>(row.l)));
  const auto h = ad::constant(random_tensor<T>(rng, row.n, f, 1.0));
  const auto layout = balltree::grid_passthrough_layout(row.n, k);
  const pmsa::PoolingConfig pool{spec.pooling, q};

  const auto run = [&] { return pmsa::pmsa_forward<T>(nullptr, h, layout, pool, params, w_pool); };
  for (std::size_t i = 0; i < spec.warmups; ++i) run();

  if (row.n <= spec.count_macs_up_to) {
    MacCounter counter;
    run();
    row.macs_counted = counter.count();
  }

  const auto base = AllocationStats::current_bytes();
  AllocationStats::reset_peak();
  std::vector<double> ms;
  for (std::size_t i = 0; i < spec.reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto out = run();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  row.bytes_peak = AllocationStats::peak_bytes() - base;
  std::sort(ms.begin(), ms.end());
  row.ms_median = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  return row;
}

}  // namespace

std::vector<CostRow> run_sweep(const SweepSpec& spec) {
  spec.validate();
  std::vector<CostRow> rows;
  for (auto n : spec.n)
    for (auto k : spec.k)
      for (auto q : spec.q)
        for (auto f : spec.f)
          for (auto h : spec.heads) {
            if (k > n) continue;
            rows.push_back(spec.precision == Precision::f32 ? run_one<float>(spec, n, k, q, f, h)
                                                            : run_one<double>(spec, n, k, q, f, h));
          }
  return rows;
}

void append_csv(const std::filesystem::path& path, const std::vector<CostRow>& rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw FormatError("cannot append to " + path.string());
  if (fresh) out << "N,K,L,Q,F,heads,threads,flops_analytic,macs_counted,bytes_estimate,bytes_peak,ms_median,skipped\n";
  for (const auto& r : rows) {
    char ms[32];
    std::snprintf(ms, sizeof(ms), "%.6g", r.ms_median);
    out << r.n << ',' << r.k << ',' << r.l << ',' << r.q << ',' << r.f << ',' << r.heads << ',' << r.threads << ','
        << r.flops_analytic << ',' << r.macs_counted << ',' << r.bytes_estimate << ',' << r.bytes_peak << ','
        << (r.skipped ? "" : ms) << ',' << (r.skipped ? 1 : 0) << '\n';
  }
}

std::vector<TradeoffRow> tradeoff_table(std::size_t n, const std::vector<std::size_t>& ks, std::size_t q,
                                        std::size_t f, std::size_t heads) {
  std::vector<TradeoffRow> rows;
  for (auto k : ks) {
    if (k == 0 || k > n) throw ConfigError("tradeoff_table: K must lie in [1, N]");
    const std::size_t l = (n + k - 1) / k;
    rows.push_back({k, l, pmsa::flop_count(k * l, k, l, q, f, heads)});
  }
  return rows;
}

bool has_interior_minimum(const std::vector<TradeoffRow>& rows) {
  if (rows.size() < 3) return false;
  const auto it = std::min_element(rows.begin(), rows.end(),
                                   [](const TradeoffRow& a, const TradeoffRow& b) { return a.flops < b.flops; });
  const auto m = static_cast<std::size_t>(it - rows.begin());
  if (m == 0 || m + 1 == rows.size()) return false;
  for (std::size_t i = 1; i <= m; ++i)
    if (rows[i].flops > rows[i - 1].flops) return false;
  for (std::size_t i = m + 1; i < rows.size(); ++i)
    if (rows[i].flops < rows[i - 1].flops) return false;
  return rows.front().flops > it->flops && rows.back().flops > it->flops;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("loglog_slope needs two or more paired points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const auto m = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) throw InputError("loglog_slope needs positive values");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = m * sxx - sx * sx;
  if (den == 0.0) throw InputError("loglog_slope: x values are all equal");
  return (m * sxy - sx * sy) / den;
}

}  // namespace mspt::bench
