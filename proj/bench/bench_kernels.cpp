// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

// Serial reference against the OpenMP path for the hot kernels.
//   mspt_bench --benchmark_filter=Pmsa

#include <benchmark/benchmark.h>

#include <vector>

#include "mspt/balltree.hpp"
#include "mspt/kernels.hpp"
#include "mspt/pmsa.hpp"
#include "mspt/random.hpp"

using namespace mspt;
using kernels::Exec;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

Tensor<float> random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  Tensor<float> t(r, c);
  const auto v = random_vec(r * c, seed);
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

template <Exec E>
void BM_Matmul(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0)), k = 64, n = 64;
  const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    kernels::matmul<float>(E, a, b, c, m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
}

template <Exec E>
void BM_Pmsa(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), f = 64;
  const auto layout = balltree::grid_passthrough_layout(n, n / 128);
  auto h = ad::constant(random_tensor(n, f, 3));
  pmsa::AttentionParams<float> p{ad::constant(random_tensor(f, f, 4)), ad::constant(random_tensor(f, f, 5)),
                                 ad::constant(random_tensor(f, f, 6)), ad::constant(random_tensor(f, f, 7)), 4};
  for (auto _ : state) {
    ad::Tape<float> tape(E);
    auto out = pmsa::pmsa_forward<float>(&tape, h, layout, {pmsa::PoolingMode::mean, 1}, p);
    benchmark::DoNotOptimize(out.h->value.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

}  // namespace

BENCHMARK(BM_Matmul<Exec::serial>)->Name("Matmul/serial")->RangeMultiplier(4)->Range(256, 16384);
BENCHMARK(BM_Matmul<Exec::parallel>)->Name("Matmul/parallel")->RangeMultiplier(4)->Range(256, 16384);
BENCHMARK(BM_Pmsa<Exec::serial>)->Name("Pmsa/serial")->RangeMultiplier(2)->Range(4096, 32768)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Pmsa<Exec::parallel>)->Name("Pmsa/parallel")->RangeMultiplier(2)->Range(4096, 32768)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
