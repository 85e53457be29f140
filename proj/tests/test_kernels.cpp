// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "mspt/error.hpp"
#include "mspt/kernels.hpp"
#include "mspt/memory.hpp"
#include "mspt/tensor.hpp"
#include "oracles.hpp"

using namespace mspt;
using kernels::Exec;

namespace {

struct ShapeCase {
  std::size_t m, k, n;
};

const ShapeCase kShapes[] = {{1, 1, 1}, {3, 5, 7}, {8, 16, 32}, {17, 9, 33}, {64, 64, 64}, {5, 130, 3}, {40, 7, 100}};

}  // namespace

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  for (auto s : kShapes) {
    const auto a = oracle::random_matrix(rng, s.m, s.k), b = oracle::random_matrix(rng, s.k, s.n);
    Tensor<double> c(s.m, s.n);
    kernels::matmul<double>(Exec::parallel, a.span(), b.span(), c.span(), s.m, s.k, s.n);
    EXPECT_LT(oracle::max_abs_diff(c, oracle::matmul(a, b)), 1e-12) << s.m << "x" << s.k << "x" << s.n;
  }
}

TEST(Matmul, TransposedVariantsMatchTripleLoop) {
  Rng rng(2);
  for (auto s : kShapes) {
    const auto a = oracle::random_matrix(rng, s.m, s.k), b = oracle::random_matrix(rng, s.m, s.n);
    Tensor<double> c(s.k, s.n);
    kernels::matmul_tn<double>(Exec::parallel, a.span(), b.span(), c.span(), s.m, s.k, s.n);
    EXPECT_LT(oracle::max_abs_diff(c, oracle::matmul(oracle::transpose(a), b)), 1e-12);

    const auto bt = oracle::random_matrix(rng, s.n, s.k);
    Tensor<double> d(s.m, s.n);
    kernels::matmul_nt<double>(Exec::parallel, a.span(), bt.span(), d.span(), s.m, s.k, s.n);
    EXPECT_LT(oracle::max_abs_diff(d, oracle::matmul(a, oracle::transpose(bt))), 1e-12);
  }
}

TEST(Matmul, SerialAndParallelAreBitwiseEqual) {
  kernels::set_threads(4);
  Rng rng(3);
  for (auto s : kShapes) {
    const auto a = oracle::random_matrix(rng, s.m, s.k).cast<float>();
    const auto b = oracle::random_matrix(rng, s.k, s.n).cast<float>();
    Tensor<float> c1(s.m, s.n), c2(s.m, s.n);
    kernels::matmul<float>(Exec::serial, a.span(), b.span(), c1.span(), s.m, s.k, s.n);
    kernels::matmul<float>(Exec::parallel, a.span(), b.span(), c2.span(), s.m, s.k, s.n);
    EXPECT_TRUE(c1 == c2);
  }
  kernels::set_threads(0);
}

TEST(Matmul, CountsMultiplyAccumulates) {
  Tensor<float> a(6, 5, 1.0f), b(5, 4, 1.0f), c(6, 4);
  MacCounter counter;
  kernels::matmul<float>(Exec::serial, a.span(), b.span(), c.span(), 6, 5, 4);
  EXPECT_EQ(counter.count(), 6u * 5u * 4u);
  EXPECT_EQ(c(0, 0), 5.0f);
}

TEST(GemmTile, HonoursStrides) {
  Rng rng(4);
  const auto a = oracle::random_matrix(rng, 7, 11);  // used transposed: A(i,p) = a[p*11 + i]
  const auto b = oracle::random_matrix(rng, 7, 13);
  Tensor<double> c(11, 13);
  kernels::gemm_tile(a.data(), 1, 11, b.data(), 13, c.data(), 13, 11, 7, 13);
  EXPECT_LT(oracle::max_abs_diff(c, oracle::matmul(oracle::transpose(a), b)), 1e-12);
}

TEST(Softmax, RowsAreDistributions) {
  Rng rng(5);
  const auto x = oracle::random_matrix(rng, 9, 17, 30.0);
  Tensor<double> y(9, 17);
  kernels::softmax_rows<double>(Exec::parallel, x.span(), y.span(), 9, 17);
  for (std::size_t i = 0; i < 9; ++i) {
    double s = 0.0, mx = -1e300;
    for (std::size_t j = 0; j < 17; ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < 17; ++j) z += std::exp(x(i, j) - mx);
    for (std::size_t j = 0; j < 17; ++j) {
      s += y(i, j);
      EXPECT_NEAR(y(i, j), std::exp(x(i, j) - mx) / z, 1e-14);
    }
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
}

TEST(LayerNorm, MatchesDirectFormula) {
  Rng rng(6);
  const std::size_t m = 5, n = 12;
  const auto x = oracle::random_matrix(rng, m, n, 3.0);
  const auto g = oracle::random_matrix(rng, 1, n).reshaped({n});
  const auto b = oracle::random_matrix(rng, 1, n).reshaped({n});
  Tensor<double> y(m, n), mean({m}), rstd({m});
  kernels::layer_norm<double>(Exec::serial, x.span(), g.span(), b.span(), 1e-5, y.span(), mean.span(), rstd.span(), m,
                              n);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x(i, j) / n;
    for (std::size_t j = 0; j < n; ++j) var += (x(i, j) - mu) * (x(i, j) - mu) / n;
    for (std::size_t j = 0; j < n; ++j)
      EXPECT_NEAR(y(i, j), (x(i, j) - mu) / std::sqrt(var + 1e-5) * g[j] + b[j], 1e-12);
  }
}

TEST(Gelu, MatchesErfForm) {
  Tensor<double> x({7}, {-4.0, -1.5, -0.3, 0.0, 0.2, 1.0, 5.0}), y({7});
  kernels::gelu<double>(Exec::serial, x.span(), y.span());
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(y[i], 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0))), 1e-15);
  EXPECT_EQ(kernels::gelu_scalar(0.0), 0.0);
  for (double v : {-2.0, -0.5, 0.7, 3.0}) {
    const double h = 1e-6;
    EXPECT_NEAR(kernels::gelu_derivative(v), (kernels::gelu_scalar(v + h) - kernels::gelu_scalar(v - h)) / (2 * h),
                1e-8);
  }
}

TEST(Elementwise, FloatExpAndErfTrackLibm) {
  std::vector<float> x, e, r;
  for (int i = -400; i <= 400; ++i) x.push_back(static_cast<float>(i) / 50.0f);
  e = x;
  r = x;
  kernels::exp_inplace(e.data(), e.size());
  kernels::erf_inplace(r.data(), r.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(e[i], std::exp(x[i]), 4e-7 * std::exp(x[i]));
    EXPECT_NEAR(r[i], std::erf(x[i]), 1e-6);
  }
}

TEST(Tensor, ShapeChecks) {
  Tensor<float> a(2, 3), b(3, 2);
  EXPECT_THROW(require_same_shape(a.shape(), b.shape(), "t"), DimensionError);
  EXPECT_THROW(require_rank2(Shape{4}, "t"), DimensionError);
  EXPECT_EQ(a.reshaped({3, 2}).cols(), 2u);
  EXPECT_EQ(shape_string({2, 3}), "[2x3]");
}

TEST(AllocationStats, TracksPeak) {
  AllocationStats::reset_peak();
  const auto base = AllocationStats::current_bytes();
  {
    Tensor<double> big(100, 100);
    EXPECT_GE(AllocationStats::current_bytes() - base, 80000);
  }
  EXPECT_EQ(AllocationStats::current_bytes(), base);
  EXPECT_GE(AllocationStats::peak_bytes() - base, 80000);
}

TEST(Kernels, FloatTranscendentalsDoNotDependOnPosition) {
  Rng rng(17);
  std::vector<float> base(37);
  for (auto& v : base) v = static_cast<float>(rng.uniform(-4, 4));
  for (auto fn : {&kernels::exp_inplace<float>, &kernels::erf_inplace<float>}) {
    auto a = base;
    fn(a.data(), a.size());
    for (std::size_t shift : {1u, 5u, 16u}) {
      std::vector<float> b(shift + base.size() + 3, 0.5f);
      std::copy(base.begin(), base.end(), b.begin() + static_cast<std::ptrdiff_t>(shift));
      fn(b.data(), b.size());
      for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(a[i], b[shift + i]) << "shift " << shift << " i " << i;
    }
    for (std::size_t i = 0; i < base.size(); ++i) {
      const float want = fn == &kernels::exp_inplace<float> ? std::exp(base[i]) : std::erf(base[i]);
      EXPECT_NEAR(a[i], want, 1e-5f * std::max(1.0f, std::abs(want)));
    }
  }
}
