// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mspt/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include "mspt/memory.hpp"

namespace mspt::kernels {

namespace {

inline bool par(Exec e) { return e == Exec::parallel; }

using Index = std::ptrdiff_t;

}  // namespace

namespace {

constexpr std::size_t kMR = 8;

// One block of C, `rows` <= kMR high and NV 64-byte vectors wide, with the
// accumulators held in vector registers.
template <typename T, std::size_t NV, std::size_t Rows>
void tile_vec(const T* a, std::size_t rs, std::size_t cs, const T* b, std::size_t ldb, T* c, std::size_t ldc,
              std::size_t k) {
  using Vec [[gnu::vector_size(64)]] = T;
  using VecU [[gnu::vector_size(64), gnu::aligned(alignof(T))]] = T;  // unaligned view of a row
  constexpr std::size_t V = 64 / sizeof(T);
  Vec acc[Rows][NV];
#pragma GCC unroll 16
  for (std::size_t r = 0; r < Rows; ++r)
#pragma GCC unroll 4
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = Vec{};
  for (std::size_t p = 0; p < k; ++p) {
    Vec bv[NV];
#pragma GCC unroll 4
    for (std::size_t v = 0; v < NV; ++v) bv[v] = *reinterpret_cast<const VecU*>(b + p * ldb + v * V);
#pragma GCC unroll 16
    for (std::size_t r = 0; r < Rows; ++r) {
      const T av = a[r * rs + p * cs];
#pragma GCC unroll 4
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += av * bv[v];
    }
  }
#pragma GCC unroll 16
  for (std::size_t r = 0; r < Rows; ++r)
#pragma GCC unroll 4
    for (std::size_t v = 0; v < NV; ++v) *reinterpret_cast<VecU*>(c + r * ldc + v * V) = acc[r][v];
}

template <typename T, std::size_t NV>
void tile_vec_rows(const T* a, std::size_t rs, std::size_t cs, const T* b, std::size_t ldb, T* c, std::size_t ldc,
                   std::size_t rows, std::size_t k) {
  switch (rows) {
    case 8: tile_vec<T, NV, 8>(a, rs, cs, b, ldb, c, ldc, k); break;
    case 7: tile_vec<T, NV, 7>(a, rs, cs, b, ldb, c, ldc, k); break;
    case 6: tile_vec<T, NV, 6>(a, rs, cs, b, ldb, c, ldc, k); break;
    case 5: tile_vec<T, NV, 5>(a, rs, cs, b, ldb, c, ldc, k); break;
    case 4: tile_vec<T, NV, 4>(a, rs, cs, b, ldb, c, ldc, k); break;
    case 3: tile_vec<T, NV, 3>(a, rs, cs, b, ldb, c, ldc, k); break;
    case 2: tile_vec<T, NV, 2>(a, rs, cs, b, ldb, c, ldc, k); break;
    default: tile_vec<T, NV, 1>(a, rs, cs, b, ldb, c, ldc, k); break;
  }
}

// Narrow remainder columns.
template <typename T>
void tile_scalar(const T* a, std::size_t rs, std::size_t cs, const T* b, std::size_t ldb, T* c, std::size_t ldc,
                 std::size_t rows, std::size_t k, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[r * rs + p * cs] * b[p * ldb + j];
      c[r * ldc + j] = acc;
    }
}

}  // namespace

template <typename T>
void gemm_tile(const T* a, std::size_t rs, std::size_t cs, const T* b, std::size_t ldb, T* c, std::size_t ldc,
               std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t V = 64 / sizeof(T);
  for (std::size_t i0 = 0; i0 < m; i0 += kMR) {
    const std::size_t rows = std::min(kMR, m - i0);
    const T* ai = a + i0 * rs;
    T* ci = c + i0 * ldc;
    std::size_t j0 = 0;
    for (; j0 + 2 * V <= n; j0 += 2 * V) tile_vec_rows<T, 2>(ai, rs, cs, b + j0, ldb, ci + j0, ldc, rows, k);
    for (; j0 + V <= n; j0 += V) tile_vec_rows<T, 1>(ai, rs, cs, b + j0, ldb, ci + j0, ldc, rows, k);
    if (j0 < n) tile_scalar(ai, rs, cs, b + j0, ldb, ci + j0, ldc, rows, k, n - j0);
  }
}

namespace {

// Fixed blocks so every element goes through the packet code path; a
// dynamic-length map would finish the tail with the scalar routine, whose
// rounding differs, making a value depend on its position in the buffer.
template <typename Fn>
void blockwise(float* x, std::size_t n, Fn fn) {
  using Block = Eigen::Array<float, 16, 1>;
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    Eigen::Map<Block, Eigen::Unaligned> v(x + i);
    v = fn(Block(v));
  }
  if (i < n) {
    Block tail = Block::Zero();
    std::copy(x + i, x + n, tail.data());
    tail = fn(tail);
    std::copy(tail.data(), tail.data() + (n - i), x + i);
  }
}

}  // namespace

template <>
void exp_inplace<float>(float* x, std::size_t n) {
  blockwise(x, n, [](const Eigen::Array<float, 16, 1>& v) -> Eigen::Array<float, 16, 1> { return v.exp(); });
}

template <>
void exp_inplace<double>(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = std::exp(x[i]);
}

template <>
void erf_inplace<float>(float* x, std::size_t n) {
  blockwise(x, n, [](const Eigen::Array<float, 16, 1>& v) -> Eigen::Array<float, 16, 1> { return v.erf(); });
}

template <>
void erf_inplace<double>(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = std::erf(x[i]);
}

namespace {

template <typename T>
void gemm_rows(Exec exec, const T* a, std::size_t rs, std::size_t cs, const T* b, T* c, std::size_t m,
               std::size_t k, std::size_t n) {
  const std::size_t MR = kMR;
  const Index blocks = static_cast<Index>((m + MR - 1) / MR);
#pragma omp parallel for schedule(static) if (par(exec))
  for (Index blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * MR;
    gemm_tile(a + i0 * rs, rs, cs, b, n, c + i0 * n, n, std::min(MR, m - i0), k, n);
  }
}

}  // namespace

template <typename T>
void matmul(Exec exec, std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
            std::size_t n) {
  MacCounter::add(static_cast<std::uint64_t>(m) * k * n);
  gemm_rows(exec, a.data(), k, std::size_t{1}, b.data(), c.data(), m, k, n);
}

template <typename T>
void matmul_tn(Exec exec, std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
               std::size_t n) {
  MacCounter::add(static_cast<std::uint64_t>(m) * k * n);
  // Output row p accumulates over input rows i in ascending order.
  gemm_rows(exec, a.data(), std::size_t{1}, k, b.data(), c.data(), k, m, n);
}

template <typename T>
void matmul_nt(Exec exec, std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
               std::size_t n) {
  std::vector<T, CountingAllocator<T>> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  matmul<T>(exec, a, std::span<const T>(bt), c, m, k, n);
}

template <typename T>
void softmax_rows(Exec exec, std::span<const T> x, std::span<T> y, std::size_t m, std::size_t n) {
#pragma omp parallel for schedule(static) if (par(exec))
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    const T* xr = x.data() + i * n;
    T* yr = y.data() + i * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xr[j]);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
}

template <typename T>
void layer_norm(Exec exec, std::span<const T> x, std::span<const T> gain, std::span<const T> bias, T eps,
                std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t m, std::size_t n) {
#pragma omp parallel for schedule(static) if (par(exec))
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    const T* xr = x.data() + i * n;
    T* yr = y.data() + i * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
    mean[i] = mu;
    rstd[i] = rs;
  }
}

template <typename T>
void layer_norm_backward(Exec exec, std::span<const T> x, std::span<const T> gain, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx, std::span<T> dgain,
                         std::span<T> dbias, std::size_t m, std::size_t n) {
#pragma omp parallel for schedule(static) if (par(exec))
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    const T* xr = x.data() + i * n;
    const T* dyr = dy.data() + i * n;
    T* dxr = dx.data() + i * n;
    const T mu = mean[i];
    const T rs = rstd[i];
    T sum_dxhat = 0;
    T sum_dxhat_xhat = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T xhat = (xr[j] - mu) * rs;
      const T dxhat = dyr[j] * gain[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    const T inv_n = T(1) / static_cast<T>(n);
    for (std::size_t j = 0; j < n; ++j) {
      const T xhat = (xr[j] - mu) * rs;
      const T dxhat = dyr[j] * gain[j];
      dxr[j] = rs * (dxhat - sum_dxhat * inv_n - xhat * sum_dxhat_xhat * inv_n);
    }
  }
  // Column reductions run over rows in ascending order.
#pragma omp parallel for schedule(static) if (par(exec))
  for (Index j = 0; j < static_cast<Index>(n); ++j) {
    T g = 0;
    T b = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const T xhat = (x[i * n + j] - mean[i]) * rstd[i];
      g += dy[i * n + j] * xhat;
      b += dy[i * n + j];
    }
    dgain[j] = g;
    dbias[j] = b;
  }
}

template <typename T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
  return cdf + x * pdf;
}

namespace {

constexpr std::size_t kChunk = 1024;

}  // namespace

template <typename T>
void gelu(Exec exec, std::span<const T> x, std::span<T> y) {
  const Index chunks = static_cast<Index>((x.size() + kChunk - 1) / kChunk);
  const T r2 = T(1) / std::sqrt(T(2));
#pragma omp parallel for schedule(static) if (par(exec))
  for (Index ci = 0; ci < chunks; ++ci) {
    const std::size_t b = static_cast<std::size_t>(ci) * kChunk, e = std::min(x.size(), b + kChunk);
    T* out = y.data() + b;
    for (std::size_t i = b; i < e; ++i) out[i - b] = x[i] * r2;
    erf_inplace(out, e - b);
    for (std::size_t i = b; i < e; ++i) out[i - b] = T(0.5) * x[i] * (T(1) + out[i - b]);
  }
}

template <typename T>
void gelu_backward(Exec exec, std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  const Index chunks = static_cast<Index>((x.size() + kChunk - 1) / kChunk);
  const T r2 = T(1) / std::sqrt(T(2));
  const T norm = T(1) / std::sqrt(T(2) * T(M_PI));
#pragma omp parallel for schedule(static) if (par(exec))
  for (Index ci = 0; ci < chunks; ++ci) {
    const std::size_t b = static_cast<std::size_t>(ci) * kChunk, e = std::min(x.size(), b + kChunk);
    T cdf[kChunk], pdf[kChunk];
    for (std::size_t i = b; i < e; ++i) {
      cdf[i - b] = x[i] * r2;
      pdf[i - b] = T(-0.5) * x[i] * x[i];
    }
    erf_inplace(cdf, e - b);
    exp_inplace(pdf, e - b);
    for (std::size_t i = b; i < e; ++i)
      dx[i] = dy[i] * (T(0.5) * (T(1) + cdf[i - b]) + x[i] * pdf[i - b] * norm);
  }
}

int max_threads() { return omp_get_max_threads(); }
void set_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

#define MSPT_INSTANTIATE(T)                                                                                          \
  template void matmul<T>(Exec, std::span<const T>, std::span<const T>, std::span<T>, std::size_t, std::size_t,      \
                          std::size_t);                                                                              \
  template void matmul_tn<T>(Exec, std::span<const T>, std::span<const T>, std::span<T>, std::size_t, std::size_t,   \
                             std::size_t);                                                                           \
  template void matmul_nt<T>(Exec, std::span<const T>, std::span<const T>, std::span<T>, std::size_t, std::size_t,   \
                             std::size_t);                                                                           \
  template void softmax_rows<T>(Exec, std::span<const T>, std::span<T>, std::size_t, std::size_t);                   \
  template void layer_norm<T>(Exec, std::span<const T>, std::span<const T>, std::span<const T>, T, std::span<T>,     \
                              std::span<T>, std::span<T>, std::size_t, std::size_t);                                 \
  template void layer_norm_backward<T>(Exec, std::span<const T>, std::span<const T>, std::span<const T>,             \
                                       std::span<const T>, std::span<const T>, std::span<T>, std::span<T>,           \
                                       std::span<T>, std::size_t, std::size_t);                                      \
  template void gelu<T>(Exec, std::span<const T>, std::span<T>);                                                     \
  template void gelu_backward<T>(Exec, std::span<const T>, std::span<const T>, std::span<T>);                        \
  template T gelu_scalar<T>(T);                                                                                      \
  template T gelu_derivative<T>(T);                                                                                  \
  template void gemm_tile<T>(const T*, std::size_t, std::size_t, const T*, std::size_t, T*, std::size_t, std::size_t, \
                             std::size_t, std::size_t);

MSPT_INSTANTIATE(float)
MSPT_INSTANTIATE(double)

#undef MSPT_INSTANTIATE

}  // namespace mspt::kernels
