// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

namespace mspt::kernels {

// Each kernel exists in two flavours sharing the same per-row body:
// `serial` is the reference, `parallel` splits rows across OpenMP threads.
// Every output element is produced by exactly one thread with a fixed
// accumulation order, so both flavours are bitwise identical.
enum class Exec { serial, parallel };

// c[m x n] = a[m x k] * b[k x n]
template <typename T>
void matmul(Exec exec, std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
            std::size_t n);

// c[k x n] = a[m x k]^T * b[m x n]
template <typename T>
void matmul_tn(Exec exec, std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
               std::size_t n);

// c[m x n] = a[m x k] * b[n x k]^T
template <typename T>
void matmul_nt(Exec exec, std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
               std::size_t n);

template <typename T>
void softmax_rows(Exec exec, std::span<const T> x, std::span<T> y, std::size_t m, std::size_t n);

// Writes per-row mean and reciprocal standard deviation for the backward pass.
template <typename T>
void layer_norm(Exec exec, std::span<const T> x, std::span<const T> gain, std::span<const T> bias, T eps,
                std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t m, std::size_t n);

template <typename T>
void layer_norm_backward(Exec exec, std::span<const T> x, std::span<const T> gain, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx, std::span<T> dgain,
                         std::span<T> dbias, std::size_t m, std::size_t n);

template <typename T>
void gelu(Exec exec, std::span<const T> x, std::span<T> y);

template <typename T>
void gelu_backward(Exec exec, std::span<const T> x, std::span<const T> dy, std::span<T> dx);

template <typename T>
T gelu_scalar(T x);
template <typename T>
T gelu_derivative(T x);

// Uncounted, single-threaded C = A * B for use inside other kernels, with
// A(i, p) = a[i * rs + p * cs] and row strides ldb/ldc for B and C. Each
// output element sums p = 0..k-1 in ascending order.
template <typename T>
void gemm_tile(const T* a, std::size_t rs, std::size_t cs, const T* b, std::size_t ldb, T* c, std::size_t ldc,
               std::size_t m, std::size_t k, std::size_t n);

// Elementwise, in place. The float versions are vectorised (Eigen) and agree
// with the libm results to a few ulp.
template <typename T>
void exp_inplace(T* x, std::size_t n);
template <typename T>
void erf_inplace(T* x, std::size_t n);

// y = a * x + y over a contiguous row; the innermost loop of every contraction.
template <typename T>
inline void axpy(T a, const T* __restrict x, T* __restrict y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += a * x[j];
}

int max_threads();
void set_threads(int n);

}  // namespace mspt::kernels
