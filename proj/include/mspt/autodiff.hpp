// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mspt/kernels.hpp"
#include "mspt/tensor.hpp"

namespace mspt::ad {

// A value in the computation. Learnable tensors are long-lived nodes with
// requires_grad set; their gradients accumulate across backward passes until
// the optimizer clears them.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;

  // Zero-initialised on first use.
  Tensor<T>& grad_buffer();
  void accumulate(const Tensor<T>& g);
  void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> value);
template <typename T>
Var<T> parameter(Tensor<T> value);

// Record/replay tape. Primitives push an adjoint closure when they run under a
// tape and any input requires a gradient; backward() replays the closures in
// exact reverse order. A null tape means forward-only evaluation: nothing is
// recorded and intermediates are released as soon as they go out of scope.
template <typename T>
class Tape {
 public:
  explicit Tape(kernels::Exec exec = kernels::Exec::parallel) : exec_(exec) {}

  void record(std::function<void()> adjoint) { adjoints_.push_back(std::move(adjoint)); }
  std::size_t size() const noexcept { return adjoints_.size(); }
  kernels::Exec exec() const noexcept { return exec_; }

  // Seeds d(root)/d(root) = 1; root must hold a single element.
  void backward(const Var<T>& root);
  void backward(const Var<T>& root, const Tensor<T>& seed);

 private:
  kernels::Exec exec_;
  std::vector<std::function<void()>> adjoints_;
  bool consumed_ = false;
};

// True when an op should record onto `tape`.
template <typename T>
bool tracking(const Tape<T>* tape, std::initializer_list<const Var<T>*> inputs) {
  if (!tape) return false;
  for (const auto* v : inputs)
    if ((*v)->requires_grad) return true;
  return false;
}

template <typename T>
inline kernels::Exec exec_of(const Tape<T>* tape) {
  return tape ? tape->exec() : kernels::Exec::parallel;
}

template <typename T>
Var<T> make_result(Tensor<T> value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

// --- primitives -----------------------------------------------------------

template <typename T>
Var<T> matmul(Tape<T>* tape, const Var<T>& a, const Var<T>& b);

// a + b, same shape.
template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b);

// Elementwise product, same shape.
template <typename T>
Var<T> mul(Tape<T>* tape, const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(Tape<T>* tape, const Var<T>& a, T factor);

// x[m x n] + bias[n] broadcast over rows.
template <typename T>
Var<T> add_bias(Tape<T>* tape, const Var<T>& x, const Var<T>& bias);

// x * w + b; b may be null.
template <typename T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <typename T>
Var<T> softmax_rows(Tape<T>* tape, const Var<T>& x);

template <typename T>
Var<T> layer_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));

template <typename T>
Var<T> gelu(Tape<T>* tape, const Var<T>& x);

// Sum of all elements, returned as a one-element tensor.
template <typename T>
Var<T> sum(Tape<T>* tape, const Var<T>& x);

// out.row(i) = x.row(index[i]), or zeros where index[i] < 0.
template <typename T>
Var<T> gather_rows(Tape<T>* tape, const Var<T>& x, std::span<const std::int64_t> index);

// Zeroes rows whose mask entry is false.
template <typename T>
Var<T> mask_rows(Tape<T>* tape, const Var<T>& x, std::span<const std::uint8_t> mask);

template <typename T>
Var<T> slice_rows(Tape<T>* tape, const Var<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Var<T> concat_rows(Tape<T>* tape, const Var<T>& top, const Var<T>& bottom);

// x * scale[c] + shift[c] per column with constant coefficients.
template <typename T>
Var<T> affine_cols(Tape<T>* tape, const Var<T>& x, std::span<const T> scale, std::span<const T> shift);

}  // namespace mspt::ad
