// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mspt/autodiff.hpp"

#include <cmath>
#include <string>

#include "mspt/error.hpp"

namespace mspt::ad {

using kernels::Exec;

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.numel(); ++i) buf[i] += g[i];
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return make_result(std::move(value), false);
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  return make_result(std::move(value), true);
}

template <typename T>
void Tape<T>::backward(const Var<T>& root) {
  if (root->value.numel() != 1)
    throw DimensionError("backward without a seed needs a scalar root, got " + shape_string(root->value.shape()));
  backward(root, Tensor<T>(root->value.shape(), T(1)));
}

template <typename T>
void Tape<T>::backward(const Var<T>& root, const Tensor<T>& seed) {
  if (consumed_) throw StateError("tape already replayed; run a new forward pass");
  if (adjoints_.empty()) throw StateError("backward called before any recorded forward pass");
  require_same_shape(root->value.shape(), seed.shape(), "backward seed");
  root->accumulate(seed);
  for (auto it = adjoints_.rbegin(); it != adjoints_.rend(); ++it) (*it)();
  adjoints_.clear();
  consumed_ = true;
}

namespace {

template <typename T>
bool has_grad(const Var<T>& v) {
  return v->grad.shape() == v->value.shape() && !v->grad.empty();
}

}  // namespace

template <typename T>
Var<T> matmul(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  const auto& A = a->value;
  const auto& B = b->value;
  require_rank2(A.shape(), "matmul lhs");
  require_rank2(B.shape(), "matmul rhs");
  if (A.cols() != B.rows())
    throw DimensionError("matmul: inner dimensions differ " + shape_string(A.shape()) + " * " +
                         shape_string(B.shape()));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<T> C(m, n);
  const Exec ex = exec_of(tape);
  kernels::matmul<T>(ex, A.span(), B.span(), C.span(), m, k, n);
  const bool rec = tracking(tape, {&a, &b});
  auto out = make_result(std::move(C), rec);
  if (rec) {
    tape->record([a, b, out, m, k, n, ex] {
      if (!has_grad(out)) return;
      const auto& dC = out->grad;
      if (a->requires_grad) {
        Tensor<T> dA(m, k);
        kernels::matmul_nt<T>(ex, dC.span(), b->value.span(), dA.span(), m, n, k);
        a->accumulate(dA);
      }
      if (b->requires_grad) {
        Tensor<T> dB(k, n);
        kernels::matmul_tn<T>(ex, a->value.span(), dC.span(), dB.span(), m, k, n);
        b->accumulate(dB);
      }
    });
  }
  return out;
}

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value.shape(), b->value.shape(), "add");
  Tensor<T> y = a->value;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b->value[i];
  const bool rec = tracking(tape, {&a, &b});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    tape->record([a, b, out] {
      if (!has_grad(out)) return;
      if (a->requires_grad) a->accumulate(out->grad);
      if (b->requires_grad) b->accumulate(out->grad);
    });
  }
  return out;
}

template <typename T>
Var<T> mul(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value.shape(), b->value.shape(), "mul");
  Tensor<T> y = a->value;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b->value[i];
  const bool rec = tracking(tape, {&a, &b});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    tape->record([a, b, out] {
      if (!has_grad(out)) return;
      const auto& g = out->grad;
      if (a->requires_grad) {
        auto& ga = a->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * b->value[i];
      }
      if (b->requires_grad) {
        auto& gb = b->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * a->value[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> scale(Tape<T>* tape, const Var<T>& a, T factor) {
  Tensor<T> y = a->value;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= factor;
  const bool rec = tracking(tape, {&a});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    tape->record([a, out, factor] {
      if (!has_grad(out)) return;
      auto& ga = a->grad_buffer();
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += factor * out->grad[i];
    });
  }
  return out;
}

template <typename T>
Var<T> add_bias(Tape<T>* tape, const Var<T>& x, const Var<T>& bias) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  if (bias->value.numel() != n)
    throw DimensionError("add_bias: bias " + shape_string(bias->value.shape()) + " vs input " +
                         shape_string(x->value.shape()));
  Tensor<T> y = x->value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y(i, j) += bias->value[j];
  const bool rec = tracking(tape, {&x, &bias});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    tape->record([x, bias, out, m, n] {
      if (!has_grad(out)) return;
      if (x->requires_grad) x->accumulate(out->grad);
      if (bias->requires_grad) {
        auto& gb = bias->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += out->grad(i, j);
      }
    });
  }
  return out;
}

template <typename T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  auto y = matmul(tape, x, w);
  return b ? add_bias(tape, y, b) : y;
}

template <typename T>
Var<T> softmax_rows(Tape<T>* tape, const Var<T>& x) {
  if (!x->value.all_finite()) throw NumericError("softmax_rows: non-finite input");
  const std::size_t m = x->value.rows(), n = x->value.cols();
  Tensor<T> y(x->value.shape());
  const Exec ex = exec_of(tape);
  kernels::softmax_rows<T>(ex, x->value.span(), y.span(), m, n);
  const bool rec = tracking(tape, {&x});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    tape->record([x, out, m, n] {
      if (!has_grad(out)) return;
      auto& gx = x->grad_buffer();
      const auto& p = out->value;
      const auto& g = out->grad;
      for (std::size_t i = 0; i < m; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * p(i, j);
        for (std::size_t j = 0; j < n; ++j) gx(i, j) += p(i, j) * (g(i, j) - dot);
      }
    });
  }
  return out;
}

template <typename T>
Var<T> layer_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  if (n == 0) throw DimensionError("layer_norm: empty rows");
  if (gain->value.numel() != n || bias->value.numel() != n)
    throw DimensionError("layer_norm: affine parameters do not match row length " + std::to_string(n));
  Tensor<T> y(x->value.shape());
  Tensor<T> mean(Shape{m}), rstd(Shape{m});
  const Exec ex = exec_of(tape);
  kernels::layer_norm<T>(ex, x->value.span(), gain->value.span(), bias->value.span(), eps, y.span(), mean.span(),
                         rstd.span(), m, n);
  const bool rec = tracking(tape, {&x, &gain, &bias});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    tape->record([x, gain, bias, out, mean = std::move(mean), rstd = std::move(rstd), m, n, ex] {
      if (!has_grad(out)) return;
      Tensor<T> dx(x->value.shape()), dg(Shape{n}), db(Shape{n});
      kernels::layer_norm_backward<T>(ex, x->value.span(), gain->value.span(), mean.span(), rstd.span(),
                                      out->grad.span(), dx.span(), dg.span(), db.span(), m, n);
      if (x->requires_grad) x->accumulate(dx);
      if (gain->requires_grad) gain->accumulate(dg);
      if (bias->requires_grad) bias->accumulate(db);
    });
  }
  return out;
}

template <typename T>
Var<T> gelu(Tape<T>* tape, const Var<T>& x) {
  Tensor<T> y(x->value.shape());
  const Exec ex = exec_of(tape);
  kernels::gelu<T>(ex, x->value.span(), y.span());
  const bool rec = tracking(tape, {&x});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    tape->record([x, out, ex] {
      if (!has_grad(out)) return;
      Tensor<T> dx(x->value.shape());
      kernels::gelu_backward<T>(ex, x->value.span(), out->grad.span(), dx.span());
      x->accumulate(dx);
    });
  }
  return out;
}

template <typename T>
Var<T> sum(Tape<T>* tape, const Var<T>& x) {
  T s = 0;
  for (std::size_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
  const bool rec = tracking(tape, {&x});
  auto out = make_result(Tensor<T>::scalar(s), rec);
  if (rec) {
    tape->record([x, out] {
      if (!has_grad(out)) return;
      const T g = out->grad[0];
      auto& gx = x->grad_buffer();
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Var<T> gather_rows(Tape<T>* tape, const Var<T>& x, std::span<const std::int64_t> index) {
  const std::size_t n = x->value.cols();
  const auto src_rows = static_cast<std::int64_t>(x->value.rows());
  Tensor<T> y(index.size(), n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto s = index[i];
    if (s < 0) continue;
    if (s >= src_rows) throw DimensionError("gather_rows: index " + std::to_string(s) + " out of range");
    std::copy_n(x->value.data() + s * n, n, y.data() + i * n);
  }
  const bool rec = tracking(tape, {&x});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    std::vector<std::int64_t> idx(index.begin(), index.end());
    tape->record([x, out, idx = std::move(idx), n] {
      if (!has_grad(out)) return;
      auto& gx = x->grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        kernels::axpy(T(1), out->grad.data() + i * n, gx.data() + idx[i] * n, n);
      }
    });
  }
  return out;
}

template <typename T>
Var<T> mask_rows(Tape<T>* tape, const Var<T>& x, std::span<const std::uint8_t> mask) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  if (mask.size() != m) throw DimensionError("mask_rows: mask length does not match row count");
  Tensor<T> y = x->value;
  for (std::size_t i = 0; i < m; ++i)
    if (!mask[i]) std::fill_n(y.data() + i * n, n, T(0));
  const bool rec = tracking(tape, {&x});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    std::vector<std::uint8_t> keep(mask.begin(), mask.end());
    tape->record([x, out, keep = std::move(keep), n] {
      if (!has_grad(out)) return;
      auto& gx = x->grad_buffer();
      for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) kernels::axpy(T(1), out->grad.data() + i * n, gx.data() + i * n, n);
    });
  }
  return out;
}

template <typename T>
Var<T> slice_rows(Tape<T>* tape, const Var<T>& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x->value.rows()) throw DimensionError("slice_rows: range out of bounds");
  const std::size_t n = x->value.cols();
  Tensor<T> y(end - begin, n);
  std::copy_n(x->value.data() + begin * n, (end - begin) * n, y.data());
  const bool rec = tracking(tape, {&x});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    tape->record([x, out, begin, end, n] {
      if (!has_grad(out)) return;
      auto& gx = x->grad_buffer();
      kernels::axpy(T(1), out->grad.data(), gx.data() + begin * n, (end - begin) * n);
    });
  }
  return out;
}

template <typename T>
Var<T> concat_rows(Tape<T>* tape, const Var<T>& top, const Var<T>& bottom) {
  const std::size_t n = top->value.cols();
  if (bottom->value.cols() != n)
    throw DimensionError("concat_rows: " + shape_string(top->value.shape()) + " vs " +
                         shape_string(bottom->value.shape()));
  const std::size_t mt = top->value.rows(), mb = bottom->value.rows();
  Tensor<T> y(mt + mb, n);
  std::copy_n(top->value.data(), mt * n, y.data());
  std::copy_n(bottom->value.data(), mb * n, y.data() + mt * n);
  const bool rec = tracking(tape, {&top, &bottom});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    tape->record([top, bottom, out, mt, mb, n] {
      if (!has_grad(out)) return;
      if (top->requires_grad) kernels::axpy(T(1), out->grad.data(), top->grad_buffer().data(), mt * n);
      if (bottom->requires_grad)
        kernels::axpy(T(1), out->grad.data() + mt * n, bottom->grad_buffer().data(), mb * n);
    });
  }
  return out;
}

template <typename T>
Var<T> affine_cols(Tape<T>* tape, const Var<T>& x, std::span<const T> scale, std::span<const T> shift) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  if (scale.size() != n || shift.size() != n) throw DimensionError("affine_cols: coefficient length mismatch");
  Tensor<T> y = x->value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y(i, j) = y(i, j) * scale[j] + shift[j];
  const bool rec = tracking(tape, {&x});
  auto out = make_result(std::move(y), rec);
  if (rec) {
    std::vector<T> s(scale.begin(), scale.end());
    tape->record([x, out, s = std::move(s), m, n] {
      if (!has_grad(out)) return;
      auto& gx = x->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx(i, j) += out->grad(i, j) * s[j];
    });
  }
  return out;
}

#define MSPT_INSTANTIATE(T)                                                                                        \
  template struct Node<T>;                                                                                         \
  template class Tape<T>;                                                                                          \
  template Var<T> constant<T>(Tensor<T>);                                                                          \
  template Var<T> parameter<T>(Tensor<T>);                                                                         \
  template Var<T> matmul<T>(Tape<T>*, const Var<T>&, const Var<T>&);                                               \
  template Var<T> add<T>(Tape<T>*, const Var<T>&, const Var<T>&);                                                  \
  template Var<T> mul<T>(Tape<T>*, const Var<T>&, const Var<T>&);                                                  \
  template Var<T> scale<T>(Tape<T>*, const Var<T>&, T);                                                            \
  template Var<T> add_bias<T>(Tape<T>*, const Var<T>&, const Var<T>&);                                             \
  template Var<T> linear<T>(Tape<T>*, const Var<T>&, const Var<T>&, const Var<T>&);                                \
  template Var<T> softmax_rows<T>(Tape<T>*, const Var<T>&);                                                        \
  template Var<T> layer_norm<T>(Tape<T>*, const Var<T>&, const Var<T>&, const Var<T>&, T);                         \
  template Var<T> gelu<T>(Tape<T>*, const Var<T>&);                                                                \
  template Var<T> sum<T>(Tape<T>*, const Var<T>&);                                                                 \
  template Var<T> gather_rows<T>(Tape<T>*, const Var<T>&, std::span<const std::int64_t>);                          \
  template Var<T> mask_rows<T>(Tape<T>*, const Var<T>&, std::span<const std::uint8_t>);                            \
  template Var<T> slice_rows<T>(Tape<T>*, const Var<T>&, std::size_t, std::size_t);                                \
  template Var<T> concat_rows<T>(Tape<T>*, const Var<T>&, const Var<T>&);                                          \
  template Var<T> affine_cols<T>(Tape<T>*, const Var<T>&, std::span<const T>, std::span<const T>);

MSPT_INSTANTIATE(float)
MSPT_INSTANTIATE(double)

#undef MSPT_INSTANTIATE

}  // namespace mspt::ad
