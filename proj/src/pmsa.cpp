// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mspt/pmsa.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "mspt/error.hpp"

namespace mspt::pmsa {

using ad::Tape;
using ad::Var;
using kernels::Exec;
using Index = std::ptrdiff_t;

PoolingMode parse_pooling(const std::string& name) {
  if (name == "mean") return PoolingMode::mean;
  if (name == "max") return PoolingMode::max;
  if (name == "linear") return PoolingMode::linear;
  throw ConfigError("unknown pooling mode '" + name + "' (expected mean, max or linear)");
}

std::string to_string(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::mean:
      return "mean";
    case PoolingMode::max:
      return "max";
    case PoolingMode::linear:
      return "linear";
  }
  return "mean";
}

void validate_pooling(const PoolingConfig& cfg, std::size_t patch_size) {
  if (cfg.q == 0) return;
  if (cfg.mode != PoolingMode::linear && patch_size % cfg.q != 0)
    throw ConfigError("pooling: patch size L=" + std::to_string(patch_size) + " is not divisible by Q=" +
                      std::to_string(cfg.q));
}

namespace {

// Pools one patch. `argmax` (Q*F entries) receives the winning row per
// output element for max pooling, -1 when the sub-patch is fully padded.
template <typename T>
void pool_rows(const T* x, const std::uint8_t* mask, std::size_t l, std::size_t f, const PoolingConfig& cfg,
               const T* w, T* out, T* weight, std::int32_t* argmax) {
  const std::size_t nq = cfg.q;
  std::fill_n(out, nq * f, T(0));
  if (cfg.mode == PoolingMode::linear) {
    std::size_t valid = 0;
    for (std::size_t j = 0; j < l; ++j) valid += mask[j] ? 1 : 0;
    for (std::size_t q = 0; q < nq; ++q) {
      weight[q] = static_cast<T>(valid) / static_cast<T>(l);
      for (std::size_t j = 0; j < l; ++j)
        if (mask[j]) kernels::axpy(w[j * nq + q], x + j * f, out + q * f, f);
    }
    MacCounter::add(static_cast<std::uint64_t>(l) * nq * f);
    return;
  }
  const std::size_t sub = l / nq;
  for (std::size_t q = 0; q < nq; ++q) {
    T* o = out + q * f;
    std::size_t count = 0;
    if (cfg.mode == PoolingMode::mean) {
      for (std::size_t j = q * sub; j < (q + 1) * sub; ++j) {
        if (!mask[j]) continue;
        kernels::axpy(T(1), x + j * f, o, f);
        ++count;
      }
      if (count) {
        const T inv = T(1) / static_cast<T>(count);
        for (std::size_t c = 0; c < f; ++c) o[c] *= inv;
      }
    } else {
      std::int32_t* am = argmax + q * f;
      std::fill_n(am, f, -1);
      for (std::size_t j = q * sub; j < (q + 1) * sub; ++j) {
        if (!mask[j]) continue;
        for (std::size_t c = 0; c < f; ++c) {
          if (am[c] < 0 || x[j * f + c] > o[c]) {
            o[c] = x[j * f + c];
            am[c] = static_cast<std::int32_t>(j);
          }
        }
        ++count;
      }
    }
    weight[q] = static_cast<T>(count) / static_cast<T>(sub);
  }
}

template <typename T>
const Tensor<T>* checked_pool_weight(const PoolingConfig& cfg, const Tensor<T>* w, std::size_t l) {
  if (cfg.mode != PoolingMode::linear) return nullptr;
  if (!w) throw ConfigError("linear pooling needs a W_pool matrix");
  if (w->rank() != 2 || w->rows() != l || w->cols() != cfg.q)
    throw DimensionError("linear pooling: W_pool is " + shape_string(w->shape()) + ", expected [" +
                         std::to_string(l) + "x" + std::to_string(cfg.q) + "]");
  return w;
}

}  // namespace

template <typename T>
Tensor<T> pool_patch(const Tensor<T>& patch, std::span<const std::uint8_t> mask, const PoolingConfig& cfg,
                     const Tensor<T>* w_pool, std::vector<T>* weight) {
  require_rank2(patch.shape(), "pool_patch");
  const std::size_t l = patch.rows(), f = patch.cols();
  if (mask.size() != l) throw DimensionError("pool_patch: mask length differs from patch rows");
  if (cfg.q == 0) throw ConfigError("pool_patch: Q must be at least 1");
  validate_pooling(cfg, l);
  const Tensor<T>* w = checked_pool_weight(cfg, w_pool, l);
  Tensor<T> out(cfg.q, f);
  std::vector<T> wt(cfg.q);
  std::vector<std::int32_t> argmax(cfg.q * f);
  pool_rows(patch.data(), mask.data(), l, f, cfg, w ? w->data() : nullptr, out.data(), wt.data(), argmax.data());
  if (weight) *weight = std::move(wt);
  return out;
}

template <typename T>
SupernodeSet<T> build_global_context(Tape<T>* tape, const Var<T>& h, const PatchLayout& layout,
                                     const PoolingConfig& cfg, const Var<T>& w_pool) {
  const auto& x = h->value;
  require_rank2(x.shape(), "build_global_context");
  if (x.rows() != layout.padded())
    throw DimensionError("build_global_context: " + std::to_string(x.rows()) + " rows for a layout of K*L=" +
                         std::to_string(layout.padded()));
  if (cfg.q == 0) throw ConfigError("build_global_context: Q must be at least 1");
  validate_pooling(cfg, layout.l);
  const Tensor<T>* w = checked_pool_weight(cfg, w_pool ? &w_pool->value : nullptr, layout.l);

  const std::size_t nk = layout.k, l = layout.l, nq = cfg.q, f = x.cols();
  Tensor<T> s(nk * nq, f);
  std::vector<T> weight(nk * nq);
  std::vector<std::int32_t> argmax(cfg.mode == PoolingMode::max ? nk * nq * f : 0);
  const Exec ex = ad::exec_of(tape);
#pragma omp parallel for schedule(static) if (ex == Exec::parallel)
  for (Index p = 0; p < static_cast<Index>(nk); ++p) {
    pool_rows(x.data() + p * l * f, layout.valid.data() + p * l, l, f, cfg, w ? w->data() : nullptr,
              s.data() + p * nq * f, weight.data() + p * nq, argmax.empty() ? nullptr : argmax.data() + p * nq * f);
  }

  Var<T> wp = cfg.mode == PoolingMode::linear ? w_pool : nullptr;
  const bool rec = wp ? ad::tracking(tape, {&h, &wp}) : ad::tracking(tape, {&h});
  SupernodeSet<T> result{ad::make_result(std::move(s), rec), weight};
  if (rec) {
    auto out = result.s;
    tape->record([h, wp, out, valid = layout.valid, cfg, argmax = std::move(argmax), nk, l, nq, f] {
      if (out->grad.empty()) return;
      const auto& ds = out->grad;
      if (cfg.mode == PoolingMode::linear) {
        const auto& wv = wp->value;
        if (h->requires_grad) {
          auto& gx = h->grad_buffer();
          for (std::size_t p = 0; p < nk; ++p)
            for (std::size_t j = 0; j < l; ++j) {
              if (!valid[p * l + j]) continue;
              for (std::size_t q = 0; q < nq; ++q)
                kernels::axpy(wv(j, q), ds.data() + (p * nq + q) * f, gx.data() + (p * l + j) * f, f);
            }
        }
        if (wp->requires_grad) {
          auto& gw = wp->grad_buffer();
          for (std::size_t p = 0; p < nk; ++p)
            for (std::size_t j = 0; j < l; ++j) {
              if (!valid[p * l + j]) continue;
              const T* xr = h->value.data() + (p * l + j) * f;
              for (std::size_t q = 0; q < nq; ++q) {
                const T* dr = ds.data() + (p * nq + q) * f;
                T acc = 0;
                for (std::size_t c = 0; c < f; ++c) acc += xr[c] * dr[c];
                gw(j, q) += acc;
              }
            }
        }
        return;
      }
      if (!h->requires_grad) return;
      auto& gx = h->grad_buffer();
      const std::size_t sub = l / nq;
      for (std::size_t p = 0; p < nk; ++p)
        for (std::size_t q = 0; q < nq; ++q) {
          const T* dr = ds.data() + (p * nq + q) * f;
          if (cfg.mode == PoolingMode::mean) {
            std::size_t count = 0;
            for (std::size_t j = q * sub; j < (q + 1) * sub; ++j) count += valid[p * l + j] ? 1 : 0;
            if (!count) continue;
            const T inv = T(1) / static_cast<T>(count);
            for (std::size_t j = q * sub; j < (q + 1) * sub; ++j)
              if (valid[p * l + j]) kernels::axpy(inv, dr, gx.data() + (p * l + j) * f, f);
          } else {
            const std::int32_t* am = argmax.data() + (p * nq + q) * f;
            for (std::size_t c = 0; c < f; ++c)
              if (am[c] >= 0) gx(p * l + static_cast<std::size_t>(am[c]), c) += dr[c];
          }
        }
    });
  }
  return result;
}

namespace {

template <typename T>
struct AttentionGeometry {
  std::size_t k, l, nq, kq, f, heads, d, rows_q, n_keys, n_pad;
  bool supernode_rows;
  T scale;

  // Row of the projected token matrix holding query row i of patch p.
  std::size_t query_row(std::size_t p, std::size_t i) const {
    return i < l ? p * l + i : n_pad + p * nq + (i - l);
  }
  // Row of the projected token matrix holding key j of patch p.
  std::size_t key_row(std::size_t p, std::size_t j) const { return j < l ? p * l + j : n_pad + (j - l); }
  // Output row for query row i of patch p.
  std::size_t out_row(std::size_t p, std::size_t i) const { return query_row(p, i); }
};

// Per-patch, per-head scratch laid out for unit-stride inner loops.
template <typename T>
struct HeadScratch {
  std::vector<T> qh;  // rows_q x d
  std::vector<T> kt;  // d x n_keys
  std::vector<T> vh;  // n_keys x d
  std::vector<T> s;   // rows_q x n_keys

  explicit HeadScratch(const AttentionGeometry<T>& g)
      : qh(g.rows_q * g.d), kt(g.d * g.n_keys), vh(g.n_keys * g.d), s(g.rows_q * g.n_keys) {}
};

template <typename T>
void load_head(const AttentionGeometry<T>& g, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
               const std::vector<T>& global_kt, const std::vector<T>& global_v, std::size_t p, std::size_t h,
               HeadScratch<T>& sc) {
  const std::size_t d = g.d, f = g.f, col = h * d;
  for (std::size_t i = 0; i < g.rows_q; ++i)
    std::copy_n(q.data() + g.query_row(p, i) * f + col, d, sc.qh.data() + i * d);
  for (std::size_t j = 0; j < g.l; ++j) {
    const T* kr = k.data() + (p * g.l + j) * f + col;
    for (std::size_t c = 0; c < d; ++c) sc.kt[c * g.n_keys + j] = kr[c];
    std::copy_n(v.data() + (p * g.l + j) * f + col, d, sc.vh.data() + j * d);
  }
  if (g.kq) {
    const T* gkt = global_kt.data() + h * d * g.kq;
    for (std::size_t c = 0; c < d; ++c) std::copy_n(gkt + c * g.kq, g.kq, sc.kt.data() + c * g.n_keys + g.l);
    std::copy_n(global_v.data() + h * g.kq * d, g.kq * d, sc.vh.data() + g.l * d);
  }
}

template <typename T>
bool query_active(const AttentionGeometry<T>& g, const PatchLayout& layout, std::span<const T> sn_weight,
                  std::size_t p, std::size_t i) {
  return i < g.l ? layout.valid[p * g.l + i] != 0 : sn_weight[p * g.nq + (i - g.l)] > T(0);
}

}  // namespace

template <typename T>
Var<T> patch_attention(Tape<T>* tape, const Var<T>& q, const Var<T>& k, const Var<T>& v, const PatchLayout& layout,
                       std::size_t supernodes_per_patch, std::span<const T> supernode_weight, std::size_t heads,
                       bool supernode_rows) {
  AttentionGeometry<T> g{};
  g.k = layout.k;
  g.l = layout.l;
  g.nq = supernodes_per_patch;
  g.kq = g.k * g.nq;
  g.n_pad = layout.padded();
  g.f = q->value.cols();
  g.heads = heads;
  if (heads == 0 || g.f % heads != 0)
    throw ConfigError("patch_attention: width F=" + std::to_string(g.f) + " is not divisible by heads=" +
                      std::to_string(heads));
  g.d = g.f / heads;
  g.supernode_rows = supernode_rows && g.kq > 0;
  g.rows_q = g.l + (g.supernode_rows ? g.nq : 0);
  g.n_keys = g.l + g.kq;
  g.scale = T(1) / std::sqrt(static_cast<T>(g.d));
  const std::size_t total_rows = g.n_pad + g.kq;
  for (const auto* t : {&q->value, &k->value, &v->value})
    if (t->rank() != 2 || t->rows() != total_rows || t->cols() != g.f)
      throw DimensionError("patch_attention: token matrix " + shape_string(t->shape()) + ", expected [" +
                           std::to_string(total_rows) + "x" + std::to_string(g.f) + "]");
  if (supernode_weight.size() != g.kq) throw DimensionError("patch_attention: supernode weight count mismatch");

  const auto& Qv = q->value;
  const auto& Kv = k->value;
  const auto& Vv = v->value;

  // Supernode keys/values are patch independent: transpose once per head.
  std::vector<T> global_kt(heads * g.d * g.kq), global_v(heads * g.kq * g.d);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t m = 0; m < g.kq; ++m)
      for (std::size_t c = 0; c < g.d; ++c) {
        global_kt[(h * g.d + c) * g.kq + m] = Kv(g.n_pad + m, h * g.d + c);
        global_v[(h * g.kq + m) * g.d + c] = Vv(g.n_pad + m, h * g.d + c);
      }
  std::vector<std::uint8_t> key_valid_global(g.kq);
  for (std::size_t m = 0; m < g.kq; ++m) key_valid_global[m] = supernode_weight[m] > T(0);

  const bool rec = ad::tracking(tape, {&q, &k, &v});
  const std::size_t out_rows = g.n_pad + (g.supernode_rows ? g.kq : 0);
  Tensor<T> out(out_rows, g.f);
  // Attention probabilities, kept only for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(rec ? g.k * heads * g.rows_q * g.n_keys : 0);
  MacCounter::add(static_cast<std::uint64_t>(g.k) * g.rows_q * g.n_keys * g.f * 2);
  const Exec ex = ad::exec_of(tape);
  const T neg_inf = -std::numeric_limits<T>::infinity();

#pragma omp parallel if (ex == Exec::parallel)
  {
    HeadScratch<T> sc(g);
    std::vector<T> oh(g.rows_q * g.d);
    std::vector<std::uint8_t> key_ok(g.n_keys);
#pragma omp for schedule(static)
    for (Index pi = 0; pi < static_cast<Index>(g.k); ++pi) {
      const auto p = static_cast<std::size_t>(pi);
      for (std::size_t j = 0; j < g.n_keys; ++j)
        key_ok[j] = j < g.l ? layout.valid[p * g.l + j] : key_valid_global[j - g.l];
      for (std::size_t h = 0; h < heads; ++h) {
        load_head(g, Qv, Kv, Vv, global_kt, global_v, p, h, sc);
        kernels::gemm_tile(sc.qh.data(), g.d, std::size_t{1}, sc.kt.data(), g.n_keys, sc.s.data(), g.n_keys,
                           g.rows_q, g.d, g.n_keys);
        for (std::size_t i = 0; i < g.rows_q; ++i) {
          T* srow = sc.s.data() + i * g.n_keys;
          if (!query_active(g, layout, supernode_weight, p, i)) {
            std::fill_n(srow, g.n_keys, T(0));
            continue;
          }
          T mx = neg_inf;
          for (std::size_t j = 0; j < g.n_keys; ++j) {
            srow[j] = key_ok[j] ? srow[j] * g.scale : neg_inf;
            mx = std::max(mx, srow[j]);
          }
          for (std::size_t j = 0; j < g.n_keys; ++j) srow[j] -= mx;
          kernels::exp_inplace(srow, g.n_keys);
          T sum = 0;
          for (std::size_t j = 0; j < g.n_keys; ++j) {
            if (!key_ok[j]) srow[j] = T(0);
            sum += srow[j];
          }
          const T inv = sum > T(0) ? T(1) / sum : T(0);
          for (std::size_t j = 0; j < g.n_keys; ++j) srow[j] *= inv;
        }
        kernels::gemm_tile(sc.s.data(), g.n_keys, std::size_t{1}, sc.vh.data(), g.d, oh.data(), g.d, g.rows_q,
                           g.n_keys, g.d);
        for (std::size_t i = 0; i < g.rows_q; ++i)
          std::copy_n(oh.data() + i * g.d, g.d, out.data() + g.out_row(p, i) * g.f + h * g.d);
        if (rec)
          std::copy(sc.s.begin(), sc.s.end(), probs->begin() + static_cast<Index>((p * heads + h) * g.rows_q * g.n_keys));
      }
    }
  }

  auto result = ad::make_result(std::move(out), rec);
  if (rec) {
    tape->record([q, k, v, result, probs, g, ex, global_kt = std::move(global_kt),
                  global_v = std::move(global_v)] {
      if (result->grad.empty()) return;
      const auto& dO = result->grad;
      Tensor<T> dq(q->value.shape()), dk(k->value.shape()), dv(v->value.shape());
      // Per-patch partial gradients for the shared supernode keys/values.
      std::vector<T> part_k(g.k * g.kq * g.f), part_v(g.k * g.kq * g.f);
      MacCounter::add(static_cast<std::uint64_t>(g.k) * g.rows_q * g.n_keys * g.f * 4);

#pragma omp parallel if (ex == Exec::parallel)
      {
        HeadScratch<T> sc(g);
        std::vector<T> dov(g.rows_q * g.d), ds(g.rows_q * g.n_keys), dkh(g.n_keys * g.d), dvh(g.n_keys * g.d),
            vt(g.d * g.n_keys), kh(g.n_keys * g.d), dqh(g.rows_q * g.d);
#pragma omp for schedule(static)
        for (Index pi = 0; pi < static_cast<Index>(g.k); ++pi) {
          const auto p = static_cast<std::size_t>(pi);
          for (std::size_t h = 0; h < g.heads; ++h) {
            load_head(g, q->value, k->value, v->value, global_kt, global_v, p, h, sc);
            const T* P = probs->data() + (p * g.heads + h) * g.rows_q * g.n_keys;
            for (std::size_t i = 0; i < g.rows_q; ++i)
              std::copy_n(dO.data() + g.out_row(p, i) * g.f + h * g.d, g.d, dov.data() + i * g.d);
            for (std::size_t j = 0; j < g.n_keys; ++j)
              for (std::size_t c = 0; c < g.d; ++c) {
                vt[c * g.n_keys + j] = sc.vh[j * g.d + c];
                kh[j * g.d + c] = sc.kt[c * g.n_keys + j];
              }
            // dP = dO V^T, then the softmax adjoint row by row.
            kernels::gemm_tile(dov.data(), g.d, std::size_t{1}, vt.data(), g.n_keys, ds.data(), g.n_keys, g.rows_q,
                               g.d, g.n_keys);
            for (std::size_t i = 0; i < g.rows_q; ++i) {
              const T* prow = P + i * g.n_keys;
              T* dsrow = ds.data() + i * g.n_keys;
              T dot = 0;
              for (std::size_t j = 0; j < g.n_keys; ++j) dot += prow[j] * dsrow[j];
              for (std::size_t j = 0; j < g.n_keys; ++j) dsrow[j] = prow[j] * (dsrow[j] - dot) * g.scale;
            }
            // dV = P^T dO, dK = dS^T Q, dQ = dS K.
            kernels::gemm_tile(P, std::size_t{1}, g.n_keys, dov.data(), g.d, dvh.data(), g.d, g.n_keys, g.rows_q, g.d);
            kernels::gemm_tile(ds.data(), std::size_t{1}, g.n_keys, sc.qh.data(), g.d, dkh.data(), g.d, g.n_keys,
                               g.rows_q, g.d);
            kernels::gemm_tile(ds.data(), g.n_keys, std::size_t{1}, kh.data(), g.d, dqh.data(), g.d, g.rows_q,
                               g.n_keys, g.d);
            for (std::size_t i = 0; i < g.rows_q; ++i)
              std::copy_n(dqh.data() + i * g.d, g.d, dq.data() + g.query_row(p, i) * g.f + h * g.d);
            for (std::size_t j = 0; j < g.l; ++j) {
              std::copy_n(dkh.data() + j * g.d, g.d, dk.data() + (p * g.l + j) * g.f + h * g.d);
              std::copy_n(dvh.data() + j * g.d, g.d, dv.data() + (p * g.l + j) * g.f + h * g.d);
            }
            for (std::size_t m = 0; m < g.kq; ++m) {
              std::copy_n(dkh.data() + (g.l + m) * g.d, g.d, part_k.data() + (p * g.kq + m) * g.f + h * g.d);
              std::copy_n(dvh.data() + (g.l + m) * g.d, g.d, part_v.data() + (p * g.kq + m) * g.f + h * g.d);
            }
          }
        }
      }
      for (std::size_t p = 0; p < g.k; ++p)
        for (std::size_t m = 0; m < g.kq; ++m) {
          kernels::axpy(T(1), part_k.data() + (p * g.kq + m) * g.f, dk.data() + (g.n_pad + m) * g.f, g.f);
          kernels::axpy(T(1), part_v.data() + (p * g.kq + m) * g.f, dv.data() + (g.n_pad + m) * g.f, g.f);
        }
      if (q->requires_grad) q->accumulate(dq);
      if (k->requires_grad) k->accumulate(dk);
      if (v->requires_grad) v->accumulate(dv);
    });
  }
  return result;
}

template <typename T>
PmsaResult<T> pmsa_forward(Tape<T>* tape, const Var<T>& h, const PatchLayout& layout, const PoolingConfig& cfg,
                           const AttentionParams<T>& params, const Var<T>& w_pool, const Var<T>& carried,
                           const PmsaOptions& opts) {
  const auto& x = h->value;
  require_rank2(x.shape(), "pmsa_forward");
  const std::size_t f = params.width();
  if (x.cols() != f)
    throw ConfigError("pmsa_forward: features have width " + std::to_string(x.cols()) + ", parameters expect " +
                      std::to_string(f));
  if (x.rows() != layout.padded())
    throw ConfigError("pmsa_forward: " + std::to_string(x.rows()) + " rows but layout has K*L=" +
                      std::to_string(layout.padded()));
  for (const auto* w : {&params.w_q, &params.w_k, &params.w_v, &params.w_o})
    if ((*w)->value.rank() != 2 || (*w)->value.rows() != f || (*w)->value.cols() != f)
      throw ConfigError("pmsa_forward: projection " + shape_string((*w)->value.shape()) + " is not FxF");

  Var<T> tokens = h;
  std::vector<T> weight;
  if (cfg.q > 0) {
    auto ctx = build_global_context(tape, h, layout, cfg, w_pool);
    Var<T> s = ctx.s;
    if (carried) {
      require_same_shape(carried->value.shape(), s->value.shape(), "carried supernodes");
      s = ad::add(tape, s, carried);
    }
    weight = std::move(ctx.weight);
    tokens = ad::concat_rows(tape, h, s);
  }
  auto qz = ad::matmul(tape, tokens, params.w_q);
  auto kz = ad::matmul(tape, tokens, params.w_k);
  auto vz = ad::matmul(tape, tokens, params.w_v);
  const bool persistent = opts.persistent_supernodes && cfg.q > 0;
  auto o = patch_attention<T>(tape, qz, kz, vz, layout, cfg.q, weight, params.heads, persistent);
  auto projected = ad::matmul(tape, o, params.w_o);
  if (!persistent) return {projected, nullptr};
  const std::size_t n_pad = layout.padded();
  return {ad::slice_rows(tape, projected, 0, n_pad),
          ad::slice_rows(tape, projected, n_pad, projected->value.rows())};
}

std::uint64_t flop_count(std::uint64_t n, std::uint64_t k, std::uint64_t l, std::uint64_t q, std::uint64_t f,
                         std::uint64_t heads, PoolingMode mode, bool persistent) {
  if (n != k * l)
    throw ConfigError("flop_count: N=" + std::to_string(n) + " is not K*L=" + std::to_string(k * l));
  if (heads == 0 || f % heads != 0) throw ConfigError("flop_count: F must be divisible by the head count");
  const std::uint64_t kq = k * q;
  std::uint64_t total = 3 * (n + kq) * f * f + n * f * f + 2 * k * l * (l + kq) * f;
  if (q > 0 && mode == PoolingMode::linear) total += n * q * f;
  if (persistent && q > 0) total += kq * f * f + 2 * k * q * (l + kq) * f;
  return total;
}

#define MSPT_INSTANTIATE(T)                                                                                         \
  template Tensor<T> pool_patch<T>(const Tensor<T>&, std::span<const std::uint8_t>, const PoolingConfig&,          \
                                   const Tensor<T>*, std::vector<T>*);                                              \
  template SupernodeSet<T> build_global_context<T>(Tape<T>*, const Var<T>&, const PatchLayout&,                     \
                                                   const PoolingConfig&, const Var<T>&);                            \
  template Var<T> patch_attention<T>(Tape<T>*, const Var<T>&, const Var<T>&, const Var<T>&, const PatchLayout&,     \
                                     std::size_t, std::span<const T>, std::size_t, bool);                           \
  template PmsaResult<T> pmsa_forward<T>(Tape<T>*, const Var<T>&, const PatchLayout&, const PoolingConfig&,         \
                                         const AttentionParams<T>&, const Var<T>&, const Var<T>&,                   \
                                         const PmsaOptions&);

MSPT_INSTANTIATE(float)
MSPT_INSTANTIATE(double)

#undef MSPT_INSTANTIATE

}  // namespace mspt::pmsa
