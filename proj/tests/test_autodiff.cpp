// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "mspt/autodiff.hpp"
#include "mspt/error.hpp"
#include "mspt/training.hpp"
#include "oracles.hpp"

using namespace mspt;
using ad::Tape;
using ad::Var;

namespace {

// Contracts an op's output with a fixed random tensor so every output element
// reaches the scalar loss with a distinct weight.
double check(const std::function<Var<double>(Tape<double>*)>& op,
             const std::vector<std::pair<std::string, Var<double>>>& params, std::uint64_t seed = 0) {
  Rng rng(seed + 99);
  const auto probe = op(nullptr)->value;
  auto weights = ad::constant(Tensor<double>(probe.shape()));
  for (std::size_t i = 0; i < probe.numel(); ++i) weights->value[i] = rng.uniform(-1, 1);
  const auto rep = training::gradcheck(
      [&](Tape<double>* t) { return ad::sum(t, ad::mul(t, op(t), weights)); }, params, 1e-5, 1e-6);
  return rep.max_rel_error;
}

Var<double> rand_param(Rng& rng, std::size_t r, std::size_t c) { return ad::parameter(oracle::random_matrix(rng, r, c)); }

}  // namespace

TEST(Autodiff, MatmulAndLinear) {
  Rng rng(1);
  auto a = rand_param(rng, 4, 5), b = rand_param(rng, 5, 3), bias = ad::parameter(Tensor<double>({3}, {0.1, -0.2, 0.3}));
  EXPECT_LT(check([&](Tape<double>* t) { return ad::matmul(t, a, b); }, {{"a", a}, {"b", b}}), 1e-8);
  EXPECT_LT(check([&](Tape<double>* t) { return ad::linear(t, a, b, bias); }, {{"a", a}, {"b", b}, {"bias", bias}}),
            1e-8);
}

TEST(Autodiff, ElementwiseOps) {
  Rng rng(2);
  auto x = rand_param(rng, 3, 4), y = rand_param(rng, 3, 4);
  EXPECT_LT(check([&](Tape<double>* t) { return ad::add(t, x, y); }, {{"x", x}, {"y", y}}), 1e-8);
  EXPECT_LT(check([&](Tape<double>* t) { return ad::mul(t, x, y); }, {{"x", x}, {"y", y}}), 1e-8);
  EXPECT_LT(check([&](Tape<double>* t) { return ad::scale(t, x, 2.5); }, {{"x", x}}), 1e-8);
  EXPECT_LT(check([&](Tape<double>* t) { return ad::gelu(t, x); }, {{"x", x}}), 1e-8);
  EXPECT_LT(check([&](Tape<double>* t) { return ad::softmax_rows(t, x); }, {{"x", x}}), 1e-8);
  const std::vector<double> sc{1.5, -2.0, 0.5, 3.0}, sh{0.0, 1.0, -1.0, 2.0};
  EXPECT_LT(check([&](Tape<double>* t) { return ad::affine_cols<double>(t, x, sc, sh); }, {{"x", x}}), 1e-8);
}

TEST(Autodiff, LayerNorm) {
  Rng rng(3);
  auto x = rand_param(rng, 5, 6);
  auto g = ad::parameter(oracle::random_matrix(rng, 1, 6).reshaped({6}));
  auto b = ad::parameter(oracle::random_matrix(rng, 1, 6).reshaped({6}));
  EXPECT_LT(check([&](Tape<double>* t) { return ad::layer_norm(t, x, g, b); }, {{"x", x}, {"g", g}, {"b", b}}), 1e-7);
}

TEST(Autodiff, RowOps) {
  Rng rng(4);
  auto x = rand_param(rng, 5, 3), y = rand_param(rng, 2, 3);
  const std::vector<std::int64_t> idx{4, -1, 0, 0, 2};
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0};
  EXPECT_LT(check([&](Tape<double>* t) { return ad::gather_rows<double>(t, x, idx); }, {{"x", x}}), 1e-8);
  EXPECT_LT(check([&](Tape<double>* t) { return ad::mask_rows<double>(t, x, mask); }, {{"x", x}}), 1e-8);
  EXPECT_LT(check([&](Tape<double>* t) { return ad::slice_rows(t, x, 1, 4); }, {{"x", x}}), 1e-8);
  EXPECT_LT(check([&](Tape<double>* t) { return ad::concat_rows(t, x, y); }, {{"x", x}, {"y", y}}), 1e-8);
}

TEST(Autodiff, GatherZeroFillsNegativeIndices) {
  auto x = ad::constant(Tensor<double>::matrix({{1, 2}, {3, 4}}));
  const std::vector<std::int64_t> idx{1, -1};
  const auto y = ad::gather_rows<double>(nullptr, x, idx)->value;
  EXPECT_EQ(y(0, 1), 4.0);
  EXPECT_EQ(y(1, 0), 0.0);
}

TEST(Autodiff, TapeMisuseIsReported) {
  Tape<double> empty;
  auto p = ad::parameter(Tensor<double>::scalar(1.0));
  EXPECT_THROW(empty.backward(p), StateError);

  Tape<double> tape;
  auto loss = ad::scale(&tape, p, 3.0);
  tape.backward(loss);
  EXPECT_EQ(p->grad[0], 3.0);
  EXPECT_THROW(tape.backward(loss), StateError);

  Tape<double> t2;
  auto v = ad::scale(&t2, ad::parameter(Tensor<double>(2, 2, 1.0)), 2.0);
  EXPECT_THROW(t2.backward(v), DimensionError);
}

TEST(Autodiff, GradientsAccumulateAcrossPasses) {
  auto p = ad::parameter(Tensor<double>::scalar(2.0));
  for (int i = 0; i < 3; ++i) {
    Tape<double> tape;
    tape.backward(ad::mul(&tape, p, p));
  }
  EXPECT_DOUBLE_EQ(p->grad[0], 12.0);
  p->zero_grad();
  EXPECT_TRUE(p->grad.empty());
}

TEST(Autodiff, NullTapeRecordsNothing) {
  auto p = ad::parameter(Tensor<double>(2, 2, 1.0));
  auto y = ad::gelu<double>(nullptr, p);
  EXPECT_FALSE(y->requires_grad);
}
