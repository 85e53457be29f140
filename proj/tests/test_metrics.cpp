// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mspt/data.hpp"
#include "mspt/error.hpp"
#include "mspt/random.hpp"
#include "mspt/metrics.hpp"

using namespace mspt;
using namespace mspt::metrics;

namespace {

double rl2(std::vector<double> u, std::vector<double> v) {
  return relative_l2<double>(std::span<const double>(u), std::span<const double>(v)).value;
}

// Pearson correlation of average ranks, computed with an O(M^2) rank count.
double spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ranks = [](const std::vector<double>& x) {
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      double less = 0, equal = 0;
      for (double y : x) {
        less += y < x[i];
        equal += y == x[i];
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += ra[i] / n, mb += rb[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(RelativeL2, ClosedForms) {
  EXPECT_EQ(rl2({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_NEAR(rl2({1, -2, 3}, {2, -4, 6}), 1.0, 1e-15);
  EXPECT_NEAR(rl2({3, 4}, {0, 0}), 1.0, 1e-15);
  EXPECT_NEAR(rl2({1, 0}, {0, 1}), std::sqrt(2.0), 1e-15);
}

TEST(RelativeL2, ZeroReferenceIsFlagged) {
  const std::vector<double> z{0, 0}, p{3e-12, 4e-12};
  const auto r = relative_l2<double>(std::span<const double>(z), std::span<const double>(p));
  EXPECT_TRUE(r.zero_norm);
  EXPECT_NEAR(r.value, 5.0, 1e-9);
  EXPECT_TRUE(std::isfinite(r.value));
}

TEST(RelativeL2, ShapeMismatchThrows) {
  EXPECT_THROW(relative_l2(Tensor<double>(3, 1), Tensor<double>(1, 3)), DimensionError);
}

TEST(Spearman, KnownValues) {
  EXPECT_NEAR(spearman_rho(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{2, 1, 4, 3, 5}), 0.8, 1e-12);
  EXPECT_NEAR(spearman_rho(std::vector<double>{1, 2, 3}, std::vector<double>{10, 20, 30}), 1.0, 1e-12);
  EXPECT_NEAR(spearman_rho(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), -1.0, 1e-12);
}

TEST(Spearman, MatchesRankOracleWithTies) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> a(15), b(15);
    for (std::size_t i = 0; i < 15; ++i) {
      a[i] = static_cast<double>(rng.below(6));
      b[i] = rng.normal();
    }
    EXPECT_NEAR(spearman_rho(a, b), spearman_oracle(a, b), 1e-12);
  }
}

TEST(Spearman, MonotoneInvarianceAndSign) {
  Rng rng(5);
  std::vector<double> a(30), b(30), fb(30), nb(30);
  for (std::size_t i = 0; i < 30; ++i) {
    a[i] = rng.normal();
    b[i] = a[i] + 0.5 * rng.normal();
    fb[i] = std::exp(3 * b[i]) + 7;
    nb[i] = -2 * b[i];
  }
  const double rho = spearman_rho(a, b);
  EXPECT_NEAR(spearman_rho(a, fb), rho, 1e-12);
  EXPECT_NEAR(spearman_rho(a, nb), -rho, 1e-12);
}

TEST(Spearman, RejectsBadInput) {
  EXPECT_THROW(spearman_rho(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), NumericError);
  EXPECT_THROW(spearman_rho(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), InputError);
  EXPECT_THROW(spearman_rho(std::vector<double>{1}, std::vector<double>{1}), InputError);
  EXPECT_THROW(spearman_rho(std::vector<double>{1, NAN}, std::vector<double>{1, 2}), InputError);
}

TEST(Midranks, Ties) {
  EXPECT_EQ(midranks(std::vector<double>{10, 20, 10, 30}), (std::vector<double>{1.5, 3, 1.5, 4}));
}

TEST(Report, GroupsMeanMedianAndCsv) {
  const auto vol = static_cast<std::uint8_t>(data::GroupTag::volume);
  const auto sur = static_cast<std::uint8_t>(data::GroupTag::surface);
  std::vector<SampleEval> evals;
  // Sample 0: error only on the surface point.
  evals.push_back({Tensor<double>::matrix({{3}, {4}}), Tensor<double>::matrix({{3}, {0}}), {vol, sur}, 1.0, 2.0});
  evals.push_back({Tensor<double>::matrix({{1}, {0}}), Tensor<double>::matrix({{0}, {1}}), {vol, vol}, 2.0, 3.0});
  evals.push_back({Tensor<double>::matrix({{2}}), Tensor<double>::matrix({{2}}), {vol}, 3.0, 1.0});
  const auto rep = make_report(evals);
  ASSERT_EQ(rep.rel_l2.size(), 3u);
  EXPECT_NEAR(rep.rel_l2[0], 0.8, 1e-15);
  EXPECT_EQ(rep.rel_l2_volume[0], 0.0);
  EXPECT_NEAR(rep.rel_l2_surface[0], 1.0, 1e-15);
  EXPECT_TRUE(std::isnan(rep.rel_l2_surface[1]));
  EXPECT_NEAR(rep.mean, (0.8 + std::sqrt(2.0)) / 3, 1e-15);
  EXPECT_NEAR(rep.median, 0.8, 1e-15);
  ASSERT_TRUE(rep.spearman.has_value());
  EXPECT_NEAR(*rep.spearman, -0.5, 1e-12);

  const auto path = std::filesystem::temp_directory_path() / "mspt_report.csv";
  write_report_csv(path, rep);
  std::ifstream f(path);
  std::string header, line;
  std::getline(f, header);
  EXPECT_EQ(header, "sample,rel_l2,rel_l2_volume,rel_l2_surface");
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  EXPECT_EQ(rows, 3 + 3);
}

TEST(Report, SingleSampleHasNoSpearman) {
  std::vector<SampleEval> one;
  one.push_back({Tensor<double>::matrix({{1}}), Tensor<double>::matrix({{2}}), {0}, 1.0, 2.0});
  const auto rep = make_report(one);
  EXPECT_FALSE(rep.spearman.has_value());
  EXPECT_EQ(rep.median, 1.0);
}
