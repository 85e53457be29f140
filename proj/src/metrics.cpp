// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mspt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "mspt/data.hpp"
#include "mspt/error.hpp"

namespace mspt::metrics {

template <typename T>
RelativeL2 relative_l2(std::span<const T> u, std::span<const T> u_hat) {
  if (u.size() != u_hat.size())
    throw DimensionError("relative_l2: sizes differ (" + std::to_string(u.size()) + " vs " +
                         std::to_string(u_hat.size()) + ")");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = static_cast<double>(u_hat[i]) - static_cast<double>(u[i]);
    num += d * d;
    den += static_cast<double>(u[i]) * static_cast<double>(u[i]);
  }
  RelativeL2 r;
  r.zero_norm = den == 0.0;
  r.value = std::sqrt(num) / (r.zero_norm ? kZeroNormEps : std::sqrt(den));
  return r;
}

template RelativeL2 relative_l2<float>(std::span<const float>, std::span<const float>);
template RelativeL2 relative_l2<double>(std::span<const double>, std::span<const double>);

std::vector<double> midranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = r;
    i = j + 1;
  }
  return rank;
}

double spearman_rho(std::span<const double> t, std::span<const double> t_hat) {
  if (t.size() != t_hat.size()) throw InputError("spearman_rho: inputs differ in length");
  if (t.size() < 2) throw InputError("spearman_rho needs at least two values");
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i]) || !std::isfinite(t_hat[i])) throw InputError("spearman_rho: non-finite input");
  const auto a = midranks(t), b = midranks(t_hat);
  const double mean = 0.5 * static_cast<double>(t.size() + 1);  // same for any midranking
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - mean) * (b[i] - mean);
    saa += (a[i] - mean) * (a[i] - mean);
    sbb += (b[i] - mean) * (b[i] - mean);
  }
  if (saa == 0.0 || sbb == 0.0) throw NumericError("spearman_rho undefined for a constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

double group_rel_l2(const SampleEval& s, data::GroupTag tag) {
  const std::size_t c = s.target.cols();
  std::vector<double> u, uh;
  for (std::size_t i = 0; i < s.groups.size(); ++i) {
    if (s.groups[i] != static_cast<std::uint8_t>(tag)) continue;
    for (std::size_t j = 0; j < c; ++j) {
      u.push_back(s.target(i, j));
      uh.push_back(s.prediction(i, j));
    }
  }
  if (u.empty()) return std::numeric_limits<double>::quiet_NaN();
  return relative_l2<double>(u, uh).value;
}

}  // namespace

EvalReport make_report(const std::vector<SampleEval>& samples) {
  EvalReport rep;
  bool scalars = samples.size() >= 2;
  std::vector<double> st, sp;
  for (const auto& s : samples) {
    const auto r = relative_l2(s.target, s.prediction);
    rep.rel_l2.push_back(r.value);
    rep.zero_norm_samples += r.zero_norm;
    rep.rel_l2_volume.push_back(group_rel_l2(s, data::GroupTag::volume));
    rep.rel_l2_surface.push_back(group_rel_l2(s, data::GroupTag::surface));
    if (s.scalar_target && s.scalar_prediction) {
      st.push_back(*s.scalar_target);
      sp.push_back(*s.scalar_prediction);
    } else {
      scalars = false;
    }
  }
  if (!rep.rel_l2.empty()) {
    rep.mean = std::accumulate(rep.rel_l2.begin(), rep.rel_l2.end(), 0.0) / static_cast<double>(rep.rel_l2.size());
    auto sorted = rep.rel_l2;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    rep.median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  }
  if (scalars && st.size() >= 2) {
    try {
      rep.spearman = spearman_rho(st, sp);
    } catch (const NumericError&) {
    }
  }
  return rep;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write report " + path.string());
  const auto num = [](double v) {
    if (std::isnan(v)) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  out << "sample,rel_l2,rel_l2_volume,rel_l2_surface\n";
  for (std::size_t i = 0; i < report.rel_l2.size(); ++i)
    out << i << ',' << num(report.rel_l2[i]) << ',' << num(report.rel_l2_volume[i]) << ','
        << num(report.rel_l2_surface[i]) << '\n';
  out << "mean," << num(report.mean) << ",,\n";
  out << "median," << num(report.median) << ",,\n";
  out << "spearman," << (report.spearman ? num(*report.spearman) : std::string()) << ",,\n";
}

}  // namespace mspt::metrics
