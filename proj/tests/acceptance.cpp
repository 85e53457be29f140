// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Pass criterion numbers as arguments to run a subset.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "mspt/bench.hpp"
#include "mspt/data.hpp"
#include "mspt/error.hpp"
#include "mspt/memory.hpp"
#include "mspt/metrics.hpp"
#include "mspt/model.hpp"
#include "mspt/training.hpp"
#include "oracles.hpp"

using namespace mspt;
namespace fs = std::filesystem;
using pmsa::PoolingMode;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor<double> uniform(Rng& rng, std::size_t r, std::size_t c) { return oracle::random_matrix(rng, r, c); }

const PoolingMode kModes[] = {PoolingMode::mean, PoolingMode::max, PoolingMode::linear};

// 1 ---------------------------------------------------------------------------
Outcome oracle_equivalence() {
  Rng rng(1001);
  double worst = 0.0;
  std::set<std::string> covered;
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = std::size_t{1} << (t % 3), q = 1 + (t / 3) % 2, heads = std::size_t{1} << ((t / 6) % 3);
    const auto mode = kModes[(t / 18) % 3];
    std::size_t n = 0;
    do {
      n = k + rng.below(64 - k + 1);
    } while (mode != PoolingMode::linear && ((n + k - 1) / k) % q != 0);
    Tensor<double> coords = uniform(rng, n, 2);
    const auto layout = balltree::partition(coords, k);
    const std::size_t f = 8;
    const auto h = uniform(rng, layout.padded(), f);
    const auto wq = uniform(rng, f, f), wk = uniform(rng, f, f), wv = uniform(rng, f, f), wo = uniform(rng, f, f);
    const auto wp = uniform(rng, layout.l, q);
    const auto got = pmsa::pmsa_forward<double>(nullptr, ad::constant(h), layout, {mode, q},
                                                {ad::constant(wq), ad::constant(wk), ad::constant(wv),
                                                 ad::constant(wo), heads},
                                                ad::constant(wp))
                         .h->value;
    const auto want = oracle::pmsa(h, layout, q, mode, wq, wk, wv, wo, heads, &wp);
    worst = std::max(worst, oracle::max_abs_diff(got, want));
    covered.insert(std::to_string(k) + std::to_string(q) + std::to_string(heads) + pmsa::to_string(mode));
  }
  return {worst < 1e-10 && covered.size() == 54,
          "200 instances, " + std::to_string(covered.size()) + "/54 (K,Q,H,pooling) combos, max abs diff " + fmt(worst)};
}

// 2 ---------------------------------------------------------------------------
Outcome reduction_case() {
  Rng rng(1002);
  double worst = 0.0;
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 1 + rng.below(64), f = 8, heads = std::size_t{1} << (t % 3);
    const auto layout = balltree::partition(uniform(rng, n, 2), 1);
    const auto h = uniform(rng, n, f);
    const auto wq = uniform(rng, f, f), wk = uniform(rng, f, f), wv = uniform(rng, f, f), wo = uniform(rng, f, f);
    const auto got = pmsa::pmsa_forward<double>(nullptr, ad::constant(h), layout, {PoolingMode::mean, 0},
                                                {ad::constant(wq), ad::constant(wk), ad::constant(wv),
                                                 ad::constant(wo), heads})
                         .h->value;
    worst = std::max(worst, oracle::max_abs_diff(got, oracle::masked_mha(h, layout.valid, wq, wk, wv, wo, heads)));
  }
  return {worst < 1e-10, "30 instances against dense masked attention, max abs diff " + fmt(worst)};
}

// 3 ---------------------------------------------------------------------------
Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = training::model_gradcheck(training::toy_config(), 3, 23);
  const double secs = seconds_since(t0);
  return {rep.passed && rep.max_rel_error < 1e-5 && secs < 120,
          std::to_string(rep.entries.size()) + " parameter tensors, max rel err " + fmt(rep.max_rel_error) + " (" +
              rep.worst + "), " + fmt(secs) + " s"};
}

// 4 ---------------------------------------------------------------------------
Outcome balltree_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1004);
  std::string first;
  int bad = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = t < 10 ? 10000 : 1 + rng.below(10000), d = 2 + t % 2, cap = 1 + rng.below(128);
    Tensor<double> c(n, d);
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] = t % 3 == 0 ? rng.normal() : rng.uniform();
    const auto tree = balltree::build_tree(c, cap);
    auto msg = oracle::tree_violation(tree, c);
    if (!msg.empty()) {
      ++bad;
      if (first.empty()) first = "cloud " + std::to_string(t) + ": " + msg;
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 60,
          "100 clouds, " + std::to_string(bad) + " violations" + (first.empty() ? "" : " (" + first + ")") + ", " +
              fmt(secs) + " s"};
}

// 5 ---------------------------------------------------------------------------
Outcome padding_invariance() {
  Rng rng(1005);
  double worst64 = 0.0, worst32 = 0.0;
  int pairs = 0;
  model::ModelConfig cfg;
  cfg.blocks = 2;
  cfg.width = 16;
  cfg.heads = 2;
  const auto p64 = model::init_params<double>(cfg, 5);
  const auto p32 = model::init_params<float>(cfg, 5);
  const auto norm = model::Normalization::identity(3, 1);
  const auto check = [&](const Tensor<double>& raw, std::size_t ka, std::size_t kb) {
    Tensor<double> coords(raw.rows(), 2);
    for (std::size_t i = 0; i < raw.rows(); ++i) coords(i, 0) = raw(i, 0), coords(i, 1) = raw(i, 1);
    auto ca = cfg, cb = cfg;
    ca.patches = ka;
    cb.patches = kb;
    const auto la = model::make_layout(ca, coords, false), lb = model::make_layout(cb, coords, false);
    if (la.padding() == lb.padding()) return;
    ++pairs;
    worst64 = std::max(worst64, oracle::max_abs_diff(model::forward<double>(nullptr, ca, p64, norm, raw, la)->value,
                                                     model::forward<double>(nullptr, cb, p64, norm, raw, lb)->value));
    const auto rf = raw.cast<float>();
    worst32 = std::max(
        worst32,
        oracle::max_abs_diff(model::forward<float>(nullptr, ca, p32, norm, rf, la)->value.cast<double>(),
                             model::forward<float>(nullptr, cb, p32, norm, rf, lb)->value.cast<double>()));
  };
  for (int t = 0; t < 12; ++t) {
    const std::size_t n = 20 + rng.below(200);
    const auto raw = uniform(rng, n, 3);
    // Every K whose patch length matches that of some smaller K.
    std::map<std::size_t, std::size_t> first_k;
    for (std::size_t k = 1; k <= n / 2; ++k) {
      const std::size_t l = (n + k - 1) / k;
      if (auto it = first_k.find(l); it != first_k.end()) {
        if (rng.below(3) == 0) check(raw, it->second, k);
      } else {
        first_k[l] = k;
      }
    }
  }
  // A Darcy field through the same path: N = 256 with K = 16 and K = 17.
  const auto darcy = data::gen_darcy({16, 16, 1, 7});
  check(darcy.samples[0].features<double>(), 16, 17);
  return {pairs > 0 && worst64 < 1e-10 && worst32 < 1e-6,
          std::to_string(pairs) + " K pairs, max diff f64 " + fmt(worst64) + ", f32 " + fmt(worst32)};
}

// 6 ---------------------------------------------------------------------------
Outcome cost_model() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1006);
  int configs = 0, mismatches = 0;
  for (std::size_t n : {16u, 100u, 512u, 1000u, 4096u})
    for (std::size_t k : {1u, 2u, 4u, 8u, 32u})
      for (std::size_t q : {0u, 1u, 2u})
        for (auto mode : kModes) {
          if (k > n || (n >= 4096 && k < 8)) continue;
          const std::size_t l = (n + k - 1) / k, f = n >= 4096 ? 64 : 16, heads = 1 + (configs % 4 == 3 ? 3 : 0);
          if (mode != PoolingMode::linear && q > 0 && l % q != 0) continue;
          if (mode == PoolingMode::linear && q == 0) continue;
          for (bool persistent : {false, true}) {
            if (persistent && q == 0) continue;
            const auto layout = balltree::grid_passthrough_layout(k * l, k);
            auto h = ad::constant(uniform(rng, k * l, f));
            pmsa::AttentionParams<double> p{ad::constant(uniform(rng, f, f)), ad::constant(uniform(rng, f, f)),
                                            ad::constant(uniform(rng, f, f)), ad::constant(uniform(rng, f, f)), heads};
            auto w = ad::constant(uniform(rng, l, std::max<std::size_t>(q, 1)));
            auto carried = persistent ? ad::constant(uniform(rng, k * q, f)) : nullptr;
            MacCounter counter;
            pmsa::pmsa_forward<double>(nullptr, h, layout, {mode, q}, p, w, carried, pmsa::PmsaOptions{persistent});
            ++configs;
            if (counter.count() != pmsa::flop_count(k * l, k, l, q, f, heads, mode, persistent)) ++mismatches;
          }
        }

  std::vector<double> ms;
  for (std::size_t n : {4096u, 8192u, 16384u, 32768u}) {
    bench::SweepSpec s;
    s.n = {n};
    s.k = {n / 128};
    s.q = {1};
    s.f = {64};
    s.heads = {4};
    s.reps = 7;
    s.warmups = 2;
    s.count_macs_up_to = 0;
    ms.push_back(bench::run_sweep(s).at(0).ms_median);
  }
  bool ratios_ok = true;
  std::string ratios;
  for (std::size_t i = 1; i < ms.size(); ++i) {
    const double r = ms[i] / ms[i - 1];
    ratios_ok = ratios_ok && r >= 1.6 && r <= 2.8;
    ratios += (i > 1 ? "/" : "") + fmt(r);
  }

  std::vector<std::size_t> ks;
  for (std::size_t k = 1; k <= 16384; k *= 2) ks.push_back(k);
  const bool u_shape = bench::has_interior_minimum(bench::tradeoff_table(16384, ks, 1, 64, 4));
  const double secs = seconds_since(t0);
  return {mismatches == 0 && ratios_ok && u_shape && secs < 600,
          std::to_string(configs) + " configs counted, " + std::to_string(mismatches) + " mismatches; doubling ratios " +
              ratios + "; U-shaped cost over K: " + (u_shape ? "yes" : "no") + "; " + fmt(secs) + " s"};
}

// 7 ---------------------------------------------------------------------------
Outcome global_information_flow() {
  Rng rng(1007);
  int failures = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 24 + rng.below(40), k = 2 + rng.below(4);
    const auto raw = uniform(rng, n, 3);
    Tensor<double> coords(n, 2);
    for (std::size_t i = 0; i < n; ++i) coords(i, 0) = raw(i, 0), coords(i, 1) = raw(i, 1);
    model::ModelConfig cfg;
    cfg.blocks = 2;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.patches = k;
    cfg.pooling = kModes[t % 3];
    cfg.patch_size = (n + k - 1) / k;
    const auto layout = model::make_layout(cfg, coords, false);
    const auto norm = model::Normalization::identity(3, 1);
    // Which patch each original point sits in.
    std::vector<std::size_t> patch_of(n);
    for (std::size_t i = 0; i < n; ++i) patch_of[i] = static_cast<std::size_t>(layout.inverse[i]) / layout.l;
    const std::size_t victim = rng.below(n), j = patch_of[victim];
    auto bumped = raw;
    bumped(victim, 2) += 10.0;
    for (std::size_t q : {1u, 0u}) {
      auto c = cfg;
      c.supernodes = q;
      if (q == 0) c.pooling = PoolingMode::mean;
      const auto p = model::init_params<double>(c, 100 + static_cast<std::uint64_t>(t));
      const auto a = model::forward<double>(nullptr, c, p, norm, raw, layout)->value;
      const auto b = model::forward<double>(nullptr, c, p, norm, bumped, layout)->value;
      std::vector<bool> changed(k, false);
      for (std::size_t i = 0; i < n; ++i)
        if (a(i, 0) != b(i, 0)) changed[patch_of[i]] = true;
      for (std::size_t other = 0; other < k; ++other) {
        if (other == j) continue;
        const bool has_points = std::count(patch_of.begin(), patch_of.end(), other) > 0;
        if (!has_points) continue;
        if (changed[other] != (q > 0)) ++failures;
      }
    }
  }
  return {failures == 0, "20 instances, " + std::to_string(failures) + " patches with the wrong behaviour"};
}

// 8 ---------------------------------------------------------------------------
// Independent dense solve of the stored coefficient for a few samples.
// Returns {max residual of the dense solution, max |u_dense - target| / max|u|}.
std::pair<double, double> dense_check(const data::Dataset& ds, std::size_t count) {
  double residual = 0.0, mismatch = 0.0;
  for (std::size_t m = 0; m < count; ++m) {
    const auto& s = ds.samples[m];
    const std::size_t h = s.grid_h, w = s.grid_w;
    std::vector<int> id(h * w, -1);
    int dof = 0;
    for (std::size_t y = 1; y + 1 < h; ++y)
      for (std::size_t x = 1; x + 1 < w; ++x) id[y * w + x] = dof++;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dof, dof);
    const double ix = std::pow(static_cast<double>(w - 1), 2), iy = std::pow(static_cast<double>(h - 1), 2);
    for (std::size_t y = 1; y + 1 < h; ++y)
      for (std::size_t x = 1; x + 1 < w; ++x) {
        const std::size_t c = y * w + x;
        const std::pair<std::size_t, double> nb[] = {{c - 1, ix}, {c + 1, ix}, {c - w, iy}, {c + w, iy}};
        for (const auto& [o, scale] : nb) {
          const double face = 0.5 * (s.in_fields[c] + s.in_fields[o]) * scale;
          a(id[c], id[c]) += face;
          if (id[o] >= 0) a(id[c], id[o]) -= face;
        }
      }
    const Eigen::VectorXd u = a.ldlt().solve(Eigen::VectorXd::Ones(dof));
    const Eigen::VectorXd r = a * u - Eigen::VectorXd::Ones(dof);
    residual = std::max(residual, r.cwiseAbs().maxCoeff());
    for (std::size_t i = 0; i < h * w; ++i) {
      const double ref = id[i] >= 0 ? u[id[i]] : 0.0;
      mismatch = std::max(mismatch, std::abs(ref - s.targets[i]) / u.cwiseAbs().maxCoeff());
    }
  }
  return {residual, mismatch};
}

Outcome desk_scale_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = data::gen_darcy({16, 16, 450, 2026});
  const double residual = ds.provenance.at("max_residual").get<double>();
  const auto [dense_residual, dense_mismatch] = dense_check(ds, 5);

  model::ModelConfig mc;
  mc.blocks = 4;
  mc.width = 64;
  mc.heads = 4;
  mc.patches = 4;
  mc.supernodes = 1;
  mc.coord_dim = 2;
  mc.field_dim = 1;
  mc.out_dim = 1;
  training::TrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 4;
  tc.train_count = 400;

  std::map<PoolingMode, std::vector<double>> final_val, best_val;
  for (auto mode : {PoolingMode::mean, PoolingMode::max})
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      mc.pooling = mode;
      tc.seed = seed;
      const auto res = training::train<float>(mc, tc, ds);
      final_val[mode].push_back(res.history.back().val_rel_l2);
      best_val[mode].push_back(res.best_val);
      std::fprintf(stderr, "  [8] %s seed %llu: final val %.4f, best %.4f (%.0f s elapsed)\n",
                   pmsa::to_string(mode).c_str(), static_cast<unsigned long long>(seed), final_val[mode].back(),
                   res.best_val, seconds_since(t0));
    }
  const auto avg = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double worst_mean_best = *std::max_element(best_val[PoolingMode::mean].begin(), best_val[PoolingMode::mean].end());
  const double mean_final = avg(final_val[PoolingMode::mean]), max_final = avg(final_val[PoolingMode::max]);
  const double secs = seconds_since(t0);
  const bool data_ok = residual < 1e-8 && dense_residual < 1e-8 && dense_mismatch < 1e-6;
  const bool threshold_ok = worst_mean_best < 0.15, ordering_ok = mean_final <= max_final;
  return {data_ok && threshold_ok && ordering_ok && secs < 1800,
          std::string("data ") + (data_ok ? "ok" : "BAD") + ", threshold " + (threshold_ok ? "met" : "MISSED") +
              ", mean <= max " + (ordering_ok ? "holds" : "VIOLATED") + "; " +
          "residual " + fmt(residual) + ", dense re-solve residual " + fmt(dense_residual) + " and relative mismatch " +
              fmt(dense_mismatch) + "; mean pooling best val (worst seed) " +
              fmt(worst_mean_best) + " after " + std::to_string(tc.epochs) + " epochs; final val mean " +
              fmt(mean_final) + " vs max " + fmt(max_final) + "; " + fmt(secs) + " s"};
}

// 9 ---------------------------------------------------------------------------
Outcome metric_correctness() {
  using metrics::relative_l2;
  using metrics::spearman_rho;
  const auto rl2 = [](std::vector<double> u, std::vector<double> v) {
    return relative_l2<double>(std::span<const double>(u), std::span<const double>(v)).value;
  };
  bool ok = rl2({1, 2, 3}, {1, 2, 3}) == 0.0;
  ok = ok && std::abs(rl2({1, -2}, {2, -4}) - 1.0) < 1e-15;
  ok = ok && std::abs(rl2({3, 4}, {0, 0}) - 1.0) < 1e-15;
  ok = ok && std::abs(rl2({1, 0}, {0, 1}) - std::sqrt(2.0)) < 1e-15;
  // 1 - 6 * sum d^2 / (M (M^2 - 1)) with d = (0, 1, 1, 0): 1 - 12/60.
  ok = ok && std::abs(spearman_rho(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}) - 0.8) < 1e-12;
  ok = ok && std::abs(spearman_rho(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) + 1.0) < 1e-12;
  bool threw = false;
  try {
    spearman_rho(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3});
  } catch (const NumericError&) {
    threw = true;
  }
  ok = ok && threw;

  Rng rng(1009);
  int broken = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 3 + rng.below(40);
    std::vector<double> a(m), b(m), tb(m);
    for (std::size_t i = 0; i < m; ++i) {
      a[i] = rng.normal();
      b[i] = a[i] + rng.normal();
      tb[i] = t % 2 ? std::exp(b[i]) : std::pow(b[i], 3) * 5 + 2;
    }
    if (std::abs(spearman_rho(a, b) - spearman_rho(a, tb)) > 1e-12) ++broken;
  }
  return {ok && broken == 0, std::string("closed forms ") + (ok ? "ok" : "wrong") + ", monotone trials broken " +
                                 std::to_string(broken) + "/100"};
}

// 10 --------------------------------------------------------------------------
int cli(const std::string& args) {
  const int status = std::system((std::string(MSPT_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// metrics.csv with the last (wall-clock) column removed.
std::string metric_columns(const fs::path& p) {
  std::ifstream f(p);
  std::string out;
  for (std::string line; std::getline(f, line);) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

Outcome reproducibility() {
  const auto work = fs::temp_directory_path() / "mspt_acceptance_repro";
  fs::remove_all(work);
  fs::create_directories(work);
  if (cli("--seed 5 gen --task darcy --n-samples 12 --grid 8x8 --out " + (work / "data").string()) != 0)
    return {false, "dataset generation failed"};
  std::ofstream(work / "cfg.json")
      << R"({"model":{"blocks":2,"width":16,"heads":2,"patches":4},"train":{"epochs":4,"batch_size":2,"train_count":10}})";
  for (const char* run : {"a", "b"})
    if (cli("--seed 9 train --quiet --config " + (work / "cfg.json").string() + " --data " + (work / "data").string() +
            " --out " + (work / run).string()) != 0)
      return {false, std::string("training run ") + run + " failed"};
  const bool log_same = metric_columns(work / "a" / "metrics.csv") == metric_columns(work / "b" / "metrics.csv");
  const bool best_same = bytes_of(work / "a" / "best.ckpt") == bytes_of(work / "b" / "best.ckpt");
  const bool last_same = bytes_of(work / "a" / "last.ckpt") == bytes_of(work / "b" / "last.ckpt");
  const bool nonempty = !bytes_of(work / "a" / "last.ckpt").empty();
  return {log_same && best_same && last_same && nonempty,
          std::string("metric log ") + (log_same ? "identical" : "differs") + ", best.ckpt " +
              (best_same ? "identical" : "differs") + ", last.ckpt " + (last_same ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"PMSA oracle equivalence", oracle_equivalence},
      {"single patch without supernodes equals masked attention", reduction_case},
      {"full-model gradient check", gradient_check},
      {"ball tree invariants", balltree_invariants},
      {"padding invariance", padding_invariance},
      {"cost model", cost_model},
      {"global information flow", global_information_flow},
      {"desk-scale Darcy learning", desk_scale_learning},
      {"metric correctness", metric_correctness},
      {"training reproducibility", reproducibility},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2d. %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
