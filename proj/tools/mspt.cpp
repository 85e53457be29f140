// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

// mspt: dataset generation, training, evaluation, gradient checks and cost
// sweeps for the multi-scale patch transformer.
//
// Exit codes: 0 ok, 1 usage/configuration, 2 data or format, 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mspt/balltree.hpp"
#include "mspt/bench.hpp"
#include "mspt/data.hpp"
#include "mspt/error.hpp"
#include "mspt/kernels.hpp"
#include "mspt/memory.hpp"
#include "mspt/metrics.hpp"
#include "mspt/model.hpp"
#include "mspt/random.hpp"
#include "mspt/training.hpp"

namespace {

using nlohmann::json;
using namespace mspt;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Global {
  std::uint64_t seed = 0;
  std::string precision = "f32";
  int threads = 0;
};

void log_line(const std::string& msg) { std::cerr << "[mspt] " << msg << std::endl; }

void log_config(const std::string& command, const Global& g, json args) {
  args["command"] = command;
  args["seed"] = g.seed;
  args["precision"] = g.precision;
  args["threads"] = kernels::max_threads();
  log_line("config " + args.dump());
}

std::vector<std::size_t> parse_list(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError(std::string("--") + what + ": '" + item + "' is not a non-negative integer");
    }
  }
  if (out.empty()) throw ConfigError(std::string("--") + what + " needs at least one value");
  return out;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + " is not valid JSON: " + e.what());
  }
}

// --- partition ------------------------------------------------------------------

struct PartitionArgs {
  std::string data;
  std::size_t sample = 0;
  std::size_t points = 1024, dim = 2, k = 8, leaf_capacity = 0;
  std::string out;
};

int run_partition(const Global& g, const PartitionArgs& a) {
  Tensor<double> coords;
  json src;
  if (!a.data.empty()) {
    const auto ds = data::read_dataset(a.data);
    if (a.sample >= ds.size()) throw InputError("sample index out of range");
    coords = ds.samples[a.sample].coords.cast<double>();
    src = {{"data", a.data}, {"sample", a.sample}};
  } else {
    Rng rng(g.seed);
    coords = Tensor<double>(a.points, a.dim);
    for (std::size_t i = 0; i < coords.numel(); ++i) coords[i] = rng.uniform();
    src = {{"points", a.points}, {"dim", a.dim}};
  }
  log_config("partition", g, {{"source", src}, {"k", a.k}, {"leaf_capacity", a.leaf_capacity}});
  const std::size_t cap = a.leaf_capacity ? a.leaf_capacity : (coords.rows() + a.k - 1) / std::max<std::size_t>(a.k, 1);
  const auto layout = balltree::partition(coords, a.k, a.leaf_capacity);
  const auto tree = balltree::build_tree(coords, cap);
  json out{{"n", layout.n},
           {"k", layout.k},
           {"l", layout.l},
           {"padding", layout.padding()},
           {"tree_depth", tree.depth()},
           {"depth_bound", balltree::depth_bound(layout.n, cap)},
           {"perm", layout.perm}};
  if (a.out.empty()) {
    std::cout << out.dump() << '\n';
  } else {
    std::ofstream f(a.out);
    if (!f) throw FormatError("cannot write " + a.out);
    f << out.dump(2) << '\n';
  }
  return kOk;
}

// --- gen ----------------------------------------------------------------------------

struct GenArgs {
  std::string task;
  std::size_t samples = 0;
  std::string grid = "16x16";
  std::size_t points = 256;
  std::string out;
};

int run_gen(const Global& g, const GenArgs& a) {
  log_config("gen", g, {{"task", a.task}, {"n_samples", a.samples}, {"grid", a.grid}, {"points", a.points},
                        {"out", a.out}});
  data::Dataset ds;
  if (a.task == "darcy") {
    data::DarcyOptions o;
    const auto x = a.grid.find('x');
    if (x == std::string::npos) throw ConfigError("--grid expects HxW, got '" + a.grid + "'");
    const auto dims = parse_list(a.grid.substr(0, x) + "," + a.grid.substr(x + 1), "grid");
    o.h = dims[0];
    o.w = dims[1];
    o.samples = a.samples;
    o.seed = g.seed;
    ds = data::gen_darcy(o);
  } else {
    data::PointcloudOptions o;
    o.points = a.points;
    o.samples = a.samples;
    o.seed = g.seed;
    ds = data::gen_pointcloud(o);
  }
  data::write_dataset(a.out, ds);
  log_line("wrote " + std::to_string(ds.size()) + " samples to " + a.out);
  return kOk;
}

// --- train ------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out;
  bool quiet = false;
};

template <typename T>
int run_train(const Global& g, bool seed_given, const TrainArgs& a) {
  const json cfg = read_json(a.config);
  for (const auto& [key, _] : cfg.items())
    if (key != "model" && key != "train") throw ConfigError("train config: unknown top-level key '" + key + "'");
  const auto ds = data::read_dataset(a.data);
  auto mj = cfg.value("model", json::object());
  // Dataset widths fill in whatever the config leaves out.
  if (!mj.contains("coord_dim")) mj["coord_dim"] = ds.coord_dim;
  if (!mj.contains("field_dim")) mj["field_dim"] = ds.in_dim - mj.value("descriptor_dim", std::size_t{0});
  if (!mj.contains("out_dim")) mj["out_dim"] = ds.out_dim;
  const auto mcfg = model::ModelConfig::from_json(mj);
  auto tcfg = training::TrainConfig::from_json(cfg.value("train", json::object()));
  if (seed_given) tcfg.seed = g.seed;

  Global eff = g;
  eff.seed = tcfg.seed;
  log_config("train", eff, {{"model", mcfg.to_json()}, {"train", tcfg.to_json()}, {"data", a.data}, {"out", a.out}});
  training::TrainOptions opts;
  opts.out_dir = a.out;
  opts.log = log_line;
  opts.progress = !a.quiet;
  const auto r = training::train<T>(mcfg, tcfg, ds, opts);
  std::cout << json{{"best_val_rel_l2", r.best_val},
                    {"best_epoch", r.best_epoch},
                    {"final_val_rel_l2", r.history.back().val_rel_l2},
                    {"stagnation_warning", r.stagnation_warning}}
                   .dump()
            << '\n';
  return kOk;
}

// --- eval -------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, report;
};

template <typename T>
int run_eval(const Global& g, const EvalArgs& a) {
  log_config("eval", g, {{"checkpoint", a.checkpoint}, {"data", a.data}, {"report", a.report}});
  if (!std::filesystem::exists(a.checkpoint)) throw FormatError("checkpoint " + a.checkpoint + " does not exist");
  const auto ck = model::load_checkpoint<T>(a.checkpoint);
  const auto ds = data::read_dataset(a.data);
  std::vector<metrics::SampleEval> evals;
  for (const auto& s : ds.samples) {
    metrics::SampleEval e;
    e.target = s.targets.cast<double>();
    e.prediction = training::predict<T>(ck.config, ck.params, ck.norm, s).template cast<double>();
    e.groups = s.groups;
    // Per-sample scalar: spatial mean of the first output channel.
    double st = 0.0, sp = 0.0;
    for (std::size_t i = 0; i < s.points(); ++i) {
      st += e.target(i, 0);
      sp += e.prediction(i, 0);
    }
    e.scalar_target = st / static_cast<double>(s.points());
    e.scalar_prediction = sp / static_cast<double>(s.points());
    evals.push_back(std::move(e));
  }
  const auto rep = metrics::make_report(evals);
  if (!a.report.empty()) metrics::write_report_csv(a.report, rep);
  json summary{{"samples", rep.rel_l2.size()}, {"mean_rel_l2", rep.mean}, {"median_rel_l2", rep.median}};
  summary["spearman"] = rep.spearman ? json(*rep.spearman) : json(nullptr);
  if (rep.zero_norm_samples) {
    summary["zero_norm_samples"] = rep.zero_norm_samples;
    log_line("warning: " + std::to_string(rep.zero_norm_samples) + " samples have zero-norm targets");
  }
  std::cout << summary.dump() << '\n';
  return kOk;
}

// --- gradcheck ----------------------------------------------------------------------

struct GradcheckArgs {
  std::size_t points = 23;
  std::string config;
};

int run_gradcheck(const Global& g, const GradcheckArgs& a) {
  auto cfg = training::toy_config();
  if (!a.config.empty()) cfg = model::ModelConfig::from_json(read_json(a.config));
  if (a.points > 32) throw ConfigError("gradcheck runs on at most 32 points");
  Global eff = g;
  eff.precision = "f64";
  log_config("gradcheck", eff, {{"model", cfg.to_json()}, {"points", a.points}});
  const auto rep = training::model_gradcheck(cfg, g.seed, a.points);
  std::cout << rep.to_json().dump() << '\n';
  if (!rep.passed) {
    log_line("gradient check failed: worst " + rep.worst);
    return kNumeric;
  }
  return kOk;
}

// --- bench --------------------------------------------------------------------------

struct BenchArgs {
  std::string n = "4096", k = "32", q = "1", f = "64", heads = "4";
  std::string pooling = "mean";
  std::size_t reps = 5;
  double memory_cap_mb = 0.0;
  std::string csv;
};

int run_bench(const Global& g, const BenchArgs& a) {
  bench::SweepSpec s;
  s.n = parse_list(a.n, "n");
  s.k = parse_list(a.k, "k");
  s.q = parse_list(a.q, "q");
  s.f = parse_list(a.f, "f");
  s.heads = parse_list(a.heads, "heads");
  s.pooling = pmsa::parse_pooling(a.pooling);
  s.reps = a.reps;
  s.precision = g.precision == "f64" ? bench::Precision::f64 : bench::Precision::f32;
  s.memory_cap_bytes = static_cast<std::uint64_t>(a.memory_cap_mb * 1024.0 * 1024.0);
  s.seed = g.seed;
  log_config("bench", g, {{"n", s.n}, {"k", s.k}, {"q", s.q}, {"f", s.f}, {"heads", s.heads},
                          {"pooling", a.pooling}, {"reps", s.reps}, {"warmups", s.warmups},
                          {"memory_cap_bytes", s.memory_cap_bytes}, {"csv", a.csv},
                          {"note", "CPU timings; trends only"}});
  const auto rows = bench::run_sweep(s);
  if (!a.csv.empty()) {
    bench::append_csv(a.csv, rows);
  } else {
    const auto tmp = std::filesystem::temp_directory_path() / ("mspt-bench-" + std::to_string(::getpid()) + ".csv");
    bench::append_csv(tmp, rows);
    std::ifstream in(tmp);
    std::cout << in.rdbuf();
    std::filesystem::remove(tmp);
  }
  for (const auto& r : rows)
    if (r.macs_counted && r.macs_counted != r.flops_analytic)
      log_line("warning: analytic count differs from the instrumented count at N=" + std::to_string(r.n));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  retain_heap_memory();
  CLI::App app{"Multi-scale patch transformer toolkit", "mspt"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--seed", g.seed, "Random seed (default 0)");
  app.add_option("--precision", g.precision, "Floating point precision")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--threads", g.threads, "OpenMP threads (0: runtime default)")->check(CLI::NonNegativeNumber);

  PartitionArgs pa;
  auto* part = app.add_subcommand("partition", "Ball tree partition of a point cloud into patches");
  part->add_option("--data", pa.data, "Dataset directory (otherwise a random cloud is used)");
  part->add_option("--sample", pa.sample, "Sample index within --data");
  part->add_option("--points", pa.points, "Random cloud size");
  part->add_option("--dim", pa.dim, "Random cloud dimension");
  part->add_option("--k", pa.k, "Number of patches");
  part->add_option("--leaf-capacity", pa.leaf_capacity, "Ball tree leaf capacity (0: patch size)");
  part->add_option("--out", pa.out, "Write JSON here instead of stdout");

  GenArgs ga;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--task", ga.task, "darcy or pointcloud")->required()->check(CLI::IsMember({"darcy", "pointcloud"}));
  gen->add_option("--n-samples", ga.samples, "Number of samples")->required();
  gen->add_option("--grid", ga.grid, "Darcy grid HxW");
  gen->add_option("--points", ga.points, "Points per point cloud");
  gen->add_option("--out", ga.out, "Output directory")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model; writes metrics.csv, best.ckpt, last.ckpt");
  tr->add_option("--config", ta.config, "JSON file with \"model\" and \"train\" objects")->required();
  tr->add_option("--data", ta.data, "Dataset directory")->required();
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_flag("--quiet", ta.quiet, "No per-epoch progress lines");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--report", ea.report, "Per-sample CSV report");

  GradcheckArgs gca;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every model gradient (f64)");
  gc->add_option("--points", gca.points, "Instance size (at most 32)");
  gc->add_option("--config", gca.config, "Model config JSON (default: toy model)");

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "Forward-only cost sweep; appends CSV rows");
  be->add_option("--n", ba.n, "Comma separated point counts");
  be->add_option("--k", ba.k, "Comma separated patch counts");
  be->add_option("--q", ba.q, "Comma separated supernodes per patch");
  be->add_option("--f", ba.f, "Comma separated widths");
  be->add_option("--heads", ba.heads, "Comma separated head counts");
  be->add_option("--pooling", ba.pooling, "mean, max or linear");
  be->add_option("--reps", ba.reps, "Timed repetitions (at least 3)");
  be->add_option("--memory-cap-mb", ba.memory_cap_mb, "Skip configurations estimated above this size");
  be->add_option("--csv", ba.csv, "CSV file to append to (default: stdout)");

  if (argc <= 1) {
    std::cerr << app.help();
    return kUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (g.threads > 0) kernels::set_threads(g.threads);
  const bool f64 = g.precision == "f64";
  try {
    if (*part) return run_partition(g, pa);
    if (*gen) return run_gen(g, ga);
    if (*tr) return f64 ? run_train<double>(g, app.count("--seed") > 0, ta) : run_train<float>(g, app.count("--seed") > 0, ta);
    if (*ev) return f64 ? run_eval<double>(g, ea) : run_eval<float>(g, ea);
    if (*gc) return run_gradcheck(g, gca);
    if (*be) return run_bench(g, ba);
  } catch (const NumericError& e) {
    log_line(std::string("numeric error: ") + e.what());
    return kNumeric;
  } catch (const FormatError& e) {
    log_line(std::string("data error: ") + e.what());
    return kData;
  } catch (const InputError& e) {
    log_line(std::string("data error: ") + e.what());
    return kData;
  } catch (const DimensionError& e) {
    log_line(std::string("data error: ") + e.what());
    return kData;
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return kUsage;
  }
  return kUsage;
}
