// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mspt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "mspt/error.hpp"
#include "mspt/metrics.hpp"
#include "mspt/random.hpp"

namespace mspt::training {

using ad::Tape;
using ad::Var;
using nlohmann::json;

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adamw") return OptimizerKind::adamw;
  if (name == "lion") return OptimizerKind::lion;
  throw ConfigError("unknown optimizer '" + name + "' (expected adamw or lion)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adamw ? "adamw" : "lion"; }

void TrainConfig::validate() const {
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1)");
  if (!(final_lr > 0.0 && peak_lr > final_lr)) throw ConfigError("need peak_lr > final_lr > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  if (loss.rel_l2_weight < 0 || loss.grad_weight < 0 || loss.volume_weight < 0 || loss.surface_weight < 0)
    throw ConfigError("loss weights must be non-negative");
}

json TrainConfig::to_json() const {
  return json{{"optimizer", to_string(optimizer)},
              {"peak_lr", peak_lr},
              {"final_lr", final_lr},
              {"weight_decay", weight_decay},
              {"warmup_fraction", warmup_fraction},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"loss",
               {{"rel_l2_weight", loss.rel_l2_weight},
                {"grad_weight", loss.grad_weight},
                {"volume_weight", loss.volume_weight},
                {"surface_weight", loss.surface_weight}}},
              {"val_fraction", val_fraction},
              {"train_count", train_count},
              {"seed", seed}};
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError(what + ": unknown key '" + key + "'");
}

}  // namespace

TrainConfig TrainConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"optimizer", "peak_lr", "final_lr", "weight_decay", "warmup_fraction", "epochs", "batch_size", "loss",
                  "val_fraction", "train_count", "seed"},
                 "train config");
  TrainConfig c;
  try {
    c.optimizer = parse_optimizer(j.value("optimizer", std::string("adamw")));
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.final_lr = j.value("final_lr", c.final_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.train_count = j.value("train_count", c.train_count);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      reject_unknown(l, {"rel_l2_weight", "grad_weight", "volume_weight", "surface_weight"}, "loss spec");
      c.loss.rel_l2_weight = l.value("rel_l2_weight", c.loss.rel_l2_weight);
      c.loss.grad_weight = l.value("grad_weight", c.loss.grad_weight);
      c.loss.volume_weight = l.value("volume_weight", c.loss.volume_weight);
      c.loss.surface_weight = l.value("surface_weight", c.loss.surface_weight);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- losses ----------------------------------------------------------------------

template <typename T>
Var<T> relative_l2_loss(Tape<T>* tape, const Var<T>& pred, const Tensor<T>& target, bool* zero_norm) {
  require_same_shape(pred->value.shape(), target.shape(), "relative_l2_loss");
  const auto r = metrics::relative_l2<T>(target.span(), pred->value.span());
  if (zero_norm) *zero_norm = r.zero_norm;
  const bool rec = ad::tracking(tape, {&pred});
  auto out = ad::make_result(Tensor<T>::scalar(static_cast<T>(r.value)), rec);
  if (rec) {
    tape->record([pred, out, target, r] {
      if (out->grad.empty()) return;
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < target.numel(); ++i) {
        const double d = static_cast<double>(pred->value[i]) - static_cast<double>(target[i]);
        num += d * d;
        den += static_cast<double>(target[i]) * static_cast<double>(target[i]);
      }
      if (num == 0.0) return;  // minimum; zero subgradient
      const double denom = r.zero_norm ? metrics::kZeroNormEps : std::sqrt(den);
      const double c = static_cast<double>(out->grad[0]) / (std::sqrt(num) * denom);
      auto& g = pred->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i)
        g[i] += static_cast<T>(c * (static_cast<double>(pred->value[i]) - static_cast<double>(target[i])));
    });
  }
  return out;
}

namespace {

void check_grid(std::size_t rows, std::size_t h, std::size_t w) {
  if (h < 3 || w < 3) throw ConfigError("gradient regularizer needs a grid of at least 3x3");
  if (h * w != rows)
    throw ConfigError("gradient regularizer: grid " + std::to_string(h) + "x" + std::to_string(w) +
                      " does not match " + std::to_string(rows) + " points");
}

// Visits every stencil as (output row, plus index, minus index).
template <typename F>
void for_each_stencil(std::size_t h, std::size_t w, F&& f) {
  std::size_t r = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) f(r++, y * w + x + 1, y * w + x - 1);
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x) f(r++, (y + 1) * w + x, (y - 1) * w + x);
}

}  // namespace

template <typename T>
Tensor<T> grid_gradient(const Tensor<T>& u, std::size_t h, std::size_t w) {
  check_grid(u.rows(), h, w);
  const std::size_t c = u.cols();
  Tensor<T> g(h * (w - 2) + (h - 2) * w, c);
  for_each_stencil(h, w, [&](std::size_t r, std::size_t p, std::size_t m) {
    for (std::size_t j = 0; j < c; ++j) g(r, j) = (u(p, j) - u(m, j)) / T(2);
  });
  return g;
}

template <typename T>
Var<T> grid_gradient(Tape<T>* tape, const Var<T>& u, std::size_t h, std::size_t w) {
  const bool rec = ad::tracking(tape, {&u});
  auto out = ad::make_result(grid_gradient(u->value, h, w), rec);
  if (rec) {
    tape->record([u, out, h, w] {
      if (out->grad.empty()) return;
      auto& gu = u->grad_buffer();
      const std::size_t c = gu.cols();
      for_each_stencil(h, w, [&](std::size_t r, std::size_t p, std::size_t m) {
        for (std::size_t j = 0; j < c; ++j) {
          const T g = out->grad(r, j) / T(2);
          gu(p, j) += g;
          gu(m, j) -= g;
        }
      });
    });
  }
  return out;
}

template <typename T>
Var<T> gradient_regularizer(Tape<T>* tape, const Var<T>& pred, const Tensor<T>& target, std::size_t h, std::size_t w,
                            bool* zero_norm) {
  require_same_shape(pred->value.shape(), target.shape(), "gradient_regularizer");
  return relative_l2_loss(tape, grid_gradient(tape, pred, h, w), grid_gradient(target, h, w), zero_norm);
}

namespace {

template <typename T>
Tensor<T> take_rows(const Tensor<T>& x, const std::vector<std::int64_t>& idx) {
  Tensor<T> out(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto src = x.row(static_cast<std::size_t>(idx[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

template <typename T>
Var<T> sample_loss(Tape<T>* tape, const LossSpec& spec, const Var<T>& pred, const Tensor<T>& target,
                   const data::Sample& sample, bool* zero_norm) {
  bool zn = false, flag = false;
  Var<T> loss;
  const auto surface = static_cast<std::uint8_t>(data::GroupTag::surface);
  const bool grouped = std::find(sample.groups.begin(), sample.groups.end(), surface) != sample.groups.end();
  if (!grouped) {
    loss = relative_l2_loss(tape, pred, target, &zn);
    flag = flag || zn;
  } else {
    std::vector<std::int64_t> vol, surf;
    for (std::size_t i = 0; i < sample.groups.size(); ++i)
      (sample.groups[i] == surface ? surf : vol).push_back(static_cast<std::int64_t>(i));
    loss = ad::scale(tape, relative_l2_loss(tape, ad::gather_rows(tape, pred, surf), take_rows(target, surf), &zn),
                     static_cast<T>(spec.surface_weight));
    flag = flag || zn;
    if (!vol.empty()) {
      auto lv = relative_l2_loss(tape, ad::gather_rows(tape, pred, vol), take_rows(target, vol), &zn);
      flag = flag || zn;
      loss = ad::add(tape, loss, ad::scale(tape, lv, static_cast<T>(spec.volume_weight)));
    }
  }
  loss = ad::scale(tape, loss, static_cast<T>(spec.rel_l2_weight));
  if (spec.grad_weight > 0.0 && sample.structured()) {
    auto lg = gradient_regularizer(tape, pred, target, sample.grid_h, sample.grid_w, &zn);
    flag = flag || zn;
    loss = ad::add(tape, loss, ad::scale(tape, lg, static_cast<T>(spec.grad_weight)));
  }
  if (zero_norm) *zero_norm = flag;
  return loss;
}

// --- optimizers -----------------------------------------------------------------

OptimizerHyper OptimizerHyper::defaults(OptimizerKind kind, double weight_decay) {
  OptimizerHyper h;
  h.beta2 = kind == OptimizerKind::adamw ? 0.999 : 0.99;
  h.weight_decay = weight_decay;
  return h;
}

template <typename T>
OptimizerState<T> make_state(OptimizerKind kind, const std::vector<Var<T>>& params) {
  OptimizerState<T> s;
  for (const auto& p : params) {
    s.m.emplace_back(p->value.shape(), T(0));
    if (kind == OptimizerKind::adamw) s.v.emplace_back(p->value.shape(), T(0));
  }
  return s;
}

namespace {

template <typename T>
void check_state(const std::vector<Var<T>>& params, const OptimizerState<T>& state, bool second_moment) {
  if (state.m.size() != params.size() || (second_moment && state.v.size() != params.size()))
    throw StateError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i]->value.shape(), state.m[i].shape(), "optimizer state");
    const auto& g = params[i]->grad;
    if (g.empty()) continue;
    require_same_shape(params[i]->value.shape(), g.shape(), "gradient");
    if (!g.all_finite()) throw NumericError("non-finite gradient in parameter " + std::to_string(i));
  }
}

}  // namespace

template <typename T>
void adamw_step(const std::vector<Var<T>>& params, OptimizerState<T>& state, double lr, const OptimizerHyper& hp) {
  check_state(params, state, true);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t), c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->value;
    const auto& g = params[i]->grad;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t e = 0; e < p.numel(); ++e) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[e]);
      const double mi = hp.beta1 * static_cast<double>(m[e]) + (1.0 - hp.beta1) * gi;
      const double vi = hp.beta2 * static_cast<double>(v[e]) + (1.0 - hp.beta2) * gi * gi;
      m[e] = static_cast<T>(mi);
      v[e] = static_cast<T>(vi);
      double pi = static_cast<double>(p[e]);
      pi -= lr * hp.weight_decay * pi;
      pi -= lr * (mi / c1) / (std::sqrt(vi / c2) + hp.eps);
      p[e] = static_cast<T>(pi);
    }
  }
}

template <typename T>
void lion_step(const std::vector<Var<T>>& params, OptimizerState<T>& state, double lr, const OptimizerHyper& hp) {
  check_state(params, state, false);
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->value;
    const auto& g = params[i]->grad;
    auto& m = state.m[i];
    for (std::size_t e = 0; e < p.numel(); ++e) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[e]);
      const double mi = static_cast<double>(m[e]);
      const double c = hp.beta1 * mi + (1.0 - hp.beta1) * gi;
      const double dir = c > 0.0 ? 1.0 : (c < 0.0 ? -1.0 : 0.0);
      double pi = static_cast<double>(p[e]);
      pi -= lr * (dir + hp.weight_decay * pi);
      p[e] = static_cast<T>(pi);
      m[e] = static_cast<T>(hp.beta2 * mi + (1.0 - hp.beta2) * gi);
    }
  }
}

double lr_schedule(std::size_t step, std::size_t total, const TrainConfig& cfg) {
  if (step > total) throw ConfigError("lr_schedule: step beyond the schedule");
  if (total == 0) return cfg.final_lr;
  auto warm = static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total)));
  warm = std::min(warm, total - 1);
  if (step < warm) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

// --- training loop -------------------------------------------------------------

model::Normalization fit_normalization(const data::Dataset& ds, const std::vector<std::size_t>& indices) {
  const std::size_t din = ds.coord_dim + ds.in_dim, dout = ds.out_dim;
  std::vector<double> s_in(din, 0.0), q_in(din, 0.0), s_out(dout, 0.0), q_out(dout, 0.0);
  double count = 0.0;
  for (auto idx : indices) {
    const auto& s = ds.samples.at(idx);
    for (std::size_t i = 0; i < s.points(); ++i) {
      for (std::size_t c = 0; c < ds.coord_dim; ++c) {
        s_in[c] += s.coords(i, c);
        q_in[c] += static_cast<double>(s.coords(i, c)) * s.coords(i, c);
      }
      for (std::size_t c = 0; c < ds.in_dim; ++c) {
        s_in[ds.coord_dim + c] += s.in_fields(i, c);
        q_in[ds.coord_dim + c] += static_cast<double>(s.in_fields(i, c)) * s.in_fields(i, c);
      }
      for (std::size_t c = 0; c < dout; ++c) {
        s_out[c] += s.targets(i, c);
        q_out[c] += static_cast<double>(s.targets(i, c)) * s.targets(i, c);
      }
    }
    count += static_cast<double>(s.points());
  }
  auto n = model::Normalization::identity(din, dout);
  if (count == 0.0) return n;
  const auto finish = [&](const std::vector<double>& sum, const std::vector<double>& sq, std::vector<double>& mean,
                          std::vector<double>& stdev) {
    for (std::size_t c = 0; c < sum.size(); ++c) {
      mean[c] = sum[c] / count;
      const double var = std::max(0.0, sq[c] / count - mean[c] * mean[c]);
      stdev[c] = std::sqrt(var) < 1e-12 ? 1.0 : std::sqrt(var);
    }
  };
  finish(s_in, q_in, n.in_mean, n.in_std);
  finish(s_out, q_out, n.out_mean, n.out_std);
  return n;
}

template <typename T>
Tensor<T> predict(const model::ModelConfig& cfg, const model::MsptParams<T>& params, const model::Normalization& norm,
                  const data::Sample& sample) {
  const auto layout = model::make_layout(cfg, sample.coords.cast<double>(), false);
  return model::forward<T>(nullptr, cfg, params, norm, sample.features<T>(), layout)->value;
}

template <typename T>
double evaluate(const model::ModelConfig& cfg, const model::MsptParams<T>& params, const model::Normalization& norm,
                const data::Dataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  double total = 0.0;
  for (auto idx : indices) {
    const auto& s = ds.samples.at(idx);
    const auto pred = predict(cfg, params, norm, s);
    total += metrics::relative_l2<T>(s.targets.cast<T>().span(), pred.span()).value;
  }
  return total / static_cast<double>(indices.size());
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

template <typename T>
TrainResult train(const model::ModelConfig& mcfg, const TrainConfig& tcfg, const data::Dataset& ds,
                  const TrainOptions& opts) {
  mcfg.validate();
  tcfg.validate();
  const auto log = [&](const std::string& msg) {
    if (opts.log) opts.log(msg);
  };
  if (mcfg.coord_dim != ds.coord_dim || mcfg.descriptor_dim + mcfg.field_dim != ds.in_dim ||
      mcfg.out_dim != ds.out_dim)
    throw ConfigError("model dims (coord " + std::to_string(mcfg.coord_dim) + ", in " +
                      std::to_string(mcfg.descriptor_dim + mcfg.field_dim) + ", out " + std::to_string(mcfg.out_dim) +
                      ") do not match the dataset (" + std::to_string(ds.coord_dim) + ", " +
                      std::to_string(ds.in_dim) + ", " + std::to_string(ds.out_dim) + ")");

  data::Split split;
  if (tcfg.train_count > 0) {
    if (tcfg.train_count > ds.size()) throw ConfigError("train_count exceeds the dataset size");
    split.train.resize(tcfg.train_count);
    std::iota(split.train.begin(), split.train.end(), std::size_t{0});
    for (std::size_t i = tcfg.train_count; i < ds.size(); ++i) split.val.push_back(i);
  } else {
    split = data::split_dataset(ds.size(), tcfg.val_fraction, tcfg.seed);
  }
  if (split.train.empty()) throw ConfigError("training split is empty");
  const auto& val_set = split.val.empty() ? split.train : split.val;
  if (split.val.empty()) log("warning: no validation samples; val_rel_l2 is measured on the training split");

  const auto norm = fit_normalization(ds, split.train);

  std::vector<balltree::PatchLayout> layouts(ds.size());
  std::vector<Tensor<T>> inputs(ds.size()), targets(ds.size());
  for (auto idx : split.train) {
    const auto& s = ds.samples[idx];
    layouts[idx] = model::make_layout(mcfg, s.coords.cast<double>(), false);
    inputs[idx] = s.features<T>();
    targets[idx] = s.targets.cast<T>();
  }

  const auto params = model::init_params<T>(mcfg, tcfg.seed);
  const auto named = params.named();
  std::vector<Var<T>> vars;
  for (const auto& [_, v] : named) vars.push_back(v);
  const auto hyper = OptimizerHyper::defaults(tcfg.optimizer, tcfg.weight_decay);
  auto state = make_state<T>(tcfg.optimizer, vars);
  params.zero_grad();

  const std::size_t steps_per_epoch = (split.train.size() + tcfg.batch_size - 1) / tcfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * tcfg.epochs;

  std::ofstream csv;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    csv.open(opts.out_dir / "metrics.csv", std::ios::trunc);
    if (!csv) throw FormatError("cannot write " + (opts.out_dir / "metrics.csv").string());
    csv << "epoch,train_loss,val_rel_l2,lr,wall_seconds\n";
  }
  const json run_info{{"model", mcfg.to_json()}, {"train", tcfg.to_json()}};

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  Rng shuffle_rng(derive(tcfg.seed, 1));
  std::vector<std::size_t> order = split.train;
  std::size_t step = 0;
  double lr = 0.0;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += tcfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + tcfg.batch_size);
      const T inv = T(1) / static_cast<T>(e - b);
      for (std::size_t i = b; i < e; ++i) {
        const auto idx = order[i];
        Tape<T> tape;
        auto pred = model::forward<T>(&tape, mcfg, params, norm, inputs[idx], layouts[idx]);
        bool zero_norm = false;
        auto loss = sample_loss(&tape, tcfg.loss, pred, targets[idx], ds.samples[idx], &zero_norm);
        if (zero_norm && epoch == 1) {
          ++result.zero_norm_targets;
          log("warning: sample " + std::to_string(idx) + " has a zero-norm target; relative L2 uses eps=1e-12");
        }
        const double lv = static_cast<double>(loss->value[0]);
        if (!std::isfinite(lv)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        loss_sum += lv;
        tape.backward(ad::scale(&tape, loss, inv));
      }
      lr = lr_schedule(++step, total_steps, tcfg);
      if (tcfg.optimizer == OptimizerKind::adamw)
        adamw_step(vars, state, lr, hyper);
      else
        lion_step(vars, state, lr, hyper);
      params.zero_grad();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_rel_l2 = evaluate(mcfg, params, norm, ds, val_set);
    rec.lr = lr;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (csv.is_open()) {
      csv << epoch << ',' << fmt(rec.train_loss) << ',' << fmt(rec.val_rel_l2) << ',' << fmt(rec.lr) << ','
          << fmt(rec.wall_seconds) << '\n';
      csv.flush();
    }
    if (opts.progress)
      log("epoch " + std::to_string(epoch) + " train_loss " + fmt(rec.train_loss) + " val_rel_l2 " +
          fmt(rec.val_rel_l2) + " lr " + fmt(rec.lr));
    if (rec.val_rel_l2 < result.best_val) {
      result.best_val = rec.val_rel_l2;
      result.best_epoch = epoch;
      if (!opts.out_dir.empty())
        model::save_checkpoint(opts.out_dir / "best.ckpt", mcfg, norm, params,
                               json{{"epoch", epoch}, {"val_rel_l2", rec.val_rel_l2}, {"run", run_info}});
    }
    if (epoch == std::min<std::size_t>(10, tcfg.epochs) && epoch > 1 &&
        rec.train_loss >= result.history.front().train_loss) {
      result.stagnation_warning = true;
      log("warning: training loss did not decrease over the first " + std::to_string(epoch) + " epochs");
    }
  }
  if (!opts.out_dir.empty())
    model::save_checkpoint(opts.out_dir / "last.ckpt", mcfg, norm, params,
                           json{{"epoch", tcfg.epochs}, {"run", run_info}});
  return result;
}

// --- gradient checking -----------------------------------------------------------

json GradcheckReport::to_json() const {
  json e = json::array();
  for (const auto& x : entries) e.push_back({{"name", x.name}, {"size", x.size}, {"rel_error", x.rel_error}});
  return json{{"max_rel_error", max_rel_error}, {"worst", worst}, {"tolerance", tolerance}, {"passed", passed},
              {"parameters", e}};
}

GradcheckReport gradcheck(const LossFn& loss, const std::vector<std::pair<std::string, Var<double>>>& params,
                          double h, double tolerance) {
  for (const auto& [_, p] : params) {
    p->requires_grad = true;
    p->zero_grad();
  }
  {
    Tape<double> tape(kernels::Exec::serial);
    tape.backward(loss(&tape));
  }
  GradcheckReport rep;
  rep.tolerance = tolerance;
  for (const auto& [name, p] : params) {
    Tensor<double> tape_grad = p->grad.empty() ? Tensor<double>(p->value.shape(), 0.0) : p->grad;
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss(nullptr)->value[0];
      p->value[i] = keep - h;
      const double down = loss(nullptr)->value[0];
      p->value[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      diff += (fd - tape_grad[i]) * (fd - tape_grad[i]);
      na += tape_grad[i] * tape_grad[i];
      nb += fd * fd;
    }
    const double scale = std::max(std::sqrt(na), std::sqrt(nb));
    const double err = diff == 0.0 ? 0.0 : std::sqrt(diff) / scale;
    rep.entries.push_back({name, p->value.numel(), err});
    if (err >= rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst = name;
    }
    p->zero_grad();
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

model::ModelConfig toy_config() {
  model::ModelConfig c;
  c.blocks = 2;
  c.width = 8;
  c.heads = 2;
  c.patches = 2;
  c.supernodes = 1;
  c.pooling = pmsa::PoolingMode::mean;
  c.coord_dim = 2;
  c.field_dim = 1;
  c.out_dim = 1;
  return c;
}

GradcheckReport model_gradcheck(const model::ModelConfig& cfg, std::uint64_t seed, std::size_t points) {
  cfg.validate();
  Rng rng(derive(seed, 7));
  Tensor<double> coords(points, cfg.coord_dim);
  for (std::size_t i = 0; i < coords.numel(); ++i) coords[i] = rng.uniform();
  Tensor<double> raw(points, cfg.in_dim());
  for (std::size_t i = 0; i < points; ++i)
    for (std::size_t c = 0; c < cfg.in_dim(); ++c) raw(i, c) = c < cfg.coord_dim ? coords(i, c) : rng.normal();
  Tensor<double> target(points, cfg.out_dim);
  for (std::size_t i = 0; i < target.numel(); ++i) target[i] = rng.normal();

  const auto params = model::init_params<double>(cfg, seed);
  // Move every tensor off its structured initial value (zero biases, unit gains).
  for (const auto& [_, v] : params.named())
    for (std::size_t i = 0; i < v->value.numel(); ++i) v->value[i] += 0.1 * rng.normal();
  const auto norm = model::Normalization::identity(cfg.in_dim(), cfg.out_dim);
  const auto layout = model::make_layout(cfg, coords, false);
  const LossFn loss = [&](Tape<double>* tape) {
    return relative_l2_loss(tape, model::forward<double>(tape, cfg, params, norm, raw, layout), target);
  };
  return gradcheck(loss, params.named());
}

#define MSPT_TRAINING_INSTANTIATE(T)                                                                                   \
  template Var<T> relative_l2_loss<T>(Tape<T>*, const Var<T>&, const Tensor<T>&, bool*);                             \
  template Var<T> grid_gradient<T>(Tape<T>*, const Var<T>&, std::size_t, std::size_t);                               \
  template Tensor<T> grid_gradient<T>(const Tensor<T>&, std::size_t, std::size_t);                                   \
  template Var<T> gradient_regularizer<T>(Tape<T>*, const Var<T>&, const Tensor<T>&, std::size_t, std::size_t,      \
                                          bool*);                                                                    \
  template Var<T> sample_loss<T>(Tape<T>*, const LossSpec&, const Var<T>&, const Tensor<T>&, const data::Sample&,    \
                                 bool*);                                                                             \
  template OptimizerState<T> make_state<T>(OptimizerKind, const std::vector<Var<T>>&);                               \
  template void adamw_step<T>(const std::vector<Var<T>>&, OptimizerState<T>&, double, const OptimizerHyper&);        \
  template void lion_step<T>(const std::vector<Var<T>>&, OptimizerState<T>&, double, const OptimizerHyper&);         \
  template TrainResult train<T>(const model::ModelConfig&, const TrainConfig&, const data::Dataset&,                 \
                                const TrainOptions&);                                                                \
  template double evaluate<T>(const model::ModelConfig&, const model::MsptParams<T>&, const model::Normalization&,   \
                              const data::Dataset&, const std::vector<std::size_t>&);                                \
  template Tensor<T> predict<T>(const model::ModelConfig&, const model::MsptParams<T>&, const model::Normalization&, \
                                const data::Sample&);

MSPT_TRAINING_INSTANTIATE(float)
MSPT_TRAINING_INSTANTIATE(double)

}  // namespace mspt::training
