// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mspt/data.hpp"

#include <Eigen/Sparse>

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mspt/error.hpp"
#include "mspt/random.hpp"

namespace mspt::data {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per (seed, sample index) so generation can run in
// parallel without changing results.
std::uint64_t sample_seed(std::uint64_t seed, std::size_t i) { return splitmix64(splitmix64(seed) ^ (i + 1)); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void put_f32(std::vector<unsigned char>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xff));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(bits);
}

Tensor<float> to_f32(const Tensor<double>& t) { return t.cast<float>(); }

}  // namespace

std::uint64_t fnv1a64(const unsigned char* bytes, std::size_t n) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Sample::validate() const {
  const std::size_t n = coords.rows();
  if (coords.rank() != 2 || in_fields.rank() != 2 || targets.rank() != 2)
    throw InputError("sample arrays must be matrices");
  if (in_fields.rows() != n || targets.rows() != n || groups.size() != n)
    throw InputError("sample arrays disagree on the point count (coords " + shape_string(coords.shape()) +
                     ", in_fields " + shape_string(in_fields.shape()) + ", targets " +
                     shape_string(targets.shape()) + ", groups " + std::to_string(groups.size()) + ")");
  if ((grid_h == 0) != (grid_w == 0) || (grid_h && grid_h * grid_w != n))
    throw InputError("grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) + " does not cover " +
                     std::to_string(n) + " points");
  if (!coords.all_finite() || !in_fields.all_finite() || !targets.all_finite())
    throw InputError("sample contains non-finite values");
  for (auto g : groups)
    if (g > static_cast<std::uint8_t>(GroupTag::surface)) throw InputError("unknown group tag " + std::to_string(g));
}

template <typename T>
Tensor<T> Sample::features() const {
  const std::size_t n = points(), d = coords.cols(), fi = in_fields.cols();
  Tensor<T> out(n, d + fi);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) out(i, c) = static_cast<T>(coords(i, c));
    for (std::size_t c = 0; c < fi; ++c) out(i, d + c) = static_cast<T>(in_fields(i, c));
  }
  return out;
}

template Tensor<float> Sample::features<float>() const;
template Tensor<double> Sample::features<double>() const;

// --- storage ---------------------------------------------------------------------

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  std::ofstream blob(dir / "data.bin", std::ios::binary | std::ios::trunc);
  if (!blob) throw FormatError("cannot write " + (dir / "data.bin").string());
  json entries = json::array();
  std::uint64_t offset = 0;
  std::vector<unsigned char> bytes;
  for (const auto& s : ds.samples) {
    s.validate();
    if (s.coords.cols() != ds.coord_dim || s.in_fields.cols() != ds.in_dim || s.targets.cols() != ds.out_dim)
      throw InputError("sample widths do not match the dataset header");
    bytes.clear();
    for (const auto* t : {&s.coords, &s.in_fields, &s.targets})
      for (std::size_t i = 0; i < t->numel(); ++i) put_f32(bytes, (*t)[i]);
    bytes.insert(bytes.end(), s.groups.begin(), s.groups.end());
    blob.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    json e{{"points", s.points()},
           {"offset", offset},
           {"bytes", bytes.size()},
           {"checksum", "fnv1a64:" + hex64(fnv1a64(bytes.data(), bytes.size()))}};
    e["grid"] = s.structured() ? json::array({s.grid_h, s.grid_w}) : json(nullptr);
    entries.push_back(std::move(e));
    offset += bytes.size();
  }
  if (!blob) throw FormatError("failed writing " + (dir / "data.bin").string());
  json manifest{{"format", "mspt-dataset"},
                {"version", 1},
                {"precision", "f32"},
                {"byte_order", "little"},
                {"blob", "data.bin"},
                {"sample_count", ds.samples.size()},
                {"coord_dim", ds.coord_dim},
                {"in_dim", ds.in_dim},
                {"out_dim", ds.out_dim},
                {"provenance", ds.provenance},
                {"samples", entries}};
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw FormatError("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw FormatError("no dataset manifest at " + manifest_path.string());
  json m;
  try {
    m = json::parse(mf);
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + " is not valid JSON: " + e.what());
  }
  Dataset ds;
  std::vector<unsigned char> blob;
  try {
    if (m.at("format") != "mspt-dataset" || m.at("precision") != "f32")
      throw FormatError(manifest_path.string() + " is not an f32 mspt dataset");
    ds.coord_dim = m.at("coord_dim");
    ds.in_dim = m.at("in_dim");
    ds.out_dim = m.at("out_dim");
    ds.provenance = m.value("provenance", json::object());
    const auto& entries = m.at("samples");
    if (entries.size() != m.at("sample_count").get<std::size_t>())
      throw FormatError("manifest sample_count disagrees with its sample list");

    const auto blob_path = dir / m.at("blob").get<std::string>();
    std::ifstream in(blob_path, std::ios::binary);
    if (!in) throw FormatError("missing data blob " + blob_path.string());
    blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());

    std::uint64_t prev_end = 0;
    for (std::size_t idx = 0; idx < entries.size(); ++idx) {
      const auto& e = entries[idx];
      const std::size_t n = e.at("points");
      const std::uint64_t offset = e.at("offset"), size = e.at("bytes");
      const std::size_t expect = n * (ds.coord_dim + ds.in_dim + ds.out_dim) * 4 + n;
      if (size != expect)
        throw FormatError("sample " + std::to_string(idx) + ": manifest size " + std::to_string(size) +
                          " does not match its extents");
      if (offset < prev_end) throw FormatError("sample offsets are not increasing");
      if (offset + size > blob.size())
        throw CorruptionError("sample " + std::to_string(idx) + " extends past the end of the data blob");
      const unsigned char* p = blob.data() + offset;
      const std::string want = e.at("checksum");
      if (want != "fnv1a64:" + hex64(fnv1a64(p, size)))
        throw CorruptionError("checksum mismatch in sample " + std::to_string(idx));
      prev_end = offset + size;

      Sample s;
      s.coords = Tensor<float>(n, ds.coord_dim);
      s.in_fields = Tensor<float>(n, ds.in_dim);
      s.targets = Tensor<float>(n, ds.out_dim);
      for (auto* t : {&s.coords, &s.in_fields, &s.targets})
        for (std::size_t i = 0; i < t->numel(); ++i, p += 4) (*t)[i] = get_f32(p);
      s.groups.assign(p, p + n);
      if (!e.at("grid").is_null()) {
        s.grid_h = e["grid"].at(0);
        s.grid_w = e["grid"].at(1);
      }
      s.validate();
      ds.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

// --- Darcy -------------------------------------------------------------------------

namespace {

struct Stencil {
  double inv_hx2, inv_hy2;
};

Stencil stencil_of(const DarcyProblem& p) {
  const double hx = 1.0 / static_cast<double>(p.w - 1), hy = 1.0 / static_cast<double>(p.h - 1);
  return {1.0 / (hx * hx), 1.0 / (hy * hy)};
}

void check_problem(const DarcyProblem& p) {
  if (p.h < 3 || p.w < 3) throw ConfigError("Darcy grid must be at least 3x3");
  if (p.coeff.size() != p.h * p.w) throw DimensionError("Darcy coefficient does not match the grid");
  for (double a : p.coeff)
    if (!(a > 0.0) || !std::isfinite(a)) throw InputError("Darcy coefficient must be positive and finite");
}

}  // namespace

std::vector<double> solve_darcy(const DarcyProblem& p) {
  check_problem(p);
  const std::size_t w = p.w, ih = p.h - 2, iw = p.w - 2;
  const auto st = stencil_of(p);
  const auto a = [&](std::size_t y, std::size_t x) { return p.coeff[y * w + x]; };
  const auto unknown = [&](std::size_t y, std::size_t x) { return static_cast<int>((y - 1) * iw + (x - 1)); };

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(ih * iw * 5);
  for (std::size_t y = 1; y + 1 < p.h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const int row = unknown(y, x);
      const double ae = 0.5 * (a(y, x) + a(y, x + 1)) * st.inv_hx2;
      const double aw = 0.5 * (a(y, x) + a(y, x - 1)) * st.inv_hx2;
      const double an = 0.5 * (a(y, x) + a(y + 1, x)) * st.inv_hy2;
      const double as = 0.5 * (a(y, x) + a(y - 1, x)) * st.inv_hy2;
      trip.emplace_back(row, row, ae + aw + an + as);
      // Boundary neighbours carry u = 0 and drop out.
      if (x + 2 < w) trip.emplace_back(row, unknown(y, x + 1), -ae);
      if (x > 1) trip.emplace_back(row, unknown(y, x - 1), -aw);
      if (y + 2 < p.h) trip.emplace_back(row, unknown(y + 1, x), -an);
      if (y > 1) trip.emplace_back(row, unknown(y - 1, x), -as);
    }
  const auto n = static_cast<Eigen::Index>(ih * iw);
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> chol(A);
  if (chol.info() != Eigen::Success) throw NumericError("Darcy system is not positive definite");
  const Eigen::VectorXd sol = chol.solve(Eigen::VectorXd::Constant(n, p.forcing));
  if (chol.info() != Eigen::Success) throw NumericError("Darcy solve failed");

  std::vector<double> u(p.h * w, 0.0);
  for (std::size_t y = 1; y + 1 < p.h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) u[y * w + x] = sol[unknown(y, x)];
  return u;
}

double darcy_residual(const DarcyProblem& p, const std::vector<double>& u) {
  check_problem(p);
  if (u.size() != p.h * p.w) throw DimensionError("Darcy solution does not match the grid");
  const std::size_t w = p.w;
  const auto st = stencil_of(p);
  const auto a = [&](std::size_t y, std::size_t x) { return p.coeff[y * w + x]; };
  const auto U = [&](std::size_t y, std::size_t x) { return u[y * w + x]; };
  double worst = 0.0;
  for (std::size_t y = 1; y + 1 < p.h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double c = U(y, x);
      const double flux = 0.5 * (a(y, x) + a(y, x + 1)) * (c - U(y, x + 1)) * st.inv_hx2 +
                          0.5 * (a(y, x) + a(y, x - 1)) * (c - U(y, x - 1)) * st.inv_hx2 +
                          0.5 * (a(y, x) + a(y + 1, x)) * (c - U(y + 1, x)) * st.inv_hy2 +
                          0.5 * (a(y, x) + a(y - 1, x)) * (c - U(y - 1, x)) * st.inv_hy2;
      worst = std::max(worst, std::abs(flux - p.forcing));
    }
  for (std::size_t x = 0; x < w; ++x) worst = std::max({worst, std::abs(U(0, x)), std::abs(U(p.h - 1, x))});
  for (std::size_t y = 0; y < p.h; ++y) worst = std::max({worst, std::abs(U(y, 0)), std::abs(U(y, w - 1))});
  return worst;
}

std::vector<double> sample_coefficient(std::size_t h, std::size_t w, std::uint64_t seed) {
  constexpr double kHigh = 10.0, kLow = 1.0;
  Rng rng(seed);
  std::vector<double> noise(h * w);
  for (auto& v : noise) v = rng.normal();
  // Separable Gaussian blur, clamped at the edges.
  const double sigma = std::max(1.0, static_cast<double>(std::min(h, w)) / 8.0);
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kern(2 * radius + 1);
  for (std::ptrdiff_t t = -radius; t <= radius; ++t)
    kern[t + radius] = std::exp(-0.5 * static_cast<double>(t * t) / (sigma * sigma));
  const auto clamp = [](std::ptrdiff_t i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  std::vector<double> tmp(h * w, 0.0), smooth(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::ptrdiff_t t = -radius; t <= radius; ++t)
        tmp[y * w + x] += kern[t + radius] * noise[y * w + clamp(static_cast<std::ptrdiff_t>(x) + t, w)];
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::ptrdiff_t t = -radius; t <= radius; ++t)
        smooth[y * w + x] += kern[t + radius] * tmp[clamp(static_cast<std::ptrdiff_t>(y) + t, h) * w + x];
  std::vector<double> a(h * w);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = smooth[i] >= 0.0 ? kHigh : kLow;
  return a;
}

Dataset gen_darcy(const DarcyOptions& opt) {
  if (opt.h < 3 || opt.w < 3) throw ConfigError("Darcy grid must be at least 3x3");
  const std::size_t n = opt.h * opt.w;
  Dataset ds;
  ds.coord_dim = 2;
  ds.in_dim = 1;
  ds.out_dim = 1;
  ds.samples.resize(opt.samples);
  std::vector<double> residual(opt.samples, 0.0);
  std::vector<std::string> errors(opt.samples);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(opt.samples); ++si) {
    const auto i = static_cast<std::size_t>(si);
    try {
      DarcyProblem prob{opt.h, opt.w, sample_coefficient(opt.h, opt.w, sample_seed(opt.seed, i)), 1.0};
      const auto u = solve_darcy(prob);
      residual[i] = darcy_residual(prob, u);
      Sample s;
      s.coords = Tensor<float>(n, 2);
      s.in_fields = Tensor<float>(n, 1);
      s.targets = Tensor<float>(n, 1);
      s.groups.assign(n, static_cast<std::uint8_t>(GroupTag::none));
      s.grid_h = opt.h;
      s.grid_w = opt.w;
      for (std::size_t y = 0; y < opt.h; ++y)
        for (std::size_t x = 0; x < opt.w; ++x) {
          const std::size_t k = y * opt.w + x;
          s.coords(k, 0) = static_cast<float>(static_cast<double>(x) / static_cast<double>(opt.w - 1));
          s.coords(k, 1) = static_cast<float>(static_cast<double>(y) / static_cast<double>(opt.h - 1));
          s.in_fields(k, 0) = static_cast<float>(prob.coeff[k]);
          s.targets(k, 0) = static_cast<float>(u[k]);
        }
      ds.samples[i] = std::move(s);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw NumericError("Darcy generation failed: " + e);

  const double worst = opt.samples ? *std::max_element(residual.begin(), residual.end()) : 0.0;
  ds.provenance = json{{"generator", "darcy"},
                       {"grid", {opt.h, opt.w}},
                       {"samples", opt.samples},
                       {"seed", opt.seed},
                       {"coefficient", {{"values", {10.0, 1.0}}, {"smoothing_sigma_cells", std::max(1.0, std::min(opt.h, opt.w) / 8.0)}}},
                       {"forcing", 1.0},
                       {"max_residual", worst}};
  return ds;
}

// --- point cloud ------------------------------------------------------------------------

std::vector<double> kernel_smooth(const Tensor<double>& points, const std::vector<double>& amp, double sigma) {
  require_rank2(points.shape(), "kernel_smooth");
  const std::size_t n = points.rows(), d = points.cols();
  if (amp.size() != n) throw DimensionError("kernel_smooth: one amplitude per point required");
  if (!(sigma > 0.0)) throw ConfigError("kernel_smooth: sigma must be positive");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> t(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double r2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = points(i, c) - points(j, c);
        r2 += diff * diff;
      }
      acc += amp[j] * std::exp(-r2 * inv);
    }
    t[i] = acc;
  }
  return t;
}

Dataset gen_pointcloud(const PointcloudOptions& opt) {
  if (opt.points < 16) throw ConfigError("point clouds need at least 16 points");
  Dataset ds;
  ds.coord_dim = 2;
  ds.in_dim = 1;
  ds.out_dim = 1;
  ds.samples.resize(opt.samples);
  const std::size_t n = opt.points;

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(opt.samples); ++si) {
    const auto i = static_cast<std::size_t>(si);
    Rng rng(sample_seed(opt.seed, i));
    Tensor<double> pts(n, 2);
    for (std::size_t k = 0; k < pts.numel(); ++k) pts[k] = rng.uniform();
    std::vector<double> amp(n);
    for (auto& a : amp) a = rng.normal();
    const auto t = kernel_smooth(pts, amp, opt.sigma);
    Sample s;
    s.coords = to_f32(pts);
    s.in_fields = Tensor<float>(n, 1);
    s.targets = Tensor<float>(n, 1);
    for (std::size_t k = 0; k < n; ++k) {
      s.in_fields(k, 0) = static_cast<float>(amp[k]);
      s.targets(k, 0) = static_cast<float>(t[k]);
    }
    s.groups.assign(n, static_cast<std::uint8_t>(GroupTag::none));
    ds.samples[i] = std::move(s);
  }
  ds.provenance = json{{"generator", "pointcloud"},
                       {"points", opt.points},
                       {"samples", opt.samples},
                       {"seed", opt.seed},
                       {"sigma", opt.sigma}};
  return ds;
}

Split split_dataset(std::size_t count, double val_fraction, std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("validation fraction must lie in [0, 1)");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(splitmix64(seed ^ 0x5eed5a1175ULL));
  rng.shuffle(idx.begin(), idx.end());
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(count)));
  if (val_fraction > 0.0 && count >= 2) n_val = std::clamp<std::size_t>(n_val, 1, count - 1);
  Split s;
  s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  return s;
}

}  // namespace mspt::data
