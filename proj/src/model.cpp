// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mspt/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mspt/error.hpp"
#include "mspt/random.hpp"

namespace mspt::model {

using ad::Tape;
using ad::Var;
using nlohmann::json;

void ModelConfig::validate() const {
  if (blocks == 0) throw ConfigError("model: need at least one block");
  if (width == 0 || heads == 0 || width % heads != 0)
    throw ConfigError("model: width F=" + std::to_string(width) + " must be a positive multiple of heads=" +
                      std::to_string(heads));
  if (patches == 0) throw ConfigError("model: patch count K must be at least 1");
  if (ffn_expansion == 0) throw ConfigError("model: ffn_expansion must be at least 1");
  if (in_dim() == 0 || out_dim == 0) throw ConfigError("model: input and output widths must be positive");
  if (pooling == pmsa::PoolingMode::linear && supernodes > 0 && patch_size == 0)
    throw ConfigError("model: linear pooling needs patch_size (L) in the configuration");
}

json ModelConfig::to_json() const {
  return json{{"blocks", blocks},
              {"width", width},
              {"heads", heads},
              {"patches", patches},
              {"supernodes", supernodes},
              {"pooling", pmsa::to_string(pooling)},
              {"ffn_expansion", ffn_expansion},
              {"coord_dim", coord_dim},
              {"descriptor_dim", descriptor_dim},
              {"field_dim", field_dim},
              {"out_dim", out_dim},
              {"patch_size", patch_size},
              {"leaf_capacity", leaf_capacity},
              {"persistent_supernodes", persistent_supernodes}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  static const char* known[] = {"blocks",   "width",          "heads",     "patches",      "supernodes",
                                "pooling",  "ffn_expansion",  "coord_dim", "descriptor_dim", "field_dim",
                                "out_dim",  "patch_size",     "leaf_capacity", "persistent_supernodes"};
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("model config: unknown key '" + key + "'");
  }
  ModelConfig c;
  c.blocks = j.value("blocks", c.blocks);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.patches = j.value("patches", c.patches);
  c.supernodes = j.value("supernodes", c.supernodes);
  c.pooling = pmsa::parse_pooling(j.value("pooling", std::string("mean")));
  c.ffn_expansion = j.value("ffn_expansion", c.ffn_expansion);
  c.coord_dim = j.value("coord_dim", c.coord_dim);
  c.descriptor_dim = j.value("descriptor_dim", c.descriptor_dim);
  c.field_dim = j.value("field_dim", c.field_dim);
  c.out_dim = j.value("out_dim", c.out_dim);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.leaf_capacity = j.value("leaf_capacity", c.leaf_capacity);
  c.persistent_supernodes = j.value("persistent_supernodes", c.persistent_supernodes);
  c.validate();
  return c;
}

template <typename T>
std::vector<std::pair<std::string, Var<T>>> MsptParams<T>::named() const {
  std::vector<std::pair<std::string, Var<T>>> out{
      {"embed.w1", embed_w1}, {"embed.b1", embed_b1}, {"embed.w2", embed_w2}, {"embed.b2", embed_b2}};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& p = blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    out.emplace_back(pre + "ln1.gain", p.ln1_gain);
    out.emplace_back(pre + "ln1.bias", p.ln1_bias);
    out.emplace_back(pre + "attn.w_q", p.attn.w_q);
    out.emplace_back(pre + "attn.w_k", p.attn.w_k);
    out.emplace_back(pre + "attn.w_v", p.attn.w_v);
    out.emplace_back(pre + "attn.w_o", p.attn.w_o);
    if (p.w_pool) out.emplace_back(pre + "pool.w", p.w_pool);
    out.emplace_back(pre + "ln2.gain", p.ln2_gain);
    out.emplace_back(pre + "ln2.bias", p.ln2_bias);
    out.emplace_back(pre + "ffn.w1", p.ffn_w1);
    out.emplace_back(pre + "ffn.b1", p.ffn_b1);
    out.emplace_back(pre + "ffn.w2", p.ffn_w2);
    out.emplace_back(pre + "ffn.b2", p.ffn_b2);
  }
  out.emplace_back("head.ln.gain", head_ln_gain);
  out.emplace_back("head.ln.bias", head_ln_bias);
  out.emplace_back("head.w", head_w);
  out.emplace_back("head.b", head_b);
  return out;
}

template <typename T>
std::size_t MsptParams<T>::count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : named()) n += v->value.numel();
  return n;
}

template <typename T>
void MsptParams<T>::zero_grad() const {
  for (const auto& [_, v] : named()) v->zero_grad();
}

namespace {

template <typename T>
Var<T> xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> w(fan_in, fan_out);
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.uniform(-a, a));
  return ad::parameter(std::move(w));
}

template <typename T>
Var<T> filled(std::size_t n, T v) {
  return ad::parameter(Tensor<T>(Shape{n}, v));
}

}  // namespace

template <typename T>
MsptParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t f = cfg.width, hidden = cfg.ffn_expansion * cfg.width;
  MsptParams<T> p;
  p.embed_w1 = xavier<T>(rng, cfg.in_dim(), f);
  p.embed_b1 = filled<T>(f, 0);
  p.embed_w2 = xavier<T>(rng, f, f);
  p.embed_b2 = filled<T>(f, 0);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    BlockParams<T> bp;
    bp.ln1_gain = filled<T>(f, 1);
    bp.ln1_bias = filled<T>(f, 0);
    bp.attn.w_q = xavier<T>(rng, f, f);
    bp.attn.w_k = xavier<T>(rng, f, f);
    bp.attn.w_v = xavier<T>(rng, f, f);
    bp.attn.w_o = xavier<T>(rng, f, f);
    bp.attn.heads = cfg.heads;
    if (cfg.pooling == pmsa::PoolingMode::linear && cfg.supernodes > 0)
      bp.w_pool = xavier<T>(rng, cfg.patch_size, cfg.supernodes);
    bp.ln2_gain = filled<T>(f, 1);
    bp.ln2_bias = filled<T>(f, 0);
    bp.ffn_w1 = xavier<T>(rng, f, hidden);
    bp.ffn_b1 = filled<T>(hidden, 0);
    bp.ffn_w2 = xavier<T>(rng, hidden, f);
    bp.ffn_b2 = filled<T>(f, 0);
    p.blocks.push_back(std::move(bp));
  }
  p.head_ln_gain = filled<T>(f, 1);
  p.head_ln_bias = filled<T>(f, 0);
  p.head_w = xavier<T>(rng, f, cfg.out_dim);
  p.head_b = filled<T>(cfg.out_dim, 0);
  return p;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t f = cfg.width, hidden = cfg.ffn_expansion * f;
  const std::size_t embed = cfg.in_dim() * f + f + f * f + f;
  std::size_t block = 2 * f + 4 * f * f + 2 * f + f * hidden + hidden + hidden * f + f;
  if (cfg.pooling == pmsa::PoolingMode::linear && cfg.supernodes > 0) block += cfg.patch_size * cfg.supernodes;
  const std::size_t head = 2 * f + f * cfg.out_dim + cfg.out_dim;
  return embed + cfg.blocks * block + head;
}

Normalization Normalization::identity(std::size_t in_dim, std::size_t out_dim) {
  return {std::vector<double>(in_dim, 0.0), std::vector<double>(in_dim, 1.0), std::vector<double>(out_dim, 0.0),
          std::vector<double>(out_dim, 1.0)};
}

json Normalization::to_json() const {
  return json{{"in_mean", in_mean}, {"in_std", in_std}, {"out_mean", out_mean}, {"out_std", out_std}};
}

Normalization Normalization::from_json(const json& j) {
  Normalization n;
  n.in_mean = j.at("in_mean").get<std::vector<double>>();
  n.in_std = j.at("in_std").get<std::vector<double>>();
  n.out_mean = j.at("out_mean").get<std::vector<double>>();
  n.out_std = j.at("out_std").get<std::vector<double>>();
  return n;
}

balltree::PatchLayout make_layout(const ModelConfig& cfg, const Tensor<double>& coords, bool structured) {
  const std::size_t n = coords.rows();
  balltree::PatchLayout layout = structured ? balltree::grid_passthrough_layout(n, cfg.patches)
                                            : balltree::partition(coords, cfg.patches, cfg.leaf_capacity);
  pmsa::validate_pooling({cfg.pooling, cfg.supernodes}, layout.l);
  if (cfg.pooling == pmsa::PoolingMode::linear && cfg.supernodes > 0 && layout.l != cfg.patch_size)
    throw ConfigError("model: sample yields patch size L=" + std::to_string(layout.l) +
                      " but linear pooling was configured for L=" + std::to_string(cfg.patch_size));
  return layout;
}

template <typename T>
Var<T> embed(Tape<T>* tape, const MsptParams<T>& params, const Var<T>& raw) {
  if (raw->value.rank() != 2 || raw->value.cols() != params.embed_w1->value.rows())
    throw ConfigError("embed: input is " + shape_string(raw->value.shape()) + " but the model expects in_dim=" +
                      std::to_string(params.embed_w1->value.rows()));
  auto h = ad::linear(tape, raw, params.embed_w1, params.embed_b1);
  h = ad::gelu(tape, h);
  return ad::linear(tape, h, params.embed_w2, params.embed_b2);
}

template <typename T>
Var<T> mspt_block(Tape<T>* tape, const ModelConfig& cfg, const BlockParams<T>& p, const balltree::PatchLayout& layout,
                  const Var<T>& h, Var<T>* carried) {
  const pmsa::PoolingConfig pool{cfg.pooling, cfg.supernodes};
  const pmsa::PmsaOptions opts{cfg.persistent_supernodes};
  auto normed = ad::layer_norm(tape, h, p.ln1_gain, p.ln1_bias);
  auto attn = pmsa::pmsa_forward(tape, normed, layout, pool, p.attn, p.w_pool,
                                 carried ? *carried : Var<T>{}, opts);
  if (carried && attn.s) *carried = attn.s;
  auto hhat = ad::add(tape, h, attn.h);
  auto y = ad::layer_norm(tape, hhat, p.ln2_gain, p.ln2_bias);
  y = ad::linear(tape, y, p.ffn_w1, p.ffn_b1);
  y = ad::gelu(tape, y);
  y = ad::linear(tape, y, p.ffn_w2, p.ffn_b2);
  return ad::mask_rows(tape, ad::add(tape, hhat, y), std::span<const std::uint8_t>(layout.valid));
}

template <typename T>
Var<T> forward(Tape<T>* tape, const ModelConfig& cfg, const MsptParams<T>& params, const Normalization& norm,
               const Tensor<T>& raw, const balltree::PatchLayout& layout) {
  const std::size_t n = raw.rows(), in = cfg.in_dim();
  if (raw.rank() != 2 || raw.cols() != in)
    throw ConfigError("forward: raw features " + shape_string(raw.shape()) + " do not match in_dim=" +
                      std::to_string(in));
  if (layout.n != n) throw DimensionError("forward: layout built for a different point count");
  if (norm.in_mean.size() != in || norm.out_mean.size() != cfg.out_dim)
    throw ConfigError("forward: normalization statistics do not match the model widths");

  Tensor<T> x(n, in);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < in; ++c)
      x(i, c) = static_cast<T>((static_cast<double>(raw(i, c)) - norm.in_mean[c]) / norm.in_std[c]);
  auto h = embed(tape, params, ad::constant(std::move(x)));
  const auto padded_index = layout.to_padded_index();
  h = ad::gather_rows(tape, h, std::span<const std::int64_t>(padded_index));

  Var<T> carried;
  for (const auto& bp : params.blocks) h = mspt_block(tape, cfg, bp, layout, h, cfg.persistent_supernodes ? &carried : nullptr);

  auto y = ad::layer_norm(tape, h, params.head_ln_gain, params.head_ln_bias);
  y = ad::linear(tape, y, params.head_w, params.head_b);
  y = ad::gather_rows(tape, y, std::span<const std::int64_t>(layout.inverse));
  std::vector<T> scale(cfg.out_dim), shift(cfg.out_dim);
  for (std::size_t c = 0; c < cfg.out_dim; ++c) {
    scale[c] = static_cast<T>(norm.out_std[c]);
    shift[c] = static_cast<T>(norm.out_mean[c]);
  }
  return ad::affine_cols(tape, y, std::span<const T>(scale), std::span<const T>(shift));
}

namespace {

constexpr char kMagic[8] = {'M', 'S', 'P', 'T', 'C', 'K', 'P', 'T'};

void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const Normalization& norm,
                     const MsptParams<T>& params, const json& extra) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  const auto named = params.named();
  for (const auto& [name, v] : named) {
    tensors.push_back({{"name", name}, {"shape", v->value.shape()}, {"offset", offset}});
    offset += v->value.numel() * 4;
  }
  json header{{"format", "mspt-checkpoint"},
              {"version", 1},
              {"config", cfg.to_json()},
              {"normalization", norm.to_json()},
              {"tensors", tensors},
              {"payload_bytes", offset}};
  if (!extra.is_null()) header["extra"] = extra;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, v] : named)
    for (std::size_t i = 0; i < v->value.numel(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v->value[i]));
      for (int b = 0; b < 4; ++b) os.put(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  if (!os) throw FormatError("failed writing checkpoint " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError(path.string() + " is not an MSPT checkpoint");
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (16 + header_len > bytes.size()) throw CorruptionError("checkpoint header is truncated");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::size_t payload = 16 + header_len;

  Checkpoint<T> ck;
  try {
    ck.config = ModelConfig::from_json(header.at("config"));
    ck.norm = Normalization::from_json(header.at("normalization"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is incomplete: ") + e.what());
  }
  if (header.contains("extra")) ck.extra = header["extra"];
  ck.params = init_params<T>(ck.config, 0);
  const auto named = ck.params.named();
  const auto& manifest = header.at("tensors");
  if (manifest.size() != named.size()) throw FormatError("checkpoint tensor count does not match its config");
  for (std::size_t t = 0; t < named.size(); ++t) {
    const auto& entry = manifest[t];
    auto& value = named[t].second->value;
    if (entry.at("name").get<std::string>() != named[t].first ||
        entry.at("shape").get<Shape>() != value.shape())
      throw FormatError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' does not match its config");
    const std::size_t off = payload + entry.at("offset").get<std::size_t>();
    if (off + value.numel() * 4 > bytes.size()) throw CorruptionError("checkpoint payload is truncated");
    for (std::size_t i = 0; i < value.numel(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[off + i * 4 + b]) << (8 * b);
      value[i] = static_cast<T>(std::bit_cast<float>(bits));
    }
  }
  return ck;
}

#define MSPT_INSTANTIATE(T)                                                                                         \
  template struct MsptParams<T>;                                                                                    \
  template MsptParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                        \
  template Var<T> embed<T>(Tape<T>*, const MsptParams<T>&, const Var<T>&);                                          \
  template Var<T> mspt_block<T>(Tape<T>*, const ModelConfig&, const BlockParams<T>&, const balltree::PatchLayout&, \
                                const Var<T>&, Var<T>*);                                                            \
  template Var<T> forward<T>(Tape<T>*, const ModelConfig&, const MsptParams<T>&, const Normalization&,              \
                             const Tensor<T>&, const balltree::PatchLayout&);                                       \
  template void save_checkpoint<T>(const std::filesystem::path&, const ModelConfig&, const Normalization&,          \
                                   const MsptParams<T>&, const json&);                                              \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

MSPT_INSTANTIATE(float)
MSPT_INSTANTIATE(double)

#undef MSPT_INSTANTIATE

}  // namespace mspt::model
