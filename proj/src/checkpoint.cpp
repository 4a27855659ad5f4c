// SPDX-License-Identifier: Apache-2.0
#include "sorbet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint sidecars are written as host little-endian bytes");

namespace sorbet {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kFormat = "sorbet-checkpoint";
constexpr int kVersion = 1;

std::string k_mode_name(Pow2Round m) {
  return m == Pow2Round::ceil ? "ceil" : "round";
}

Pow2Round parse_k_mode(const std::string& s) {
  if (s == "ceil") return Pow2Round::ceil;
  if (s == "round") return Pow2Round::round_nearest;
  throw std::invalid_argument("unknown rounding mode: " + s);
}

std::string layout_name(GroupLayout l) {
  return l == GroupLayout::head_groups ? "head" : "channel";
}

GroupLayout parse_layout(const std::string& s) {
  if (s == "head") return GroupLayout::head_groups;
  if (s == "channel") return GroupLayout::channel_groups;
  throw std::invalid_argument("unknown group layout: " + s);
}

Stage parse_stage(const std::string& s) {
  for (Stage st : {Stage::m1, Stage::m2, Stage::m3, Stage::snn})
    if (stage_name(st) == s) return st;
  throw std::invalid_argument("checkpoint stage not loadable: " + s);
}

// ------------------------------------------------------------------ writer

struct Saver {
  std::filesystem::path dir;
  ordered_json tensors = ordered_json::array();

  void write_file(const std::string& file, const void* data,
                  std::size_t bytes) const {
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file);
    out.write(static_cast<const char*>(data),
              static_cast<std::streamsize>(bytes));
    if (!out) throw std::runtime_error("short write on " + file);
  }

  ordered_json& entry(const std::string& name, const char* dtype,
                      const std::vector<std::size_t>& shape) {
    ordered_json e;
    e["name"] = name;
    e["dtype"] = dtype;
    e["shape"] = shape;
    e["file"] = name + ".bin";
    tensors.push_back(std::move(e));
    return tensors.back();
  }

  void i8(const std::string& name, const std::vector<std::int8_t>& v,
          std::vector<std::size_t> shape) {
    entry(name, "i8", shape);
    write_file(name + ".bin", v.data(), v.size());
  }

  void i64(const std::string& name, const std::vector<std::int64_t>& v,
           std::vector<std::size_t> shape) {
    entry(name, "i64", shape);
    write_file(name + ".bin", v.data(), v.size() * sizeof(std::int64_t));
  }

  void f64(const std::string& name, const std::vector<double>& v,
           std::vector<std::size_t> shape) {
    entry(name, "f64", shape);
    write_file(name + ".bin", v.data(), v.size() * sizeof(double));
  }

  void fixed(const std::string& name, const FixedTensor& t) {
    ordered_json& e = entry(name, "i64", t.shape());
    e["frac_bits"] = t.frac_bits();
    e["mantissa_bits"] = t.mantissa_bits();
    write_file(name + ".bin", t.mantissas().data(),
               t.size() * sizeof(std::int64_t));
  }
};

ordered_json site_json(const ElasticParams& p) {
  ordered_json j;
  j["alpha"] = p.alpha;
  j["beta"] = p.beta;
  j["k_alpha"] = p.k_alpha;
  j["bits"] = p.bits;
  j["max_level"] = p.max_level;
  return j;
}

ElasticParams site_from_json(const ordered_json& j) {
  ElasticParams p;
  p.alpha = j.at("alpha").get<double>();
  p.beta = j.at("beta").get<double>();
  p.k_alpha = j.at("k_alpha").get<int>();
  p.bits = j.at("bits").get<int>();
  p.max_level = j.at("max_level").get<std::int64_t>();
  return p;
}

void save_linear(Saver& sv, const std::string& name, const BinaryLinear& w,
                 ordered_json& scalars) {
  scalars["scale_exponent"] = w.scale_exponent;
  sv.i8(name + ".signs", w.signs, {w.rows, w.cols});
  if (w.out_bias.size() > 0) sv.fixed(name + ".out_bias", w.out_bias);
}

void save_bspn(Saver& sv, const std::string& name, const BspnState& st,
               ordered_json& scalars) {
  scalars["channels"] = st.channels;
  scalars["num_groups"] = st.num_groups;
  scalars["layout"] = layout_name(st.layout);
  scalars["momentum_alpha"] = st.momentum_alpha;
  scalars["pow2_scale_mode"] = st.pow2_scale_mode;
  scalars["frozen"] = st.frozen;
  scalars["frozen_frac_bits"] = st.frozen_frac_bits;
  sv.f64(name + ".gamma", st.gamma, {st.gamma.size()});
  sv.f64(name + ".beta", st.beta, {st.beta.size()});
  sv.f64(name + ".psi", st.psi, {st.psi.size()});
  if (!st.scale_exponents.empty()) {
    std::vector<std::int64_t> se(st.scale_exponents.begin(),
                                 st.scale_exponents.end());
    sv.i64(name + ".scale_exponents", se, {se.size()});
  }
  if (!st.scale_factors.empty())
    sv.f64(name + ".scale_factors", st.scale_factors,
           {st.scale_factors.size()});
  if (!st.beta_mantissas.empty())
    sv.i64(name + ".beta_mantissas", st.beta_mantissas,
           {st.beta_mantissas.size()});
}

// ------------------------------------------------------------------ reader

struct Loader {
  std::filesystem::path dir;
  std::map<std::string, ordered_json> entries;

  const ordered_json* find(const std::string& name) const {
    const auto it = entries.find(name);
    return it == entries.end() ? nullptr : &it->second;
  }

  const ordered_json& need(const std::string& name) const {
    const ordered_json* e = find(name);
    if (!e) throw std::runtime_error("checkpoint tensor missing: " + name);
    return *e;
  }

  std::vector<char> read_file(const ordered_json& e,
                              std::size_t elem_size) const {
    const std::string file = e.at("file").get<std::string>();
    std::size_t n = 1;
    for (const auto& d : e.at("shape")) n *= d.get<std::size_t>();
    std::ifstream in(dir / file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + file);
    std::vector<char> bytes(n * elem_size);
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()) ||
        in.peek() != std::ifstream::traits_type::eof())
      throw std::runtime_error("tensor size mismatch in " + file);
    return bytes;
  }

  template <typename T>
  std::vector<T> typed(const std::string& name, const char* dtype) const {
    const ordered_json& e = need(name);
    if (e.at("dtype").get<std::string>() != dtype)
      throw std::runtime_error("dtype mismatch for " + name);
    const std::vector<char> bytes = read_file(e, sizeof(T));
    std::vector<T> v(bytes.size() / sizeof(T));
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
  }

  std::vector<std::size_t> shape(const std::string& name) const {
    return need(name).at("shape").get<std::vector<std::size_t>>();
  }

  FixedTensor fixed(const std::string& name) const {
    const ordered_json& e = need(name);
    return FixedTensor::from_mantissas(
        typed<std::int64_t>(name, "i64"), shape(name),
        e.at("frac_bits").get<int>(), e.at("mantissa_bits").get<int>());
  }
};

BinaryLinear load_linear(const Loader& ld, const std::string& name,
                         const ordered_json& scalars) {
  BinaryLinear w;
  const std::vector<std::size_t> sh = ld.shape(name + ".signs");
  if (sh.size() != 2) throw std::runtime_error("signs must be 2-d: " + name);
  w.rows = sh[0];
  w.cols = sh[1];
  w.signs = ld.typed<std::int8_t>(name + ".signs", "i8");
  w.scale_exponent = scalars.at("scale_exponent").get<int>();
  if (ld.find(name + ".out_bias")) w.out_bias = ld.fixed(name + ".out_bias");
  w.validate();
  return w;
}

BspnState load_bspn(const Loader& ld, const std::string& name,
                    const ordered_json& scalars) {
  BspnState st;
  st.channels = scalars.at("channels").get<std::size_t>();
  st.num_groups = scalars.at("num_groups").get<std::size_t>();
  st.layout = parse_layout(scalars.at("layout").get<std::string>());
  st.momentum_alpha = scalars.at("momentum_alpha").get<double>();
  st.pow2_scale_mode = scalars.at("pow2_scale_mode").get<bool>();
  st.frozen = scalars.at("frozen").get<bool>();
  st.frozen_frac_bits = scalars.at("frozen_frac_bits").get<int>();
  st.gamma = ld.typed<double>(name + ".gamma", "f64");
  st.beta = ld.typed<double>(name + ".beta", "f64");
  st.psi = ld.typed<double>(name + ".psi", "f64");
  if (ld.find(name + ".scale_exponents")) {
    const auto se = ld.typed<std::int64_t>(name + ".scale_exponents", "i64");
    st.scale_exponents.assign(se.begin(), se.end());
  }
  if (ld.find(name + ".scale_factors"))
    st.scale_factors = ld.typed<double>(name + ".scale_factors", "f64");
  if (ld.find(name + ".beta_mantissas"))
    st.beta_mantissas = ld.typed<std::int64_t>(name + ".beta_mantissas",
                                               "i64");
  st.validate();
  return st;
}

ordered_json config_json(const ModelConfig& c) {
  ordered_json j;
  j["blocks"] = c.blocks;
  j["dim"] = c.dim;
  j["heads"] = c.heads;
  j["ffn_dim"] = c.ffn_dim;
  j["seq_len"] = c.seq_len;
  j["vocab"] = c.vocab;
  j["classes"] = c.classes;
  j["timesteps"] = c.timesteps;
  j["act_bits"] = c.act_bits;
  j["frac_bits"] = c.frac_bits;
  j["clamp_max"] = c.clamp_max;
  j["k_mode"] = k_mode_name(c.k_mode);
  j["pow2_norm"] = c.pow2_norm;
  j["norm_layout"] = layout_name(c.norm_layout);
  j["seed"] = c.seed;
  return j;
}

ModelConfig config_from_json(const ordered_json& j) {
  ModelConfig c;
  c.blocks = j.at("blocks").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.vocab = j.at("vocab").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.timesteps = j.at("timesteps").get<std::size_t>();
  c.act_bits = j.at("act_bits").get<int>();
  c.frac_bits = j.at("frac_bits").get<int>();
  c.clamp_max = j.at("clamp_max").get<double>();
  c.k_mode = parse_k_mode(j.at("k_mode").get<std::string>());
  c.pow2_norm = j.at("pow2_norm").get<bool>();
  c.norm_layout = parse_layout(j.at("norm_layout").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const StageModel& model,
                     const std::filesystem::path& dir) {
  if (model.stage == Stage::m0)
    throw std::invalid_argument("the reference stage has no serialized form");
  model.cfg.validate();
  std::filesystem::create_directories(dir);

  Saver sv{dir, ordered_json::array()};
  ordered_json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["stage"] = stage_name(model.stage);
  manifest["config"] = config_json(model.cfg);

  sv.fixed("embedding", model.embedding);

  ordered_json blocks = ordered_json::array();
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const QuantBlock& qb = model.blocks[b];
    const std::string base = "block" + std::to_string(b);
    ordered_json jb;
    for (const auto& [tag, lin] :
         {std::pair<const char*, const BinaryLinear*>{"wq", &qb.wq},
          {"wk", &qb.wk},
          {"wv", &qb.wv},
          {"wo", &qb.wo},
          {"ffn_in", &qb.ffn_in},
          {"ffn_out", &qb.ffn_out}}) {
      ordered_json js;
      save_linear(sv, base + "." + tag, *lin, js);
      jb[tag] = std::move(js);
    }
    sv.f64(base + ".attn_norm.gamma", qb.attn_norm.gamma,
           {qb.attn_norm.gamma.size()});
    sv.f64(base + ".attn_norm.beta", qb.attn_norm.beta,
           {qb.attn_norm.beta.size()});
    sv.f64(base + ".ffn_norm.gamma", qb.ffn_norm.gamma,
           {qb.ffn_norm.gamma.size()});
    sv.f64(base + ".ffn_norm.beta", qb.ffn_norm.beta,
           {qb.ffn_norm.beta.size()});
    ordered_json ja, jf;
    save_bspn(sv, base + ".attn_bspn", qb.attn_bspn, ja);
    save_bspn(sv, base + ".ffn_bspn", qb.ffn_bspn, jf);
    jb["attn_bspn"] = std::move(ja);
    jb["ffn_bspn"] = std::move(jf);
    ordered_json sites;
    sites["input"] = site_json(qb.sites.input);
    sites["queries"] = site_json(qb.sites.queries);
    sites["attn_out"] = site_json(qb.sites.attn_out);
    sites["ffn_in"] = site_json(qb.sites.ffn_in);
    sites["ffn_act"] = site_json(qb.sites.ffn_act);
    jb["sites"] = std::move(sites);
    blocks.push_back(std::move(jb));
  }
  manifest["blocks"] = std::move(blocks);

  ordered_json jh;
  save_linear(sv, "head", model.head, jh);
  manifest["head"] = std::move(jh);
  manifest["head_site"] = site_json(model.head_site);
  manifest["tensors"] = std::move(sv.tensors);

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("short write on manifest.json");
}

StageModel load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot read manifest.json");
  ordered_json manifest;
  in >> manifest;

  if (manifest.at("format").get<std::string>() != kFormat)
    throw std::runtime_error("not a recognized checkpoint manifest");
  if (manifest.at("version").get<int>() != kVersion)
    throw std::runtime_error("unsupported checkpoint version");

  Loader ld{dir, {}};
  for (const auto& e : manifest.at("tensors"))
    ld.entries.emplace(e.at("name").get<std::string>(), e);

  StageModel m;
  m.stage = parse_stage(manifest.at("stage").get<std::string>());
  m.cfg = config_from_json(manifest.at("config"));
  m.embedding = ld.fixed("embedding");

  const ordered_json& jblocks = manifest.at("blocks");
  if (jblocks.size() != m.cfg.blocks)
    throw std::runtime_error("block count mismatch");
  for (std::size_t b = 0; b < m.cfg.blocks; ++b) {
    const ordered_json& jb = jblocks[b];
    const std::string base = "block" + std::to_string(b);
    QuantBlock qb;
    qb.wq = load_linear(ld, base + ".wq", jb.at("wq"));
    qb.wk = load_linear(ld, base + ".wk", jb.at("wk"));
    qb.wv = load_linear(ld, base + ".wv", jb.at("wv"));
    qb.wo = load_linear(ld, base + ".wo", jb.at("wo"));
    qb.ffn_in = load_linear(ld, base + ".ffn_in", jb.at("ffn_in"));
    qb.ffn_out = load_linear(ld, base + ".ffn_out", jb.at("ffn_out"));
    qb.attn_norm.gamma = ld.typed<double>(base + ".attn_norm.gamma", "f64");
    qb.attn_norm.beta = ld.typed<double>(base + ".attn_norm.beta", "f64");
    qb.ffn_norm.gamma = ld.typed<double>(base + ".ffn_norm.gamma", "f64");
    qb.ffn_norm.beta = ld.typed<double>(base + ".ffn_norm.beta", "f64");
    qb.attn_bspn = load_bspn(ld, base + ".attn_bspn", jb.at("attn_bspn"));
    qb.ffn_bspn = load_bspn(ld, base + ".ffn_bspn", jb.at("ffn_bspn"));
    const ordered_json& sites = jb.at("sites");
    qb.sites.input = site_from_json(sites.at("input"));
    qb.sites.queries = site_from_json(sites.at("queries"));
    qb.sites.attn_out = site_from_json(sites.at("attn_out"));
    qb.sites.ffn_in = site_from_json(sites.at("ffn_in"));
    qb.sites.ffn_act = site_from_json(sites.at("ffn_act"));
    m.blocks.push_back(std::move(qb));
  }

  m.head = load_linear(ld, "head", manifest.at("head"));
  m.head_site = site_from_json(manifest.at("head_site"));
  return m;
}

}  // namespace sorbet
